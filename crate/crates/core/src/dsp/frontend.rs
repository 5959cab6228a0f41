use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::mel::{build_mel_filterbank, MelFilterbank};
use super::stft::{stft, StftConfig};
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Analysis settings shared by the diffusion model and the vocoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontEndConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub window_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
}

impl FrontEndConfig {
    pub fn full_size() -> Self {
        Self { sample_rate: 44100, fft_size: 2048, window_length: 2048, hop_length: 1024, n_mels: 128 }
    }

    pub fn toy() -> Self {
        Self { sample_rate: 22050, fft_size: 256, window_length: 256, hop_length: 128, n_mels: 16 }
    }
}

/// Magnitude STFT and mel projection for one [`FrontEndConfig`].
#[derive(Clone, Debug)]
pub struct FrontEnd {
    pub config: FrontEndConfig,
    pub stft: StftConfig,
    pub filterbank: MelFilterbank,
}

impl FrontEnd {
    pub fn new(config: FrontEndConfig) -> Result<Self> {
        if config.sample_rate == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        let stft = StftConfig::hann(config.fft_size, config.window_length, config.hop_length)?;
        let filterbank = build_mel_filterbank(config.n_mels, config.fft_size, config.sample_rate)?;
        Ok(Self { config, stft, filterbank })
    }

    pub fn n_freqs(&self) -> usize {
        self.stft.n_freqs()
    }

    pub fn frames_for(&self, samples: usize) -> usize {
        self.stft.frame_count(samples)
    }

    /// Samples whose analysis yields exactly `frames` frames.
    pub fn samples_for(&self, frames: usize) -> usize {
        self.stft.inverse_len(frames)
    }

    fn check_rate(&self, audio: &AudioBuffer) -> Result<()> {
        if audio.sample_rate() != self.config.sample_rate {
            return Err(Error::input(format!(
                "audio is sampled at {} Hz, model expects {} Hz",
                audio.sample_rate(),
                self.config.sample_rate
            )));
        }
        Ok(())
    }

    /// `[c, fft/2 + 1, frames]`.
    pub fn magnitude(&self, audio: &AudioBuffer) -> Result<Array3<f64>> {
        self.check_rate(audio)?;
        Ok(stft(audio, &self.stft)?.magnitude())
    }

    /// `[c, n_mels, frames]` linear mel magnitudes.
    pub fn mel(&self, audio: &AudioBuffer) -> Result<Array3<f64>> {
        self.filterbank.apply(&self.magnitude(audio)?)
    }
}
