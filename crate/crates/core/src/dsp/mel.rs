use ndarray::{Array2, Array3, Axis};

use super::stft::{stft, StftConfig};
use super::{Spectrogram, SpectrogramKind};
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    /// `[n_mels, fft_size / 2 + 1]`
    pub weights: Array2<f64>,
    pub f_min: f64,
    pub f_max: f64,
    pub sample_rate: u32,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_freqs(&self) -> usize {
        self.weights.ncols()
    }

    /// Peak frequency of each filter in Hz.
    pub fn center_frequencies(&self) -> Vec<f64> {
        let (m_min, m_max) = (hz_to_mel(self.f_min), hz_to_mel(self.f_max));
        let step = (m_max - m_min) / (self.n_mels() + 1) as f64;
        (1..=self.n_mels()).map(|i| mel_to_hz(m_min + step * i as f64)).collect()
    }

    /// Projects `[c, n_freqs, l]` magnitudes to `[c, n_mels, l]`.
    pub fn apply(&self, magnitude: &Array3<f64>) -> Result<Array3<f64>> {
        let (c, f, l) = magnitude.dim();
        if f != self.n_freqs() {
            return Err(Error::shape(format!("magnitude has {f} bins, filterbank expects {}", self.n_freqs())));
        }
        let mut out = Array3::zeros((c, self.n_mels(), l));
        for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(magnitude.axis_iter(Axis(0))) {
            dst.assign(&self.weights.dot(&src));
        }
        Ok(out)
    }
}

pub fn build_mel_filterbank(n_mels: usize, fft_size: usize, sample_rate: u32) -> Result<MelFilterbank> {
    let n_freqs = fft_size / 2 + 1;
    if n_mels == 0 || n_mels > n_freqs {
        return Err(Error::config(format!("n_mels must be in 1..={n_freqs}, got {n_mels}")));
    }
    let f_min = 0.0;
    let f_max = sample_rate as f64 / 2.0;
    let (m_min, m_max) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let points: Vec<f64> =
        (0..n_mels + 2).map(|i| mel_to_hz(m_min + (m_max - m_min) * i as f64 / (n_mels + 1) as f64)).collect();
    let bin_hz = |k: usize| f_max * k as f64 / (n_freqs - 1) as f64;
    let weights = Array2::from_shape_fn((n_mels, n_freqs), |(m, k)| {
        let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
        let f = bin_hz(k);
        let rising = (f - lo) / (mid - lo);
        let falling = (hi - f) / (hi - mid);
        rising.min(falling).max(0.0)
    });
    if let Some(row) = weights.axis_iter(Axis(0)).position(|r| r.iter().all(|&w| w == 0.0)) {
        return Err(Error::config(format!(
            "mel filter {row} covers no STFT bin; use fewer mels or a larger FFT ({n_mels} mels, fft {fft_size})"
        )));
    }
    Ok(MelFilterbank { weights, f_min, f_max, sample_rate })
}

pub fn mel_spectrogram(audio: &AudioBuffer, cfg: &StftConfig, fb: &MelFilterbank) -> Result<Spectrogram> {
    let spec = stft(audio, cfg)?;
    let values = fb.apply(&spec.magnitude())?;
    Ok(Spectrogram { values, kind: SpectrogramKind::Mel, sample_rate: audio.sample_rate() })
}
