use std::f64::consts::PI;

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Framing parameters for the short-time Fourier transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub window_length: usize,
    pub hop_length: usize,
    pub window: Vec<f64>,
    pub centered: bool,
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).collect()
}

impl StftConfig {
    /// Centered transform with a periodic Hann window.
    pub fn hann(fft_size: usize, window_length: usize, hop_length: usize) -> Result<Self> {
        let cfg = Self { fft_size, window_length, hop_length, window: hann_window(window_length), centered: true };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop_length == 0 || self.hop_length > self.window_length || self.window_length > self.fft_size {
            return Err(Error::config(format!(
                "need 0 < hop ({}) <= window ({}) <= fft size ({})",
                self.hop_length, self.window_length, self.fft_size
            )));
        }
        if self.window.len() != self.window_length {
            return Err(Error::config("window array length differs from window_length"));
        }
        if self.window.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::config("window values must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn n_freqs(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if self.centered {
            len / self.hop_length + 1
        } else if len < self.fft_size {
            0
        } else {
            (len - self.fft_size) / self.hop_length + 1
        }
    }

    /// Samples produced by the inverse transform of `frames` frames.
    pub fn inverse_len(&self, frames: usize) -> usize {
        if frames == 0 {
            return 0;
        }
        let full = self.fft_size + self.hop_length * (frames - 1);
        if self.centered {
            full - 2 * (self.fft_size / 2)
        } else {
            full
        }
    }

    /// Window zero-padded symmetrically to `fft_size`.
    fn padded_window(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.fft_size];
        let offset = (self.fft_size - self.window_length) / 2;
        w[offset..offset + self.window_length].copy_from_slice(&self.window);
        w
    }
}

/// Complex STFT coefficients, `[channels, n_freqs, frames]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    pub values: Array3<Complex64>,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn magnitude(&self) -> Array3<f64> {
        self.values.mapv(|c| c.norm())
    }

    pub fn frames(&self) -> usize {
        self.values.dim().2
    }
}

fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn pad_reflect(x: &[f64], pad: usize) -> Vec<f64> {
    (0..x.len() + 2 * pad).map(|i| x[reflect_index(i as isize - pad as isize, x.len())]).collect()
}

pub fn stft(audio: &AudioBuffer, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if audio.is_empty() {
        return Err(Error::input("cannot transform empty audio"));
    }
    let frames = cfg.frame_count(audio.len());
    if frames == 0 {
        return Err(Error::input(format!("uncentered STFT needs at least {} samples", cfg.fft_size)));
    }
    let n = cfg.fft_size;
    let window = cfg.padded_window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut out = Array3::<Complex64>::zeros((audio.channels(), cfg.n_freqs(), frames));
    let mut buf = vec![Complex64::default(); n];
    for (ch, row) in audio.samples().axis_iter(Axis(0)).enumerate() {
        let row = row.to_vec();
        let signal = if cfg.centered { pad_reflect(&row, n / 2) } else { row };
        for f in 0..frames {
            let start = f * cfg.hop_length;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(signal[start + k] * window[k], 0.0);
            }
            fft.process(&mut buf);
            for (bin, v) in buf.iter().take(cfg.n_freqs()).enumerate() {
                out[[ch, bin, f]] = *v;
            }
        }
    }
    Ok(ComplexSpectrogram { values: out, sample_rate: audio.sample_rate() })
}

/// Overlap-add inverse with squared-window normalization.
pub fn istft(spec: &ComplexSpectrogram, cfg: &StftConfig) -> Result<AudioBuffer> {
    cfg.validate()?;
    let (channels, bins, frames) = spec.values.dim();
    if bins != cfg.n_freqs() {
        return Err(Error::shape(format!("spectrogram has {bins} bins, config expects {}", cfg.n_freqs())));
    }
    let n = cfg.fft_size;
    let window = cfg.padded_window();
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let full = if frames == 0 { 0 } else { n + cfg.hop_length * (frames - 1) };
    let mut envelope = vec![0.0; full];
    for f in 0..frames {
        for k in 0..n {
            envelope[f * cfg.hop_length + k] += window[k] * window[k];
        }
    }
    let trim = if cfg.centered { n / 2 } else { 0 };
    let out_len = cfg.inverse_len(frames);
    let mut out = Array2::<f64>::zeros((channels, out_len));
    let mut buf = vec![Complex64::default(); n];
    for ch in 0..channels {
        let mut acc = vec![0.0; full];
        for f in 0..frames {
            for (bin, b) in buf.iter_mut().enumerate().take(bins) {
                *b = spec.values[[ch, bin, f]];
            }
            // Hermitian completion; DC and Nyquist are taken as real.
            buf[0].im = 0.0;
            if n % 2 == 0 {
                buf[n / 2].im = 0.0;
            }
            for bin in bins..n {
                buf[bin] = buf[n - bin].conj();
            }
            ifft.process(&mut buf);
            let start = f * cfg.hop_length;
            for k in 0..n {
                acc[start + k] += buf[k].re / n as f64 * window[k];
            }
        }
        for (t, o) in out.row_mut(ch).iter_mut().enumerate() {
            let env = envelope[t + trim];
            *o = if env > 1e-11 { acc[t + trim] / env } else { 0.0 };
        }
    }
    AudioBuffer::new(out, spec.sample_rate)
}
