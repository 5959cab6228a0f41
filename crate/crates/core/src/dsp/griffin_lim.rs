use ndarray::{Array3, Zip};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::spectral_convergence_loss;
use super::stft::{istft, stft, ComplexSpectrogram, StftConfig};
use super::{Spectrogram, SpectrogramKind};
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Fast Griffin-Lim phase reconstruction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GriffinLim {
    pub iterations: usize,
    /// Extrapolation weight; 0 gives the classic algorithm.
    pub momentum: f64,
    /// Seed of the initial random phase; `None` starts from zero phase.
    pub seed: Option<u64>,
}

impl Default for GriffinLim {
    fn default() -> Self {
        Self { iterations: 200, momentum: 0.99, seed: Some(0) }
    }
}

#[derive(Clone, Debug)]
pub struct GriffinLimReport {
    /// Best iterate found.
    pub audio: AudioBuffer,
    /// Spectral convergence of the returned audio against the target.
    pub convergence: f64,
    /// Spectral convergence after each iteration.
    pub history: Vec<f64>,
}

pub fn griffin_lim(mag: &Spectrogram, cfg: &StftConfig, iterations: usize, momentum: f64) -> Result<AudioBuffer> {
    GriffinLim { iterations, momentum, ..Default::default() }.run(mag, cfg).map(|r| r.audio)
}

impl GriffinLim {
    pub fn run(&self, mag: &Spectrogram, cfg: &StftConfig) -> Result<GriffinLimReport> {
        mag.expect_kind(SpectrogramKind::Magnitude)?;
        if mag.values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::input("Griffin-Lim needs finite non-negative magnitudes"));
        }
        if !(0.0..1.0 + 1e-12).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} outside [0, 1]", self.momentum)));
        }
        let target = &mag.values;
        let mut angles = match self.seed {
            Some(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Array3::from_shape_simple_fn(target.raw_dim(), || {
                    Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))
                })
            }
            None => Array3::from_elem(target.raw_dim(), Complex64::new(1.0, 0.0)),
        };
        let weight = self.momentum / (1.0 + self.momentum);
        let mut previous = Array3::<Complex64>::zeros(target.raw_dim());
        let mut history = Vec::with_capacity(self.iterations);
        let mut best: Option<(f64, AudioBuffer)> = None;

        let synthesize = |angles: &Array3<Complex64>| -> Result<AudioBuffer> {
            let values = Zip::from(target).and(angles).map_collect(|&m, &a| a * m);
            istft(&ComplexSpectrogram { values, sample_rate: mag.sample_rate }, cfg)
        };

        for _ in 0..self.iterations {
            let inverse = synthesize(&angles)?;
            let rebuilt = stft(&inverse, cfg)?;
            let sc = spectral_convergence_loss(target, &rebuilt.magnitude())?;
            history.push(sc);
            if best.as_ref().is_none_or(|(b, _)| sc < *b) {
                best = Some((sc, inverse));
            }
            Zip::from(&mut angles).and(&rebuilt.values).and(&previous).for_each(|a, &r, &p| {
                let v = r - p * weight;
                *a = v / (v.norm() + 1e-16);
            });
            previous = rebuilt.values;
        }

        let last = synthesize(&angles)?;
        if last.is_empty() {
            return Ok(GriffinLimReport { audio: last, convergence: 0.0, history });
        }
        let last_sc = spectral_convergence_loss(target, &stft(&last, cfg)?.magnitude())?;
        let (convergence, audio) = match best {
            Some((b, audio)) if b <= last_sc => (b, audio),
            _ => (last_sc, last),
        };
        Ok(GriffinLimReport { audio, convergence, history })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, secs: f64, sr: u32) -> AudioBuffer {
        let n = (secs * sr as f64) as usize;
        AudioBuffer::mono((0..n).map(|t| 0.5 * (std::f64::consts::TAU * freq * t as f64 / sr as f64).sin()).collect(), sr)
            .unwrap()
    }

    fn magnitude(audio: &AudioBuffer, cfg: &StftConfig) -> Spectrogram {
        Spectrogram::new(stft(audio, cfg).unwrap().magnitude(), SpectrogramKind::Magnitude, audio.sample_rate())
    }

    #[test]
    fn rejects_wrong_kind_and_negative_values() {
        let cfg = StftConfig::hann(64, 64, 32).unwrap();
        let mut m = magnitude(&tone(440.0, 0.05, 8000), &cfg);
        m.kind = SpectrogramKind::Mel;
        assert!(matches!(griffin_lim(&m, &cfg, 1, 0.0), Err(Error::Kind { .. })));
        m.kind = SpectrogramKind::Magnitude;
        m.values[[0, 0, 0]] = -1.0;
        assert!(matches!(griffin_lim(&m, &cfg, 1, 0.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn zero_iterations_is_a_single_projection() {
        let cfg = StftConfig::hann(256, 256, 128).unwrap();
        let m = magnitude(&tone(440.0, 0.2, 8000), &cfg);
        let report = GriffinLim { iterations: 0, ..Default::default() }.run(&m, &cfg).unwrap();
        assert!(report.history.is_empty());
        assert_eq!(report.audio.len(), cfg.inverse_len(m.frames()));
    }

    #[test]
    fn best_iterate_never_regresses() {
        let cfg = StftConfig::hann(256, 256, 128).unwrap();
        let m = magnitude(&tone(440.0, 0.3, 8000), &cfg);
        for momentum in [0.0, 0.99] {
            let report = GriffinLim { iterations: 30, momentum, seed: Some(4) }.run(&m, &cfg).unwrap();
            let min_hist = report.history.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(report.convergence <= min_hist + 1e-12);
            assert!(report.convergence < report.history[0]);
        }
    }
}
