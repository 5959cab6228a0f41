//! Time-frequency front-end: STFT, mel projection, Griffin-Lim and the two
//! spectral losses used to train the vocoder.

mod frontend;
mod griffin_lim;
mod loss;
mod mel;
mod stft;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

pub use frontend::{FrontEnd, FrontEndConfig};
pub use griffin_lim::{griffin_lim, GriffinLim, GriffinLimReport};
pub use loss::{log_magnitude_loss, spectral_convergence_loss, LOG_MAGNITUDE_EPS, SPECTRAL_CONVERGENCE_EPS};
pub use mel::{build_mel_filterbank, hz_to_mel, mel_spectrogram, mel_to_hz, MelFilterbank};
pub use stft::{hann_window, istft, stft, ComplexSpectrogram, StftConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectrogramKind {
    Magnitude,
    LogMagnitude,
    Mel,
    NormalizedMel,
}

impl SpectrogramKind {
    pub fn name(self) -> &'static str {
        match self {
            SpectrogramKind::Magnitude => "magnitude",
            SpectrogramKind::LogMagnitude => "log-magnitude",
            SpectrogramKind::Mel => "mel",
            SpectrogramKind::NormalizedMel => "normalized-mel",
        }
    }
}

/// Real-valued spectrogram, `[channels, bins, frames]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub values: Array3<f64>,
    pub kind: SpectrogramKind,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn new(values: Array3<f64>, kind: SpectrogramKind, sample_rate: u32) -> Self {
        Self { values, kind, sample_rate }
    }

    pub fn channels(&self) -> usize {
        self.values.dim().0
    }

    pub fn bins(&self) -> usize {
        self.values.dim().1
    }

    pub fn frames(&self) -> usize {
        self.values.dim().2
    }

    pub(crate) fn expect_kind(&self, kind: SpectrogramKind) -> crate::Result<()> {
        if self.kind != kind {
            return Err(crate::Error::Kind { expected: kind.name().into(), found: self.kind.name().into() });
        }
        Ok(())
    }
}
