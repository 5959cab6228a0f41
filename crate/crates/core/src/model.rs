//! Trained-model bundles: architecture, weights and the feature scaler fitted
//! alongside them.

use std::path::Path;

use ndarray::{Array3, ArrayD, Ix3};

use crate::audio::AudioBuffer;
use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::config::ExperimentConfig;
use crate::diffusion::{cosine_schedule, ClampedX0, NoiseSchedule};
use crate::dsp::{FrontEnd, Spectrogram, SpectrogramKind};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scaling::{FeatureScaler, ScalerMode};
use crate::unet::{Denoiser, UNet};
use crate::vocoder::Vocoder;

fn scaler_for(config: &ExperimentConfig) -> Result<FeatureScaler> {
    FeatureScaler::new(
        config.transforms.mel_frequencies,
        config.transforms.feature_scaling_momentum,
        config.transforms.feature_scaling_decay,
    )
}

fn to3(a: ArrayD<f64>) -> Result<Array3<f64>> {
    a.into_dimensionality::<Ix3>().map_err(|e| Error::shape(e.to_string()))
}

/// Mel-spectrogram diffusion model with its EMA weights.
#[derive(Clone, Debug)]
pub struct DiffusionModel {
    pub config: ExperimentConfig,
    pub front: FrontEnd,
    pub unet: UNet,
    pub params: ParamStore,
    pub ema: ParamStore,
    pub scaler: FeatureScaler,
    pub schedule: NoiseSchedule,
    pub step: u64,
}

impl DiffusionModel {
    pub fn new(config: ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let unet = UNet::new(config.unet_config())?;
        let params = unet.init_params(seed);
        Ok(Self {
            front: FrontEnd::new(config.front_end())?,
            schedule: cosine_schedule(config.diffusion.number_of_training_timesteps)?,
            scaler: scaler_for(&config)?,
            ema: params.clone(),
            params,
            unet,
            config,
            step: 0,
        })
    }

    /// Sampling network, bound to the EMA weights.
    pub fn denoiser(&self) -> Denoiser<'_> {
        Denoiser { unet: &self.unet, params: &self.ema }
    }

    /// The sampling predictor: EMA weights with the implied clean sample
    /// clamped to the scaler's output range.
    pub fn sampler(&self) -> ClampedX0<'_, Denoiser<'_>> {
        ClampedX0 {
            inner: self.denoiser(),
            sched: &self.schedule,
            range: (self.scaler.minmax.y_min, self.scaler.minmax.y_max),
        }
    }

    /// Frame counts must be a multiple of this.
    pub fn frame_multiple(&self) -> usize {
        1 << self.unet.config().downsamplings()
    }

    pub fn check_frames(&self, frames: usize) -> Result<()> {
        let m = self.frame_multiple();
        if frames == 0 || frames % m != 0 {
            return Err(Error::config(format!("frame count {frames} must be a positive multiple of {m}")));
        }
        Ok(())
    }

    /// Linear mel `[c, f, l]` to the model's normalized space, without
    /// touching the scaler statistics.
    pub fn normalize(&self, mel: &Array3<f64>) -> Result<Array3<f64>> {
        to3(self.scaler.apply(&mel.clone().into_dyn())?)
    }

    /// Inverse of [`Self::normalize`]. Values are first clamped to the
    /// scaler's output range, which is where all training data lies.
    pub fn denormalize(&self, x: &Array3<f64>) -> Result<Array3<f64>> {
        let (lo, hi) = (self.scaler.minmax.y_min, self.scaler.minmax.y_max);
        to3(self.scaler.inverse(&x.mapv(|v| v.clamp(lo, hi)).into_dyn())?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: CheckpointKind::Diffusion,
            step: self.step,
            config: self.config.clone(),
            scaler: self.scaler.clone(),
            groups: vec![("params".into(), self.params.clone()), ("ema".into(), self.ema.clone())],
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.expect_kind(CheckpointKind::Diffusion)?;
        let mut model = Self::new(ckpt.config.clone(), 0)?;
        let params = ckpt.group("params")?;
        let ema = ckpt.group("ema")?;
        model.params.ensure_same_layout(params).map_err(|e| Error::Integrity(e.to_string()))?;
        model.params.ensure_same_layout(ema).map_err(|e| Error::Integrity(e.to_string()))?;
        model.params = params.clone();
        model.ema = ema.clone();
        model.scaler = ckpt.scaler;
        model.scaler.set_mode(ScalerMode::Inference);
        model.step = ckpt.step;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>, overwrite: bool) -> Result<()> {
        self.to_checkpoint().save(path, overwrite)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

/// Mel-to-magnitude network with its own feature scaler.
#[derive(Clone, Debug)]
pub struct VocoderModel {
    pub config: ExperimentConfig,
    pub front: FrontEnd,
    pub vocoder: Vocoder,
    pub params: ParamStore,
    pub scaler: FeatureScaler,
    pub step: u64,
}

impl VocoderModel {
    pub fn new(config: ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let vocoder = Vocoder::new(config.vocoder_config())?;
        Ok(Self {
            front: FrontEnd::new(config.front_end())?,
            params: vocoder.init_params(seed),
            scaler: scaler_for(&config)?,
            vocoder,
            config,
            step: 0,
        })
    }

    /// Predicted magnitude `[c, fft/2 + 1, l]` for a linear mel `[c, f, l]`.
    pub fn magnitude(&self, mel: &Array3<f64>) -> Result<Array3<f64>> {
        let x = to3(self.scaler.apply(&mel.clone().into_dyn())?)?;
        let spec = Spectrogram::new(x, SpectrogramKind::NormalizedMel, self.config.data.sample_rate);
        Ok(self.vocoder.magnitude(&self.params, &spec)?.values)
    }

    /// Linear mel to waveform through the vocoder and Griffin-Lim.
    pub fn render(&self, mel: &Array3<f64>) -> Result<AudioBuffer> {
        let mag = Spectrogram::new(self.magnitude(mel)?, SpectrogramKind::Magnitude, self.config.data.sample_rate);
        Ok(self.config.griffin_lim().run(&mag, &self.front.stft)?.audio)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: CheckpointKind::Vocoder,
            step: self.step,
            config: self.config.clone(),
            scaler: self.scaler.clone(),
            groups: vec![("params".into(), self.params.clone())],
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.expect_kind(CheckpointKind::Vocoder)?;
        let mut model = Self::new(ckpt.config.clone(), 0)?;
        let params = ckpt.group("params")?;
        model.params.ensure_same_layout(params).map_err(|e| Error::Integrity(e.to_string()))?;
        model.params = params.clone();
        model.scaler = ckpt.scaler;
        model.scaler.set_mode(ScalerMode::Inference);
        model.step = ckpt.step;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>, overwrite: bool) -> Result<()> {
        self.to_checkpoint().save(path, overwrite)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}
