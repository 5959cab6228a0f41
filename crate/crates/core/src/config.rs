//! YAML run configuration. Section and key names follow the published
//! hyperparameter tables so values can be copied across directly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{FrontEndConfig, GriffinLim};
use crate::diffusion::RepaintJumps;
use crate::error::{Error, Result};
use crate::nn::optim::AdamConfig;
use crate::unet::{EmaConfig, SkipMerge, UNetConfig};
use crate::vocoder::VocoderConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub sample_rate: u32,
    /// Samples per training crop.
    pub audio_length: usize,
    pub audio_channels: usize,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformsSection {
    pub fft_size: usize,
    pub window_length: usize,
    pub hop_length: usize,
    pub mel_frequencies: usize,
    pub feature_scaling_momentum: f64,
    pub feature_scaling_decay: f64,
    pub griffin_lim_iterations: usize,
    #[serde(default = "default_gl_momentum")]
    pub griffin_lim_momentum: f64,
}

fn default_gl_momentum() -> f64 {
    0.99
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSection {
    pub noise_schedule: String,
    pub number_of_training_timesteps: usize,
    pub number_of_sampling_steps: usize,
    #[serde(default)]
    pub eta: f64,
    #[serde(default = "default_jump_length")]
    pub jump_length: usize,
    #[serde(default = "default_jump_length")]
    pub jump_n_sample: usize,
}

fn default_jump_length() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetSection {
    pub base_model_dimension: usize,
    pub timestep_dimension: usize,
    pub mlp_hidden_dimension_factor: usize,
    pub number_of_attention_heads: usize,
    pub dimensionality_factor: Vec<usize>,
    pub dilations: Vec<usize>,
    pub has_attention: Vec<bool>,
    pub has_resampling: Vec<bool>,
    pub blocks_per_resolution: Vec<usize>,
    #[serde(default)]
    pub skip_merge: SkipMerge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmaSection {
    pub start_step: u64,
    pub decay: f64,
    pub update_every_n_steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocoderSection {
    pub model_dimension: usize,
    pub mlp_hidden_dimension_factor: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub optimizer: String,
    pub adam_betas: [f64; 2],
    pub lr_warmup_iterations: u64,
    pub lr_warmup_start_factor: f64,
    /// Accepted for parity with the tables; arithmetic is always 64-bit.
    pub precision: u32,
    pub training_steps: u64,
    #[serde(default)]
    pub seed: u64,
}

/// One model's full configuration. Unused sections are ignored by the
/// command that reads the file (the vocoder ignores `unet`, for instance).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub transforms: TransformsSection,
    pub diffusion: DiffusionSection,
    pub unet: UNetSection,
    pub ema_unet: EmaSection,
    pub vocoder: VocoderSection,
    pub training: TrainingSection,
}

impl ExperimentConfig {
    /// U-Net table values.
    pub fn full_unet() -> Self {
        let u = UNetConfig::full_size();
        Self {
            data: DataSection { sample_rate: 44100, audio_length: 8_387_584, audio_channels: 2, batch_size: 4 },
            transforms: TransformsSection {
                fft_size: 2048,
                window_length: 2048,
                hop_length: 1024,
                mel_frequencies: 128,
                feature_scaling_momentum: 0.001,
                feature_scaling_decay: 0.99,
                griffin_lim_iterations: 200,
                griffin_lim_momentum: 0.99,
            },
            diffusion: DiffusionSection {
                noise_schedule: "cosine".into(),
                number_of_training_timesteps: 1000,
                number_of_sampling_steps: 200,
                eta: 0.0,
                jump_length: 10,
                jump_n_sample: 10,
            },
            unet: UNetSection {
                base_model_dimension: u.base_dim,
                timestep_dimension: u.timestep_dim,
                mlp_hidden_dimension_factor: u.mlp_factor,
                number_of_attention_heads: u.num_heads,
                dimensionality_factor: u.dim_factors,
                dilations: u.dilations,
                has_attention: u.has_attention,
                has_resampling: u.has_resampling,
                blocks_per_resolution: u.blocks_per_resolution,
                skip_merge: u.skip_merge,
            },
            ema_unet: EmaSection { start_step: 2000, decay: 0.995, update_every_n_steps: 10 },
            vocoder: VocoderSection { model_dimension: 256, mlp_hidden_dimension_factor: 4 },
            training: TrainingSection {
                learning_rate: 2e-4,
                optimizer: "adam".into(),
                adam_betas: [0.5, 0.999],
                lr_warmup_iterations: 500,
                lr_warmup_start_factor: 1.0 / 3.0,
                precision: 16,
                training_steps: 110_000,
                seed: 0,
            },
        }
    }

    /// Vocoder table values.
    pub fn full_vocoder() -> Self {
        let mut c = Self::full_unet();
        c.data.audio_length = 523_264;
        c.data.batch_size = 8;
        c.training.training_steps = 40_000;
        c
    }

    /// Desk-scale diffusion run: width 32, 16 mels, 64-frame crops.
    pub fn toy_unet() -> Self {
        let mut c = Self::full_unet();
        let fe = FrontEndConfig::toy();
        c.data = DataSection { sample_rate: fe.sample_rate, audio_length: fe.hop_length * 63, audio_channels: 1, batch_size: 4 };
        c.transforms.fft_size = fe.fft_size;
        c.transforms.window_length = fe.window_length;
        c.transforms.hop_length = fe.hop_length;
        c.transforms.mel_frequencies = fe.n_mels;
        c.transforms.feature_scaling_momentum = 0.01;
        c.diffusion.number_of_sampling_steps = 50;
        let u = UNetConfig::toy();
        c.unet = UNetSection {
            base_model_dimension: u.base_dim,
            timestep_dimension: u.timestep_dim,
            mlp_hidden_dimension_factor: u.mlp_factor,
            number_of_attention_heads: u.num_heads,
            dimensionality_factor: u.dim_factors,
            dilations: u.dilations,
            has_attention: u.has_attention,
            has_resampling: u.has_resampling,
            blocks_per_resolution: u.blocks_per_resolution,
            skip_merge: u.skip_merge,
        };
        c.ema_unet = EmaSection { start_step: 1000, decay: 0.995, update_every_n_steps: 1 };
        c.vocoder = VocoderSection { model_dimension: 64, mlp_hidden_dimension_factor: 4 };
        c.training.learning_rate = 1e-3;
        c.training.lr_warmup_iterations = 100;
        c.training.precision = 64;
        c.training.training_steps = 2000;
        c
    }

    /// Desk-scale vocoder run on the toy front-end.
    pub fn toy_vocoder() -> Self {
        let mut c = Self::toy_unet();
        c.data.batch_size = 8;
        c.training.learning_rate = 2e-3;
        c
    }

    pub fn from_yaml(text: &str) -> Result<Self> {
        let cfg: Self = serde_yaml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_yaml(&std::fs::read_to_string(path)?)
    }

    pub fn to_yaml(&self) -> Result<String> {
        Ok(serde_yaml::to_string(self)?)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn validate(&self) -> Result<()> {
        if self.diffusion.noise_schedule != "cosine" {
            return Err(Error::config(format!("unsupported noise schedule {:?}", self.diffusion.noise_schedule)));
        }
        if self.training.optimizer.to_ascii_lowercase() != "adam" {
            return Err(Error::config(format!("unsupported optimizer {:?}", self.training.optimizer)));
        }
        let t = &self.training;
        if !(t.lr_warmup_start_factor > 0.0 && t.lr_warmup_start_factor <= 1.0) {
            return Err(Error::config("lr_warmup_start_factor must be in (0, 1]"));
        }
        if !(t.learning_rate > 0.0) || t.adam_betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::config("learning rate must be positive and Adam betas in [0, 1)"));
        }
        if ![16, 32, 64].contains(&t.precision) {
            return Err(Error::config(format!("precision must be 16, 32 or 64, got {}", t.precision)));
        }
        if self.data.batch_size == 0 || self.data.audio_channels == 0 || self.data.audio_length == 0 {
            return Err(Error::config("batch size, channel count and audio length must be positive"));
        }
        if self.data.sample_rate == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        if self.diffusion.number_of_training_timesteps == 0
            || self.diffusion.number_of_sampling_steps == 0
            || self.diffusion.number_of_sampling_steps > self.diffusion.number_of_training_timesteps
        {
            return Err(Error::config("sampling steps must be in 1..=training timesteps"));
        }
        if !(0.0..=1.0).contains(&self.diffusion.eta) {
            return Err(Error::config("eta must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn front_end(&self) -> FrontEndConfig {
        FrontEndConfig {
            sample_rate: self.data.sample_rate,
            fft_size: self.transforms.fft_size,
            window_length: self.transforms.window_length,
            hop_length: self.transforms.hop_length,
            n_mels: self.transforms.mel_frequencies,
        }
    }

    pub fn unet_config(&self) -> UNetConfig {
        let u = &self.unet;
        UNetConfig {
            base_dim: u.base_model_dimension,
            timestep_dim: u.timestep_dimension,
            mlp_factor: u.mlp_hidden_dimension_factor,
            num_heads: u.number_of_attention_heads,
            dim_factors: u.dimensionality_factor.clone(),
            dilations: u.dilations.clone(),
            has_attention: u.has_attention.clone(),
            has_resampling: u.has_resampling.clone(),
            blocks_per_resolution: u.blocks_per_resolution.clone(),
            n_mels: self.transforms.mel_frequencies,
            audio_channels: self.data.audio_channels,
            skip_merge: u.skip_merge,
        }
    }

    pub fn vocoder_config(&self) -> VocoderConfig {
        VocoderConfig {
            model_dim: self.vocoder.model_dimension,
            mlp_factor: self.vocoder.mlp_hidden_dimension_factor,
            n_mels: self.transforms.mel_frequencies,
            stft_bins: self.transforms.fft_size / 2 + 1,
        }
    }

    pub fn ema(&self) -> EmaConfig {
        EmaConfig {
            decay: self.ema_unet.decay,
            start_step: self.ema_unet.start_step,
            update_every: self.ema_unet.update_every_n_steps,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.training.adam_betas[0], beta2: self.training.adam_betas[1], ..AdamConfig::default() }
    }

    pub fn griffin_lim(&self) -> GriffinLim {
        GriffinLim {
            iterations: self.transforms.griffin_lim_iterations,
            momentum: self.transforms.griffin_lim_momentum,
            seed: Some(0),
        }
    }

    pub fn jumps(&self) -> RepaintJumps {
        RepaintJumps { jump_length: self.diffusion.jump_length, jump_n_sample: self.diffusion.jump_n_sample }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yaml_round_trip() {
        for cfg in [
            ExperimentConfig::full_unet(),
            ExperimentConfig::full_vocoder(),
            ExperimentConfig::toy_unet(),
            ExperimentConfig::toy_vocoder(),
        ] {
            let text = cfg.to_yaml().unwrap();
            assert_eq!(ExperimentConfig::from_yaml(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn table_values() {
        let c = ExperimentConfig::full_unet();
        assert_eq!(c.training.learning_rate, 0.0002);
        assert_eq!(c.training.adam_betas, [0.5, 0.999]);
        assert_eq!(c.ema().decay, 0.995);
        assert_eq!(c.unet_config(), UNetConfig::full_size());
        assert_eq!(ExperimentConfig::full_vocoder().vocoder_config(), VocoderConfig::full_size());
        assert_eq!(c.front_end(), FrontEndConfig::full_size());
    }

    #[test]
    fn rejects_bad_values_and_unknown_keys() {
        let mut c = ExperimentConfig::toy_unet();
        c.diffusion.number_of_sampling_steps = 2000;
        assert!(matches!(ExperimentConfig::from_yaml(&c.to_yaml().unwrap()), Err(Error::InvalidConfig(_))));
        let text = ExperimentConfig::toy_unet().to_yaml().unwrap().replace("batch_size", "batch_sise");
        assert!(matches!(ExperimentConfig::from_yaml(&text), Err(Error::Yaml(_))));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::toy_unet();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.training.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
