//! Mel-token U-Net noise predictor and EMA weight tracking.

mod ema;
pub mod layers;

use ndarray::{ArrayD, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{NoiseModel, NoisePredictor};
use crate::error::{Error, Result};
use crate::nn::{Backend, Eager, ParamStore};
use layers::{
    declare_all, Detokenizer, Downsample, LinearAttention, ParamSpec, Pointwise, ResidualBlock, TimestepMlp, Tokenizer,
    Upsample,
};

pub use ema::{ema_update, EmaConfig};

/// How a decoder block consumes the matching encoder activation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipMerge {
    /// Concatenate and feed the block a doubled feature count; the block's
    /// residual projection maps it back.
    #[default]
    BlockInput,
    /// Concatenate and project back with a separate 1×1 convolution.
    Projection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub base_dim: usize,
    pub timestep_dim: usize,
    pub mlp_factor: usize,
    pub num_heads: usize,
    pub dim_factors: Vec<usize>,
    pub dilations: Vec<usize>,
    pub has_attention: Vec<bool>,
    pub has_resampling: Vec<bool>,
    pub blocks_per_resolution: Vec<usize>,
    pub n_mels: usize,
    pub audio_channels: usize,
    #[serde(default)]
    pub skip_merge: SkipMerge,
}

impl UNetConfig {
    /// The full-size configuration: width 256, seven resolutions.
    pub fn full_size() -> Self {
        Self {
            base_dim: 256,
            timestep_dim: 128,
            mlp_factor: 4,
            num_heads: 8,
            dim_factors: vec![1; 7],
            dilations: vec![1; 7],
            has_attention: vec![false, false, false, false, false, true, true],
            has_resampling: vec![true, true, true, true, true, true, false],
            blocks_per_resolution: vec![2; 7],
            n_mels: 128,
            audio_channels: 2,
            skip_merge: SkipMerge::BlockInput,
        }
    }

    /// Width 32 over 16 mels with three resolutions.
    pub fn toy() -> Self {
        Self {
            base_dim: 32,
            timestep_dim: 32,
            mlp_factor: 2,
            num_heads: 4,
            dim_factors: vec![1; 3],
            dilations: vec![1; 3],
            has_attention: vec![false, false, true],
            has_resampling: vec![true, true, false],
            blocks_per_resolution: vec![2; 3],
            n_mels: 16,
            audio_channels: 1,
            skip_merge: SkipMerge::BlockInput,
        }
    }

    pub fn levels(&self) -> usize {
        self.dim_factors.len()
    }

    pub fn dim(&self, level: usize) -> usize {
        self.base_dim * self.dim_factors[level]
    }

    /// Number of time-halving stages; input frames must be a multiple of `2^n`.
    pub fn downsamplings(&self) -> usize {
        self.has_resampling.iter().filter(|&&r| r).count()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.levels();
        if r == 0 {
            return Err(Error::config("U-Net needs at least one resolution"));
        }
        let lens = [self.dilations.len(), self.has_attention.len(), self.has_resampling.len(), self.blocks_per_resolution.len()];
        if lens.iter().any(|&n| n != r) {
            return Err(Error::config(format!("per-resolution lists must all have {r} entries, got {lens:?}")));
        }
        if self.dim_factors.iter().chain(&self.dilations).chain(&self.blocks_per_resolution).any(|&v| v == 0)
            || self.mlp_factor == 0
        {
            return Err(Error::config("dimension factors, dilations, block counts and the MLP factor must be at least 1"));
        }
        if self.n_mels == 0 || self.base_dim < 2 * self.n_mels {
            return Err(Error::config(format!(
                "base dim {} must be at least twice the mel count {}",
                self.base_dim, self.n_mels
            )));
        }
        if self.timestep_dim < 2 || self.timestep_dim % 2 != 0 {
            return Err(Error::config(format!("timestep dim must be even and at least 2, got {}", self.timestep_dim)));
        }
        if self.has_resampling[r - 1] {
            return Err(Error::config("the deepest resolution cannot resample"));
        }
        for level in 0..r {
            if self.has_attention[level] && (self.num_heads == 0 || self.dim(level) % self.num_heads != 0) {
                return Err(Error::config(format!(
                    "resolution {level}: width {} is not divisible by {} heads",
                    self.dim(level),
                    self.num_heads
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Stage {
    merge: Option<Pointwise>,
    block: ResidualBlock,
    attention: Option<LinearAttention>,
}

#[derive(Clone, Debug)]
struct Level {
    stages: Vec<Stage>,
    /// Downsample after an encoder level, upsample after a decoder level.
    down: Option<Downsample>,
    up: Option<Upsample>,
}

/// The noise-prediction network. Parameters live in a separate
/// [`ParamStore`] so the same model can run on online and EMA weights.
#[derive(Clone, Debug)]
pub struct UNet {
    config: UNetConfig,
    tokenizer: Tokenizer,
    detokenizer: Detokenizer,
    time: TimestepMlp,
    encoder: Vec<Level>,
    decoder: Vec<Level>,
}

impl UNet {
    pub fn new(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let k = config.timestep_dim;
        let attention = |prefix: String, level: usize| -> Result<Option<LinearAttention>> {
            config.has_attention[level].then(|| LinearAttention::new(prefix, config.dim(level), config.num_heads)).transpose()
        };
        let mut encoder = Vec::new();
        let mut width = config.base_dim;
        for level in 0..config.levels() {
            let dim = config.dim(level);
            let mut stages = Vec::new();
            for j in 0..config.blocks_per_resolution[level] {
                let p = format!("enc.{level}.{j}");
                let block = ResidualBlock {
                    prefix: format!("{p}.block"),
                    d_in: width,
                    d_out: dim,
                    mlp_factor: config.mlp_factor,
                    dilation: config.dilations[level],
                    timestep_dim: Some(k),
                };
                stages.push(Stage { merge: None, block, attention: attention(format!("{p}.attn"), level)? });
                width = dim;
            }
            let down = config.has_resampling[level].then(|| Downsample { prefix: format!("enc.{level}.down"), dim });
            encoder.push(Level { stages, down, up: None });
        }

        let mut decoder = Vec::new();
        for level in (0..config.levels()).rev() {
            let dim = config.dim(level);
            let mut stages = Vec::new();
            for j in 0..config.blocks_per_resolution[level] {
                let p = format!("dec.{level}.{j}");
                let joined = width + dim;
                let (merge, d_in) = match config.skip_merge {
                    SkipMerge::BlockInput => (None, joined),
                    SkipMerge::Projection => {
                        (Some(Pointwise { prefix: format!("{p}.merge"), d_in: joined, d_out: dim }), dim)
                    }
                };
                let block = ResidualBlock {
                    prefix: format!("{p}.block"),
                    d_in,
                    d_out: dim,
                    mlp_factor: config.mlp_factor,
                    dilation: config.dilations[level],
                    timestep_dim: Some(k),
                };
                stages.push(Stage { merge, block, attention: attention(format!("{p}.attn"), level)? });
                width = dim;
            }
            let up = (level > 0 && config.has_resampling[level - 1]).then(|| {
                let d_out = config.dim(level - 1);
                Upsample { prefix: format!("dec.{level}.up"), d_in: dim, d_out }
            });
            if let Some(u) = &up {
                width = u.d_out;
            }
            decoder.push(Level { stages, down: None, up });
        }

        Ok(Self {
            tokenizer: Tokenizer { prefix: "tok".into(), bins: config.n_mels, dim: config.base_dim },
            detokenizer: Detokenizer { prefix: "detok".into(), dim: width, bins: config.n_mels },
            time: TimestepMlp { prefix: "time".into(), dim: k },
            encoder,
            decoder,
            config,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = self.tokenizer.param_specs();
        out.extend(self.time.param_specs());
        for level in self.encoder.iter().chain(&self.decoder) {
            for stage in &level.stages {
                if let Some(m) = &stage.merge {
                    out.extend(m.param_specs());
                }
                out.extend(stage.block.param_specs());
                if let Some(a) = &stage.attention {
                    out.extend(a.param_specs());
                }
            }
            if let Some(d) = &level.down {
                out.extend(d.param_specs());
            }
            if let Some(u) = &level.up {
                out.extend(u.param_specs());
            }
        }
        out.extend(self.detokenizer.param_specs());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.param_specs().iter().map(ParamSpec::len).sum()
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut params = ParamStore::new();
        declare_all(&self.param_specs(), &mut params, &mut ChaCha8Rng::seed_from_u64(seed));
        params
    }

    /// Checks a `[b, c, f, l]` input shape against the configuration.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[2] != self.config.n_mels {
            return Err(Error::shape(format!("expected [batch, channels, {}, frames], got {shape:?}", self.config.n_mels)));
        }
        let multiple = 1usize << self.config.downsamplings();
        if shape[3] == 0 || shape[3] % multiple != 0 {
            return Err(Error::shape(format!("frame count {} is not a positive multiple of {multiple}", shape[3])));
        }
        if shape[1] == 0 {
            return Err(Error::shape("input has no channels"));
        }
        Ok(())
    }

    /// Predicts the noise in `x` (`[b, c, f, l]`) at per-item timesteps `t`.
    pub fn forward<B: Backend>(&self, b: &mut B, x: &B::T, t: &[usize]) -> Result<B::T> {
        let shape = b.shape(x);
        self.check_input(&shape)?;
        if t.len() != shape[0] {
            return Err(Error::shape(format!("{} timesteps for batch of {}", t.len(), shape[0])));
        }
        let temb = self.time.forward(b, t)?;
        let mut h = self.tokenizer.forward(b, x)?;
        let mut skips = Vec::new();
        for level in &self.encoder {
            for stage in &level.stages {
                h = stage.block.forward(b, &h, Some(&temb))?;
                if let Some(a) = &stage.attention {
                    h = a.forward(b, &h)?;
                }
                skips.push(h.clone());
            }
            if let Some(d) = &level.down {
                h = d.forward(b, &h)?;
            }
        }
        for level in &self.decoder {
            for stage in &level.stages {
                let skip = skips.pop().expect("one skip per encoder block");
                h = b.concat_features(&h, &skip);
                if let Some(m) = &stage.merge {
                    h = m.forward(b, &h)?;
                }
                h = stage.block.forward(b, &h, Some(&temb))?;
                if let Some(a) = &stage.attention {
                    h = a.forward(b, &h)?;
                }
            }
            if let Some(u) = &level.up {
                h = u.forward(b, &h)?;
            }
        }
        self.detokenizer.forward(b, &h)
    }
}

impl NoiseModel for UNet {
    fn predict<B: Backend>(&self, backend: &mut B, x: B::T, t: &[usize]) -> Result<B::T> {
        self.forward(backend, &x, t)
    }
}

/// A U-Net bound to a weight set, usable by the samplers. Accepts
/// `[c, f, l]` or `[b, c, f, l]` arrays.
#[derive(Clone, Copy)]
pub struct Denoiser<'a> {
    pub unet: &'a UNet,
    pub params: &'a ParamStore,
}

impl NoisePredictor for Denoiser<'_> {
    fn predict_noise(&self, x: &ArrayD<f64>, t: usize) -> Result<ArrayD<f64>> {
        let mut eager = Eager::new(self.params);
        match x.ndim() {
            3 => {
                let batched = x.clone().insert_axis(Axis(0));
                Ok(self.unet.forward(&mut eager, &batched, &[t])?.index_axis_move(Axis(0), 0))
            }
            4 => self.unet.forward(&mut eager, x, &vec![t; x.shape()[0]]),
            _ => Err(Error::shape(format!("expected a [c, f, l] or [b, c, f, l] array, got {:?}", x.shape()))),
        }
    }
}
