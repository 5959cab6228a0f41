//! Mel-to-magnitude neural vocoder with Griffin-Lim phase recovery.
//!
//! The network tokenizes the normalized mel, applies one residual block,
//! projects to STFT bins and exponentiates, so outputs are positive linear
//! magnitudes. Audio channels are processed independently.

use ndarray::{Array3, ArrayD, Axis, Ix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::dsp::{
    log_magnitude_loss, spectral_convergence_loss, GriffinLim, Spectrogram, SpectrogramKind, StftConfig,
    LOG_MAGNITUDE_EPS, SPECTRAL_CONVERGENCE_EPS,
};
use crate::error::{Error, Result};
use crate::nn::{Backend, Eager, ParamStore};
use crate::unet::layers::{declare_all, Detokenizer, ParamSpec, ResidualBlock, Tokenizer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocoderConfig {
    pub model_dim: usize,
    pub mlp_factor: usize,
    pub n_mels: usize,
    /// `fft_size / 2 + 1`.
    pub stft_bins: usize,
}

impl VocoderConfig {
    pub fn full_size() -> Self {
        Self { model_dim: 256, mlp_factor: 4, n_mels: 128, stft_bins: 1025 }
    }

    pub fn toy() -> Self {
        Self { model_dim: 64, mlp_factor: 4, n_mels: 16, stft_bins: 129 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 || self.stft_bins == 0 || self.mlp_factor == 0 {
            return Err(Error::config("vocoder sizes must be positive"));
        }
        if self.model_dim < 2 * self.n_mels {
            return Err(Error::config(format!(
                "model dim {} must be at least twice the mel count {}",
                self.model_dim, self.n_mels
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Vocoder {
    config: VocoderConfig,
    tokenizer: Tokenizer,
    block: ResidualBlock,
    detokenizer: Detokenizer,
}

impl Vocoder {
    pub fn new(config: VocoderConfig) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        Ok(Self {
            tokenizer: Tokenizer { prefix: "tok".into(), bins: config.n_mels, dim: d },
            block: ResidualBlock {
                prefix: "block".into(),
                d_in: d,
                d_out: d,
                mlp_factor: config.mlp_factor,
                dilation: 1,
                timestep_dim: None,
            },
            detokenizer: Detokenizer { prefix: "detok".into(), dim: d, bins: config.stft_bins },
            config,
        })
    }

    pub fn config(&self) -> &VocoderConfig {
        &self.config
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = self.tokenizer.param_specs();
        out.extend(self.block.param_specs());
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

    /// Normalized mel `[b, c, n_mels, l]` to magnitudes `[b, c, stft_bins, l]`.
    ///
    /// Channels are folded into the batch, so each one is vocoded on its own.
    pub fn forward<B: Backend>(&self, b: &mut B, mel: &B::T) -> Result<B::T> {
        let shape = b.shape(mel);
        if shape.len() != 4 || shape[2] != self.config.n_mels {
            return Err(Error::shape(format!("expected [batch, channels, {}, frames], got {shape:?}", self.config.n_mels)));
        }
        let (bsz, c, l) = (shape[0], shape[1], shape[3]);
        let folded = b.reshape(mel, &[bsz * c, 1, self.config.n_mels, l]);
        let h = self.tokenizer.forward(b, &folded)?;
        let h = self.block.forward(b, &h, None)?;
        let log_mag = self.detokenizer.forward(b, &h)?;
        let mag = b.exp(&log_mag);
        Ok(b.reshape(&mag, &[bsz, c, self.config.stft_bins, l]))
    }

    /// Eager forward on a single normalized mel spectrogram.
    pub fn magnitude(&self, params: &ParamStore, mel: &Spectrogram) -> Result<Spectrogram> {
        mel.expect_kind(SpectrogramKind::NormalizedMel)?;
        let x = mel.values.clone().into_dyn().insert_axis(Axis(0));
        let y = self.forward(&mut Eager::new(params), &x)?;
        let values = y.index_axis_move(Axis(0), 0).into_dimensionality::<Ix3>().expect("rank-3 output");
        Ok(Spectrogram::new(values, SpectrogramKind::Magnitude, mel.sample_rate))
    }

    /// Vocoder followed by Griffin-Lim.
    pub fn mel_to_audio(
        &self,
        params: &ParamStore,
        mel: &Spectrogram,
        stft: &StftConfig,
        griffin_lim: &GriffinLim,
    ) -> Result<AudioBuffer> {
        let mag = self.magnitude(params, mel)?;
        Ok(griffin_lim.run(&mag, stft)?.audio)
    }
}

/// Spectral convergence plus log-magnitude distance, unit weights.
pub fn vocoder_loss(target: &Spectrogram, pred: &Spectrogram) -> Result<f64> {
    target.expect_kind(SpectrogramKind::Magnitude)?;
    pred.expect_kind(SpectrogramKind::Magnitude)?;
    Ok(spectral_convergence_loss(&target.values, &pred.values)?
        + log_magnitude_loss(&target.values, &pred.values, LOG_MAGNITUDE_EPS)?)
}

/// Differentiable form of [`vocoder_loss`] against a fixed target.
pub fn vocoder_loss_graph<B: Backend>(b: &mut B, target: &ArrayD<f64>, pred: &B::T) -> Result<B::T> {
    if b.shape(pred) != target.shape() {
        return Err(Error::shape(format!("target {:?} vs prediction {:?}", target.shape(), b.shape(pred))));
    }
    if target.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::input("target magnitudes must be finite and non-negative"));
    }
    let norm = target.iter().map(|v| v * v).sum::<f64>().sqrt() + SPECTRAL_CONVERGENCE_EPS;
    let t = b.constant(target.clone());
    let diff = b.sub(&t, pred);
    let sq = b.square(&diff);
    let total = b.sum_all(&sq);
    let dist = b.sqrt(&total);
    let sc = b.scale(&dist, 1.0 / norm);

    let log_t = b.constant(target.mapv(|v| (v + LOG_MAGNITUDE_EPS).ln()));
    let shifted = b.add_scalar(pred, LOG_MAGNITUDE_EPS);
    let log_p = b.ln(&shifted);
    let gap = b.sub(&log_t, &log_p);
    let gap = b.abs(&gap);
    let lm = b.mean_all(&gap);
    Ok(b.add(&sc, &lm))
}

/// Applies [`Vocoder::magnitude`] to a stack of spectrograms and averages
/// spectral convergence against the matching targets.
pub fn mean_spectral_convergence(
    vocoder: &Vocoder,
    params: &ParamStore,
    pairs: &[(Spectrogram, Array3<f64>)],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::input("no spectrogram pairs to evaluate"));
    }
    let mut total = 0.0;
    for (mel, target) in pairs {
        let pred = vocoder.magnitude(params, mel)?;
        total += spectral_convergence_loss(target, &pred.values)?;
    }
    Ok(total / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::gaussian;
    use crate::nn::gradcheck::{check_gradients, ScalarObjective};

    #[test]
    fn full_size_shapes_and_budget() {
        let v = Vocoder::new(VocoderConfig::full_size()).unwrap();
        let count = v.parameter_count() as f64;
        assert!((count / 1.4e6 - 1.0).abs() < 0.1, "{count}");
        let mut narrow = VocoderConfig::full_size();
        narrow.model_dim = 200;
        assert!(matches!(Vocoder::new(narrow), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn outputs_are_positive_and_channelwise() {
        let v = Vocoder::new(VocoderConfig { model_dim: 8, mlp_factor: 2, n_mels: 4, stft_bins: 9 }).unwrap();
        let params = v.init_params(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian(&[2, 4, 6], &mut rng).into_dimensionality::<Ix3>().unwrap();
        let mel = Spectrogram::new(x.clone(), SpectrogramKind::NormalizedMel, 8000);
        let out = v.magnitude(&params, &mel).unwrap();
        assert_eq!(out.values.dim(), (2, 9, 6));
        assert!(out.values.iter().all(|&m| m > 0.0));
        let mut swapped = x.clone();
        swapped.invert_axis(Axis(0));
        let out2 = v.magnitude(&params, &Spectrogram::new(swapped, SpectrogramKind::NormalizedMel, 8000)).unwrap();
        let diff = (&out.values.index_axis(Axis(0), 0) - &out2.values.index_axis(Axis(0), 1)).mapv(f64::abs);
        assert!(diff.iter().all(|&d| d < 1e-12));
        let wrong = Spectrogram::new(x, SpectrogramKind::Mel, 8000);
        assert!(matches!(v.magnitude(&params, &wrong), Err(Error::Kind { .. })));
    }

    #[test]
    fn loss_is_sum_of_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = gaussian(&[1, 5, 7], &mut rng).mapv(f64::abs).into_dimensionality::<Ix3>().unwrap();
        let p = gaussian(&[1, 5, 7], &mut rng).mapv(f64::abs).into_dimensionality::<Ix3>().unwrap();
        let ts = Spectrogram::new(t.clone(), SpectrogramKind::Magnitude, 1);
        let ps = Spectrogram::new(p.clone(), SpectrogramKind::Magnitude, 1);
        let expected = spectral_convergence_loss(&t, &p).unwrap() + log_magnitude_loss(&t, &p, 1e-5).unwrap();
        assert!((vocoder_loss(&ts, &ps).unwrap() - expected).abs() < 1e-9);
        assert_eq!(vocoder_loss(&ts, &ts).unwrap(), 0.0);
        let empty = ParamStore::new();
        let mut e = Eager::new(&empty);
        let graph = vocoder_loss_graph(&mut e, &t.clone().into_dyn(), &p.into_dyn()).unwrap();
        assert!((graph[[]] - expected).abs() < 1e-9);
    }

    struct VocoderObjective {
        vocoder: Vocoder,
        mel: ArrayD<f64>,
        target: ArrayD<f64>,
    }

    impl ScalarObjective for VocoderObjective {
        fn eval<B: Backend>(&self, b: &mut B) -> Result<B::T> {
            let x = b.constant(self.mel.clone());
            let pred = self.vocoder.forward(b, &x)?;
            vocoder_loss_graph(b, &self.target, &pred)
        }
    }

    #[test]
    fn loss_gradients_through_vocoder() {
        let vocoder = Vocoder::new(VocoderConfig { model_dim: 6, mlp_factor: 2, n_mels: 3, stft_bins: 5 }).unwrap();
        let params = vocoder.init_params(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mel = gaussian(&[1, 2, 3, 4], &mut rng);
        let target = gaussian(&[1, 2, 5, 4], &mut rng).mapv(|v| v.abs() + 0.1);
        let report = check_gradients(&params, &VocoderObjective { vocoder, mel, target }, 1e-6, 12).unwrap();
        assert!(report.worst() < 1e-3, "{:?}", report.per_param);
    }

    #[test]
    fn mel_to_audio_length_and_channels() {
        let v = Vocoder::new(VocoderConfig { model_dim: 8, mlp_factor: 1, n_mels: 4, stft_bins: 33 }).unwrap();
        let params = v.init_params(5);
        let stft = StftConfig::hann(64, 64, 16).unwrap();
        let mel = Spectrogram::new(Array3::zeros((2, 4, 10)), SpectrogramKind::NormalizedMel, 8000);
        let gl = GriffinLim { iterations: 3, ..Default::default() };
        let audio = v.mel_to_audio(&params, &mel, &stft, &gl).unwrap();
        assert_eq!(audio.channels(), 2);
        assert_eq!(audio.len(), 9 * 16);
    }
}
