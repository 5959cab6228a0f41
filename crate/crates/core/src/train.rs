//! Training loops for the diffusion model and the vocoder.

use ndarray::{concatenate, s, Array3, ArrayD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioBuffer;
use crate::config::ExperimentConfig;
use crate::diffusion::{gaussian, training_loss};
use crate::dsp::{Spectrogram, SpectrogramKind};
use crate::error::{Error, Result};
use crate::model::{DiffusionModel, VocoderModel};
use crate::nn::optim::Adam;
use crate::nn::{Backend, ParamStore, Tape};
use crate::scaling::ScalerMode;
use crate::unet::ema_update;
use crate::vocoder::{mean_spectral_convergence, vocoder_loss_graph};

/// Linear warmup from `base_lr * start_factor` to `base_lr` over
/// `warmup_iters` steps, constant afterwards.
pub fn lr_schedule(step: u64, base_lr: f64, warmup_iters: u64, start_factor: f64) -> f64 {
    if warmup_iters == 0 || step >= warmup_iters {
        return base_lr;
    }
    let frac = step as f64 / warmup_iters as f64;
    base_lr * (start_factor + (1.0 - start_factor) * frac)
}

/// Per-step record passed to progress callbacks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Mean of the first `window` losses.
    pub fn initial_smoothed(&self, window: usize) -> f64 {
        mean(&self.losses[..window.min(self.losses.len())])
    }

    /// Mean of the last `window` losses.
    pub fn final_smoothed(&self, window: usize) -> f64 {
        mean(&self.losses[self.losses.len().saturating_sub(window)..])
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Whole-item features from which random fixed-length crops are drawn.
struct CropSource {
    items: Vec<Vec<Array3<f64>>>,
    frames: usize,
}

impl CropSource {
    fn new(items: Vec<Vec<Array3<f64>>>, frames: usize) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::input("training set is empty"));
        }
        if let Some(short) = items.iter().map(|f| f[0].dim().2).find(|&l| l < frames) {
            return Err(Error::input(format!("item with {short} frames is shorter than the {frames}-frame crop")));
        }
        Ok(Self { items, frames })
    }

    /// One stacked `[batch, c, bins, frames]` array per feature.
    fn batch(&self, size: usize, rng: &mut impl Rng) -> Vec<ArrayD<f64>> {
        let n_features = self.items[0].len();
        let mut parts: Vec<Vec<ArrayD<f64>>> = vec![Vec::with_capacity(size); n_features];
        for _ in 0..size {
            let item = &self.items[rng.random_range(0..self.items.len())];
            let start = rng.random_range(0..=item[0].dim().2 - self.frames);
            for (k, feature) in item.iter().enumerate() {
                let crop = feature.slice(s![.., .., start..start + self.frames]).to_owned();
                parts[k].push(crop.into_dyn().insert_axis(Axis(0)));
            }
        }
        parts
            .into_iter()
            .map(|p| {
                let views: Vec<_> = p.iter().map(|a| a.view()).collect();
                concatenate(Axis(0), &views).expect("equal crop shapes")
            })
            .collect()
    }
}

fn check_channels(dataset: &[AudioBuffer], config: &ExperimentConfig) -> Result<()> {
    let want = config.data.audio_channels;
    if let Some(bad) = dataset.iter().find(|a| a.channels() != want) {
        return Err(Error::input(format!("audio has {} channels, config expects {want}", bad.channels())));
    }
    Ok(())
}

fn check_loss(step: u64, loss: f64, params: &ParamStore) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Diverged { step: step as usize, detail: format!("loss is {loss}") });
    }
    if !params.all_finite() {
        return Err(Error::Diverged { step: step as usize, detail: "non-finite parameters after update".into() });
    }
    Ok(())
}

/// Fresh diffusion model trained for `training.training_steps` steps.
pub fn train_diffusion(
    config: &ExperimentConfig,
    dataset: &[AudioBuffer],
    seed: u64,
    progress: impl FnMut(&StepLog),
) -> Result<(DiffusionModel, TrainReport)> {
    let mut model = DiffusionModel::new(config.clone(), seed)?;
    let report = continue_diffusion(&mut model, dataset, config.training.training_steps, seed, progress)?;
    Ok((model, report))
}

/// Runs `steps` more optimizer steps on `model`. Optimizer moments start
/// from zero.
pub fn continue_diffusion(
    model: &mut DiffusionModel,
    dataset: &[AudioBuffer],
    steps: u64,
    seed: u64,
    mut progress: impl FnMut(&StepLog),
) -> Result<TrainReport> {
    let cfg = model.config.clone();
    check_channels(dataset, &cfg)?;
    let crop = model.front.frames_for(cfg.data.audio_length);
    model.check_frames(crop)?;
    let mels = dataset.iter().map(|a| Ok(vec![model.front.mel(a)?])).collect::<Result<Vec<_>>>()?;
    let source = CropSource::new(mels, crop)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut adam = Adam::new(cfg.adam());
    let ema_cfg = cfg.ema();
    let timesteps = model.schedule.timesteps();
    model.scaler.set_mode(ScalerMode::Training);
    let mut report = TrainReport::default();

    for _ in 0..steps {
        let step = model.step;
        let mel = source.batch(cfg.data.batch_size, &mut rng).remove(0);
        let x0 = model.scaler.transform(&mel)?;
        let t: Vec<usize> = (0..cfg.data.batch_size).map(|_| rng.random_range(1..=timesteps)).collect();
        let eps = gaussian(x0.shape(), &mut rng);
        let (loss, grads) = {
            let mut tape = Tape::new(&model.params);
            let loss = training_loss(&mut tape, &model.unet, &x0, &t, &eps, &model.schedule)?;
            (tape.scalar_value(loss), tape.backward(loss))
        };
        check_loss(step, loss, &model.params)?;
        let lr = lr_schedule(
            step,
            cfg.training.learning_rate,
            cfg.training.lr_warmup_iterations,
            cfg.training.lr_warmup_start_factor,
        );
        adam.step(&mut model.params, &grads, lr)?;
        check_loss(step, loss, &model.params)?;
        ema_update(&mut model.ema, &model.params, &ema_cfg, step)?;
        model.step += 1;
        report.losses.push(loss);
        progress(&StepLog { step, loss, lr });
    }
    model.scaler.set_mode(ScalerMode::Inference);
    Ok(report)
}

/// Fresh vocoder trained for `training.training_steps` steps on
/// (mel, magnitude) crops of `dataset`.
pub fn train_vocoder(
    config: &ExperimentConfig,
    dataset: &[AudioBuffer],
    seed: u64,
    progress: impl FnMut(&StepLog),
) -> Result<(VocoderModel, TrainReport)> {
    let mut model = VocoderModel::new(config.clone(), seed)?;
    let report = continue_vocoder(&mut model, dataset, config.training.training_steps, seed, progress)?;
    Ok((model, report))
}

pub fn continue_vocoder(
    model: &mut VocoderModel,
    dataset: &[AudioBuffer],
    steps: u64,
    seed: u64,
    mut progress: impl FnMut(&StepLog),
) -> Result<TrainReport> {
    let cfg = model.config.clone();
    check_channels(dataset, &cfg)?;
    let crop = model.front.frames_for(cfg.data.audio_length);
    let pairs = dataset
        .iter()
        .map(|a| {
            let mag = model.front.magnitude(a)?;
            let mel = model.front.filterbank.apply(&mag)?;
            Ok(vec![mel, mag])
        })
        .collect::<Result<Vec<_>>>()?;
    let source = CropSource::new(pairs, crop)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut adam = Adam::new(cfg.adam());
    model.scaler.set_mode(ScalerMode::Training);
    let mut report = TrainReport::default();

    for _ in 0..steps {
        let step = model.step;
        let mut batch = source.batch(cfg.data.batch_size, &mut rng);
        let target = batch.pop().expect("magnitude crop");
        let mel = model.scaler.transform(&batch.pop().expect("mel crop"))?;
        let (loss, grads) = {
            let mut tape = Tape::new(&model.params);
            let x = tape.constant(mel);
            let pred = model.vocoder.forward(&mut tape, &x)?;
            let loss = vocoder_loss_graph(&mut tape, &target, &pred)?;
            (tape.scalar_value(loss), tape.backward(loss))
        };
        check_loss(step, loss, &model.params)?;
        let lr = lr_schedule(
            step,
            cfg.training.learning_rate,
            cfg.training.lr_warmup_iterations,
            cfg.training.lr_warmup_start_factor,
        );
        adam.step(&mut model.params, &grads, lr)?;
        check_loss(step, loss, &model.params)?;
        model.step += 1;
        report.losses.push(loss);
        progress(&StepLog { step, loss, lr });
    }
    model.scaler.set_mode(ScalerMode::Inference);
    Ok(report)
}

/// Mean spectral convergence of the vocoder's magnitudes on whole items.
pub fn vocoder_heldout_convergence(model: &VocoderModel, heldout: &[AudioBuffer]) -> Result<f64> {
    let pairs = heldout
        .iter()
        .map(|a| {
            let mag = model.front.magnitude(a)?;
            let mel = model.front.filterbank.apply(&mag)?;
            let x = model.scaler.apply(&mel.into_dyn())?.into_dimensionality().map_err(|e| Error::shape(e.to_string()))?;
            Ok((Spectrogram::new(x, SpectrogramKind::NormalizedMel, a.sample_rate()), mag))
        })
        .collect::<Result<Vec<_>>>()?;
    mean_spectral_convergence(&model.vocoder, &model.params, &pairs)
}
