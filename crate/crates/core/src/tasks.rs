//! Generation and editing procedures built on a trained diffusion model and
//! vocoder. All work happens in the diffusion model's normalized mel space,
//! `[channels, n_mels, frames]`.

use ndarray::{concatenate, Array1, Array3, ArrayD, Axis, Ix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioBuffer;
use crate::diffusion::{
    denoise, forward_sample, gaussian, repaint_loop, sample_loop, truncated_grid, NoiseSchedule, RepaintJumps,
};
use crate::error::{Error, Result};
use crate::model::{DiffusionModel, VocoderModel};

/// Closed time span `[start, end]` in seconds.
pub type KeepRange = (f64, f64);

#[derive(Clone, Debug, PartialEq)]
pub enum TaskKind {
    Generate { frames: usize },
    AudioToAudio { source: AudioBuffer, timestep: usize },
    Interpolate { a: AudioBuffer, b: AudioBuffer, ratio: f64, timestep: usize },
    Inpaint { source: AudioBuffer, keep: Vec<KeepRange> },
    Outpaint { source: AudioBuffer, extend_frames: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskRequest {
    pub kind: TaskKind,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskOutput {
    /// Result in normalized mel space.
    pub mel: Array3<f64>,
    pub audio: AudioBuffer,
}

/// A diffusion model paired with a vocoder for rendering.
#[derive(Clone, Copy)]
pub struct Pipeline<'m> {
    pub diffusion: &'m DiffusionModel,
    pub vocoder: &'m VocoderModel,
    pub num_steps: usize,
    pub eta: f64,
    pub jumps: RepaintJumps,
}

fn to3(a: ArrayD<f64>) -> Result<Array3<f64>> {
    a.into_dimensionality::<Ix3>().map_err(|e| Error::shape(e.to_string()))
}

/// Noises `xa` and `xb` to `t` with independent draws and blends them as
/// `ratio * a + (1 - ratio) * b`.
pub fn noised_blend(
    xa: &Array3<f64>,
    xb: &Array3<f64>,
    ratio: f64,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<Array3<f64>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::input(format!("interpolation ratio {ratio} is outside [0, 1]")));
    }
    if xa.dim() != xb.dim() {
        return Err(Error::Contract(format!("sources differ in shape: {:?} vs {:?}", xa.dim(), xb.dim())));
    }
    let ea = gaussian(xa.shape(), rng);
    let eb = gaussian(xb.shape(), rng);
    let na = forward_sample(&xa.clone().into_dyn(), t, &ea, sched)?;
    let nb = forward_sample(&xb.clone().into_dyn(), t, &eb, sched)?;
    to3(na * ratio + nb * (1.0 - ratio))
}

/// Per-frame keep mask, 1 where the frame centre `i * hop / sr` falls in one
/// of `ranges`.
pub fn keep_mask(frames: usize, hop: usize, sample_rate: u32, duration_s: f64, ranges: &[KeepRange]) -> Result<Array1<f64>> {
    if frames == 0 || !(duration_s > 0.0) {
        return Err(Error::Contract("source has no duration".into()));
    }
    for &(start, end) in ranges {
        if !(start.is_finite() && end.is_finite()) || start < 0.0 || end < start {
            return Err(Error::Contract(format!("keep range {start}..{end} is inverted or negative")));
        }
        if end > duration_s + 1e-9 {
            return Err(Error::Contract(format!("keep range {start}..{end} exceeds the {duration_s:.3} s source")));
        }
    }
    Ok(Array1::from_shape_fn(frames, |i| {
        let centre = (i * hop) as f64 / sample_rate as f64;
        if ranges.iter().any(|&(s, e)| centre >= s && centre <= e) {
            1.0
        } else {
            0.0
        }
    }))
}

/// Trims `audio` to the longest prefix whose frame count is a multiple of
/// `multiple`.
pub fn fit_audio(audio: &AudioBuffer, hop: usize, multiple: usize) -> Result<AudioBuffer> {
    let frames = audio.len() / hop + 1;
    let keep = frames / multiple * multiple;
    if keep == 0 {
        return Err(Error::input(format!("audio of {} samples is shorter than {multiple} frames", audio.len())));
    }
    audio.slice(0, (keep - 1) * hop)
}

impl<'m> Pipeline<'m> {
    pub fn new(diffusion: &'m DiffusionModel, vocoder: &'m VocoderModel) -> Result<Self> {
        if diffusion.config.front_end() != vocoder.config.front_end() {
            return Err(Error::config("diffusion model and vocoder use different front-end settings"));
        }
        Ok(Self {
            diffusion,
            vocoder,
            num_steps: diffusion.config.diffusion.number_of_sampling_steps,
            eta: diffusion.config.diffusion.eta,
            jumps: diffusion.config.jumps(),
        })
    }

    fn sched(&self) -> &NoiseSchedule {
        &self.diffusion.schedule
    }

    fn channels(&self) -> usize {
        self.diffusion.config.data.audio_channels
    }

    fn check_t(&self, t: usize) -> Result<()> {
        let max = self.sched().timesteps();
        if t > max {
            return Err(Error::Timestep { t, max });
        }
        Ok(())
    }

    /// Audio to normalized mel.
    pub fn encode(&self, audio: &AudioBuffer) -> Result<Array3<f64>> {
        if audio.channels() != self.channels() {
            return Err(Error::input(format!("audio has {} channels, model expects {}", audio.channels(), self.channels())));
        }
        let mel = self.diffusion.front.mel(audio)?;
        self.diffusion.check_frames(mel.dim().2)?;
        self.diffusion.normalize(&mel)
    }

    /// Normalized mel to audio.
    pub fn render(&self, x: &Array3<f64>) -> Result<AudioBuffer> {
        self.vocoder.render(&self.diffusion.denormalize(x)?)
    }

    fn finish(&self, mel: Array3<f64>) -> Result<TaskOutput> {
        let audio = self.render(&mel)?;
        Ok(TaskOutput { mel, audio })
    }

    pub fn generate_mel(&self, frames: usize, seed: u64) -> Result<Array3<f64>> {
        self.diffusion.check_frames(frames)?;
        let shape = [self.channels(), self.diffusion.config.transforms.mel_frequencies, frames];
        to3(sample_loop(&self.diffusion.sampler(), &shape, self.sched(), self.num_steps, self.eta, seed)?)
    }

    pub fn generate(&self, frames: usize, seed: u64) -> Result<TaskOutput> {
        self.finish(self.generate_mel(frames, seed)?)
    }

    /// Reverse diffusion from `x_t` along the sampling grid below `t`.
    fn denoise_from(&self, x_t: Array3<f64>, t: usize, rng: &mut ChaCha8Rng) -> Result<Array3<f64>> {
        let grid = truncated_grid(self.sched().timesteps(), self.num_steps, t)?;
        to3(denoise(&self.diffusion.sampler(), x_t.into_dyn(), &grid, self.sched(), self.eta, rng)?)
    }

    pub fn audio_to_audio_mel(&self, source: &AudioBuffer, t: usize, seed: u64) -> Result<Array3<f64>> {
        self.check_t(t)?;
        let x0 = self.encode(source)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = gaussian(x0.shape(), &mut rng);
        let x_t = to3(forward_sample(&x0.into_dyn(), t, &eps, self.sched())?)?;
        self.denoise_from(x_t, t, &mut rng)
    }

    pub fn audio_to_audio(&self, source: &AudioBuffer, t: usize, seed: u64) -> Result<TaskOutput> {
        self.finish(self.audio_to_audio_mel(source, t, seed)?)
    }

    pub fn interpolate_mel(&self, a: &AudioBuffer, b: &AudioBuffer, ratio: f64, t: usize, seed: u64) -> Result<Array3<f64>> {
        self.check_t(t)?;
        if a.len() != b.len() || a.channels() != b.channels() {
            return Err(Error::Contract(format!(
                "sources differ in duration or channels: {}x{} vs {}x{}",
                a.channels(),
                a.len(),
                b.channels(),
                b.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x_t = noised_blend(&self.encode(a)?, &self.encode(b)?, ratio, t, self.sched(), &mut rng)?;
        self.denoise_from(x_t, t, &mut rng)
    }

    pub fn interpolate(&self, a: &AudioBuffer, b: &AudioBuffer, ratio: f64, t: usize, seed: u64) -> Result<TaskOutput> {
        self.finish(self.interpolate_mel(a, b, ratio, t, seed)?)
    }

    /// Mask-guided sampling with `frame_mask` (1 = keep) broadcast over
    /// channels and mel bins.
    pub fn repaint_mel(&self, known: &Array3<f64>, frame_mask: &Array1<f64>, seed: u64) -> Result<Array3<f64>> {
        if frame_mask.len() != known.dim().2 {
            return Err(Error::Contract(format!("mask has {} frames, source {}", frame_mask.len(), known.dim().2)));
        }
        self.diffusion.check_frames(known.dim().2)?;
        let mask = frame_mask.clone().into_shape_with_order((1, 1, frame_mask.len())).expect("row mask").into_dyn();
        to3(repaint_loop(
            &self.diffusion.sampler(),
            &known.clone().into_dyn(),
            &mask,
            self.sched(),
            self.num_steps,
            self.jumps,
            self.eta,
            seed,
        )?)
    }

    pub fn inpaint_mel(&self, source: &AudioBuffer, keep: &[KeepRange], seed: u64) -> Result<Array3<f64>> {
        if source.is_empty() {
            return Err(Error::Contract("source has no duration".into()));
        }
        let x0 = self.encode(source)?;
        let fe = &self.diffusion.config.front_end();
        let mask = keep_mask(x0.dim().2, fe.hop_length, fe.sample_rate, source.duration_secs(), keep)?;
        self.repaint_mel(&x0, &mask, seed)
    }

    pub fn inpaint(&self, source: &AudioBuffer, keep: &[KeepRange], seed: u64) -> Result<TaskOutput> {
        self.finish(self.inpaint_mel(source, keep, seed)?)
    }

    pub fn outpaint_mel(&self, source: &AudioBuffer, extend_frames: usize, seed: u64) -> Result<Array3<f64>> {
        if audio_frames(self, source) + extend_frames == 0 {
            return Err(Error::Contract("source has no duration".into()));
        }
        let total = audio_frames(self, source) + extend_frames;
        self.diffusion.check_frames(total)?;
        if source.channels() != self.channels() {
            return Err(Error::input(format!("audio has {} channels, model expects {}", source.channels(), self.channels())));
        }
        let x0 = self.diffusion.normalize(&self.diffusion.front.mel(source)?)?;
        let (c, f, l) = x0.dim();
        let known = concatenate(Axis(2), &[x0.view(), Array3::zeros((c, f, extend_frames)).view()]).expect("same bins");
        let mask = Array1::from_shape_fn(l + extend_frames, |i| if i < l { 1.0 } else { 0.0 });
        self.repaint_mel(&known, &mask, seed)
    }

    pub fn outpaint(&self, source: &AudioBuffer, extend_frames: usize, seed: u64) -> Result<TaskOutput> {
        self.finish(self.outpaint_mel(source, extend_frames, seed)?)
    }

    pub fn run(&self, request: &TaskRequest) -> Result<TaskOutput> {
        let seed = request.seed;
        match &request.kind {
            TaskKind::Generate { frames } => self.generate(*frames, seed),
            TaskKind::AudioToAudio { source, timestep } => self.audio_to_audio(source, *timestep, seed),
            TaskKind::Interpolate { a, b, ratio, timestep } => self.interpolate(a, b, *ratio, *timestep, seed),
            TaskKind::Inpaint { source, keep } => self.inpaint(source, keep, seed),
            TaskKind::Outpaint { source, extend_frames } => self.outpaint(source, *extend_frames, seed),
        }
    }
}

fn audio_frames(p: &Pipeline<'_>, audio: &AudioBuffer) -> usize {
    if audio.is_empty() {
        0
    } else {
        p.diffusion.front.frames_for(audio.len())
    }
}
