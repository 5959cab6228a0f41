//! Command-line front end. [`run_cli`] returns the process exit code: 0 on
//! success, 2 for usage errors, 1 for runtime failures.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use crate::audio::AudioBuffer;
use crate::checkpoint::FORMAT_VERSION;
use crate::config::ExperimentConfig;
use crate::corpus::synth_corpus;
use crate::error::{Error, Result};
use crate::model::{DiffusionModel, VocoderModel};
use crate::tasks::{fit_audio, KeepRange, Pipeline, TaskOutput};
use crate::train::{train_diffusion, train_vocoder, StepLog};

#[derive(Parser, Debug)]
#[command(name = "meldiff", version, about = "Mel-spectrogram diffusion for music synthesis and editing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic training corpus as WAV files.
    MakeCorpus(CorpusArgs),
    /// Train the mel-to-magnitude vocoder.
    TrainVocoder(TrainArgs),
    /// Train the diffusion model.
    TrainDiffusion(TrainArgs),
    /// Sample new audio from noise.
    Generate(GenerateArgs),
    /// Noise an input to a timestep and denoise it again.
    #[command(name = "audio2audio")]
    AudioToAudio(AudioToAudioArgs),
    /// Blend two inputs in noised mel space.
    Interpolate(InterpolateArgs),
    /// Regenerate everything outside the kept time ranges.
    Inpaint(InpaintArgs),
    /// Extend an input with new frames.
    Outpaint(OutpaintArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// YAML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training steps (train commands) or sampling steps (others).
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    output: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct CorpusArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 32)]
    items: usize,
    /// Seconds per item.
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    /// Defaults to the configured sample rate.
    #[arg(long)]
    sample_rate: Option<u32>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of WAV files; a synthetic corpus is used when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Items in the synthetic corpus.
    #[arg(long, default_value_t = 32)]
    items: usize,
}

#[derive(Args, Debug)]
struct Models {
    /// Diffusion checkpoint.
    #[arg(long)]
    diffusion: PathBuf,
    /// Vocoder checkpoint.
    #[arg(long)]
    vocoder: PathBuf,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    models: Models,
    /// Length in mel frames; defaults to the configured training length.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Args, Debug)]
struct AudioToAudioArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    models: Models,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    timestep: usize,
}

#[derive(Args, Debug)]
struct InterpolateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    models: Models,
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Weight of `--a` in the blend.
    #[arg(long)]
    ratio: f64,
    #[arg(long)]
    timestep: usize,
}

#[derive(Args, Debug)]
struct InpaintArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    models: Models,
    #[arg(long)]
    input: PathBuf,
    /// Kept spans in seconds, e.g. `0:30,60:90`.
    #[arg(long, value_parser = parse_keep)]
    keep: KeepList,
}

#[derive(Args, Debug)]
struct OutpaintArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    models: Models,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    extend_frames: usize,
}

#[derive(Clone, Debug)]
struct KeepList(Vec<KeepRange>);

/// Parses `start:end[,start:end...]` in seconds.
pub fn parse_keep_ranges(text: &str) -> Result<Vec<KeepRange>> {
    text.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|part| {
            let (a, b) = part
                .split_once(':')
                .ok_or_else(|| Error::input(format!("keep range `{part}` is not start:end")))?;
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|_| Error::input(format!("`{s}` in keep range `{part}` is not a number")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

fn parse_keep(text: &str) -> std::result::Result<KeepList, String> {
    parse_keep_ranges(text).map(KeepList).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config_hash: String,
    meldiff_version: &'a str,
    checkpoint_format_version: u32,
    outputs: Vec<String>,
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn guard(path: &Path, force: bool) -> Result<()> {
    if !force && path.exists() {
        return Err(Error::Exists(path.to_path_buf()));
    }
    Ok(())
}

fn guard_with_manifest(path: &Path, force: bool) -> Result<()> {
    guard(path, force)?;
    guard(&manifest_path(path), force)
}

fn write_manifest(output: &Path, command: &str, seed: u64, config: &ExperimentConfig, outputs: Vec<String>) -> Result<()> {
    let manifest = Manifest {
        command,
        seed,
        config_hash: config.hash(),
        meldiff_version: env!("CARGO_PKG_VERSION"),
        checkpoint_format_version: FORMAT_VERSION,
        outputs,
    };
    std::fs::write(manifest_path(output), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn load_config(path: Option<&Path>, fallback: ExperimentConfig) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(fallback),
    }
}

fn read_corpus(dir: &Path) -> Result<Vec<AudioBuffer>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::input(format!("no .wav files in {}", dir.display())));
    }
    paths.iter().map(AudioBuffer::read_wav).collect()
}

fn training_data(args: &TrainArgs, cfg: &ExperimentConfig) -> Result<Vec<AudioBuffer>> {
    match &args.corpus {
        Some(dir) => read_corpus(dir),
        None => {
            let sr = cfg.data.sample_rate;
            let seconds = (1.5 * cfg.data.audio_length as f64 / sr as f64).max(2.0);
            info!("synthesizing {} items of {seconds:.2} s", args.items);
            let mono = synth_corpus(args.items, seconds, sr, args.common.seed)?;
            let c = cfg.data.audio_channels;
            mono.into_iter()
                .map(|a| {
                    let row = a.samples().row(0).to_owned();
                    let stacked = ndarray::Array2::from_shape_fn((c, row.len()), |(_, t)| row[t]);
                    AudioBuffer::new(stacked, sr)
                })
                .collect()
        }
    }
}

fn progress(name: &'static str, total: u64) -> impl FnMut(&StepLog) {
    let every = (total / 20).max(1);
    move |log: &StepLog| {
        if log.step % every == 0 || log.step + 1 == total {
            info!("{name} step {}/{total} loss {:.5} lr {:.2e}", log.step + 1, log.loss, log.lr);
        }
    }
}

fn run_train(args: &TrainArgs, diffusion: bool) -> Result<()> {
    let c = &args.common;
    let fallback = if diffusion { ExperimentConfig::toy_unet() } else { ExperimentConfig::toy_vocoder() };
    let mut cfg = load_config(c.config.as_deref(), fallback)?;
    if let Some(steps) = c.steps {
        cfg.training.training_steps = steps;
    }
    cfg.training.seed = c.seed;
    guard_with_manifest(&c.output, c.force)?;
    let data = training_data(args, &cfg)?;
    let steps = cfg.training.training_steps;
    let (command, final_loss) = if diffusion {
        let (model, report) = train_diffusion(&cfg, &data, c.seed, progress("diffusion", steps))?;
        model.save(&c.output, c.force)?;
        ("train-diffusion", report.final_smoothed(100))
    } else {
        let (model, report) = train_vocoder(&cfg, &data, c.seed, progress("vocoder", steps))?;
        model.save(&c.output, c.force)?;
        ("train-vocoder", report.final_smoothed(100))
    };
    info!("final smoothed loss {final_loss:.5}; wrote {}", c.output.display());
    write_manifest(&c.output, command, c.seed, &cfg, vec![c.output.display().to_string()])
}

struct Loaded {
    diffusion: DiffusionModel,
    vocoder: VocoderModel,
}

impl Loaded {
    fn open(models: &Models, common: &Common) -> Result<Self> {
        let mut diffusion = DiffusionModel::load(&models.diffusion)?;
        let mut vocoder = VocoderModel::load(&models.vocoder)?;
        if let Some(path) = &common.config {
            let over = ExperimentConfig::load(path)?;
            for cfg in [&mut diffusion.config, &mut vocoder.config] {
                cfg.diffusion.number_of_sampling_steps = over.diffusion.number_of_sampling_steps;
                cfg.diffusion.eta = over.diffusion.eta;
                cfg.diffusion.jump_length = over.diffusion.jump_length;
                cfg.diffusion.jump_n_sample = over.diffusion.jump_n_sample;
                cfg.transforms.griffin_lim_iterations = over.transforms.griffin_lim_iterations;
                cfg.transforms.griffin_lim_momentum = over.transforms.griffin_lim_momentum;
            }
        }
        if let Some(steps) = common.steps {
            diffusion.config.diffusion.number_of_sampling_steps = steps as usize;
        }
        diffusion.config.validate()?;
        Ok(Self { diffusion, vocoder })
    }

    fn pipeline(&self) -> Result<Pipeline<'_>> {
        Pipeline::new(&self.diffusion, &self.vocoder)
    }

    fn read(&self, path: &Path) -> Result<AudioBuffer> {
        let audio = AudioBuffer::read_wav(path)?;
        let fitted = fit_audio(&audio, self.diffusion.config.transforms.hop_length, self.diffusion.frame_multiple())?;
        if fitted.len() != audio.len() {
            warn!("trimmed {} from {} to {} samples to fit the frame grid", path.display(), audio.len(), fitted.len());
        }
        Ok(fitted)
    }
}

fn finish(common: &Common, command: &str, loaded: &Loaded, out: TaskOutput) -> Result<()> {
    out.audio.write_wav(&common.output)?;
    info!("wrote {} ({:.2} s)", common.output.display(), out.audio.duration_secs());
    write_manifest(&common.output, command, common.seed, &loaded.diffusion.config, vec![common.output.display().to_string()])
}

fn run_command(command: Command) -> Result<()> {
    match command {
        Command::MakeCorpus(args) => {
            let c = &args.common;
            let cfg = load_config(c.config.as_deref(), ExperimentConfig::toy_unet())?;
            let sr = args.sample_rate.unwrap_or(cfg.data.sample_rate);
            let items = synth_corpus(args.items, args.duration, sr, c.seed)?;
            std::fs::create_dir_all(&c.output)?;
            let names: Vec<PathBuf> = (0..items.len()).map(|i| c.output.join(format!("item_{i:04}.wav"))).collect();
            for p in &names {
                guard(p, c.force)?;
            }
            let manifest_target = c.output.join("corpus");
            guard(&manifest_path(&manifest_target), c.force)?;
            for (audio, path) in items.iter().zip(&names) {
                audio.write_wav(path)?;
            }
            info!("wrote {} items to {}", items.len(), c.output.display());
            let outputs = names.iter().map(|p| p.display().to_string()).collect();
            write_manifest(&manifest_target, "make-corpus", c.seed, &cfg, outputs)
        }
        Command::TrainVocoder(args) => run_train(&args, false),
        Command::TrainDiffusion(args) => run_train(&args, true),
        Command::Generate(args) => {
            let c = &args.common;
            guard_with_manifest(&c.output, c.force)?;
            let loaded = Loaded::open(&args.models, c)?;
            let frames = match args.frames {
                Some(f) => f,
                None => loaded.diffusion.front.frames_for(loaded.diffusion.config.data.audio_length),
            };
            let out = loaded.pipeline()?.generate(frames, c.seed)?;
            finish(c, "generate", &loaded, out)
        }
        Command::AudioToAudio(args) => {
            let c = &args.common;
            guard_with_manifest(&c.output, c.force)?;
            let loaded = Loaded::open(&args.models, c)?;
            let source = loaded.read(&args.input)?;
            let out = loaded.pipeline()?.audio_to_audio(&source, args.timestep, c.seed)?;
            finish(c, "audio2audio", &loaded, out)
        }
        Command::Interpolate(args) => {
            let c = &args.common;
            guard_with_manifest(&c.output, c.force)?;
            let loaded = Loaded::open(&args.models, c)?;
            let (a, b) = (loaded.read(&args.a)?, loaded.read(&args.b)?);
            let out = loaded.pipeline()?.interpolate(&a, &b, args.ratio, args.timestep, c.seed)?;
            finish(c, "interpolate", &loaded, out)
        }
        Command::Inpaint(args) => {
            let c = &args.common;
            guard_with_manifest(&c.output, c.force)?;
            let loaded = Loaded::open(&args.models, c)?;
            let source = loaded.read(&args.input)?;
            let out = loaded.pipeline()?.inpaint(&source, &args.keep.0, c.seed)?;
            finish(c, "inpaint", &loaded, out)
        }
        Command::Outpaint(args) => {
            let c = &args.common;
            guard_with_manifest(&c.output, c.force)?;
            let loaded = Loaded::open(&args.models, c)?;
            let source = AudioBuffer::read_wav(&args.input)?;
            let out = loaded.pipeline()?.outpaint(&source, args.extend_frames, c.seed)?;
            finish(c, "outpaint", &loaded, out)
        }
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run_command(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keep_ranges_parse() {
        assert_eq!(parse_keep_ranges("0:30,60:90").unwrap(), vec![(0.0, 30.0), (60.0, 90.0)]);
        assert_eq!(parse_keep_ranges(" 1.5 : 2 ").unwrap(), vec![(1.5, 2.0)]);
        assert!(parse_keep_ranges("5").is_err());
        assert!(parse_keep_ranges("a:b").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_cli(["meldiff", "frobnicate"]), 2);
        assert_eq!(run_cli(["meldiff", "generate", "--bogus"]), 2);
        assert_eq!(run_cli(["meldiff", "inpaint", "--keep", "x", "--output", "o.wav"]), 2);
    }

    #[test]
    fn runtime_errors_exit_1() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o.wav");
        let code = run_cli([
            "meldiff",
            "generate",
            "--diffusion",
            "/nonexistent/d.ckpt",
            "--vocoder",
            "/nonexistent/v.ckpt",
            "--output",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
    }

    #[test]
    fn corpus_respects_force() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap().to_string();
        let args = ["meldiff", "make-corpus", "--items", "2", "--duration", "0.1", "--output", out.as_str()];
        assert_eq!(run_cli(args), 0);
        assert!(dir.path().join("item_0001.wav").exists());
        assert!(dir.path().join("corpus.manifest.json").exists());
        assert_eq!(run_cli(args), 1);
        let mut forced = args.to_vec();
        forced.push("--force");
        assert_eq!(run_cli(forced), 0);
    }
}
