//! Generation, audio-to-audio, interpolation, inpainting and outpainting with
//! trained checkpoints. Run `train_toy` first.
//!
//! `cargo run --example editing_tasks -- [checkpoint dir] [output dir]`

use std::path::PathBuf;

use meldiff::corpus::synth_corpus;
use meldiff::model::{DiffusionModel, VocoderModel};
use meldiff::tasks::{Pipeline, TaskKind, TaskRequest};
use meldiff::Result;

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = PathBuf::from(args.get(1).map_or("target/toy", String::as_str));
    let out = PathBuf::from(args.get(2).map_or("target/toy/tasks", String::as_str));
    std::fs::create_dir_all(&out)?;

    let diffusion = DiffusionModel::load(ckpt.join("diffusion.ckpt"))?;
    let vocoder = VocoderModel::load(ckpt.join("vocoder.ckpt"))?;
    let pipe = Pipeline::new(&diffusion, &vocoder)?;
    let hop = diffusion.config.transforms.hop_length;
    let sr = diffusion.config.data.sample_rate;

    let clips: Vec<_> = synth_corpus(3, 1.0, sr, 42)?.into_iter().map(|a| a.slice(0, 63 * hop)).collect::<Result<_>>()?;
    let dur = clips[0].duration_secs();
    let requests = [
        ("generate", TaskKind::Generate { frames: 64 }),
        ("audio2audio", TaskKind::AudioToAudio { source: clips[0].clone(), timestep: 400 }),
        ("interpolate", TaskKind::Interpolate { a: clips[0].clone(), b: clips[1].clone(), ratio: 0.5, timestep: 500 }),
        ("inpaint", TaskKind::Inpaint { source: clips[2].clone(), keep: vec![(0.0, dur / 3.0), (2.0 * dur / 3.0, dur)] }),
        ("outpaint", TaskKind::Outpaint { source: clips[2].slice(0, 31 * hop)?, extend_frames: 32 }),
    ];
    for (name, kind) in requests {
        let result = pipe.run(&TaskRequest { kind, seed: 1 })?;
        let path = out.join(format!("{name}.wav"));
        result.audio.write_wav(&path)?;
        println!("{name:12} mel {:?} -> {}", result.mel.dim(), path.display());
    }
    Ok(())
}
