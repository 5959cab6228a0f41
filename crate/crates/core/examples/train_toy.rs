//! Trains the desk-scale vocoder and diffusion model on a synthetic corpus,
//! then saves both checkpoints.
//!
//! `cargo run --release --example train_toy -- [out_dir] [steps]`

use std::time::Instant;

use meldiff::config::ExperimentConfig;
use meldiff::corpus::synth_corpus;
use meldiff::train::{train_diffusion, train_vocoder, vocoder_heldout_convergence};

fn main() -> meldiff::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = std::path::PathBuf::from(args.get(1).map(String::as_str).unwrap_or("target/toy"));
    let steps: Option<u64> = args.get(2).and_then(|s| s.parse().ok());
    std::fs::create_dir_all(&out)?;

    let mut dcfg = ExperimentConfig::toy_unet();
    let mut vcfg = ExperimentConfig::toy_vocoder();
    if let Some(s) = steps {
        dcfg.training.training_steps = s;
        vcfg.training.training_steps = s;
    }
    let sr = dcfg.data.sample_rate;
    let corpus = synth_corpus(32, 2.0, sr, 0)?;
    let heldout = synth_corpus(4, 2.0, sr, 1)?;

    let t0 = Instant::now();
    let (vocoder, vreport) = train_vocoder(&vcfg, &corpus, 0, |log| {
        if log.step % 250 == 0 {
            println!("vocoder step {:5} loss {:.4}", log.step, log.loss);
        }
    })?;
    let sc = vocoder_heldout_convergence(&vocoder, &heldout)?;
    println!(
        "vocoder: {:.1}s, smoothed loss {:.4} -> {:.4}, held-out spectral convergence {sc:.4}",
        t0.elapsed().as_secs_f64(),
        vreport.initial_smoothed(100),
        vreport.final_smoothed(100)
    );

    let t0 = Instant::now();
    let (diffusion, dreport) = train_diffusion(&dcfg, &corpus, 0, |log| {
        if log.step % 250 == 0 {
            println!("diffusion step {:5} loss {:.4}", log.step, log.loss);
        }
    })?;
    println!(
        "diffusion: {:.1}s, smoothed loss {:.4} -> {:.4}",
        t0.elapsed().as_secs_f64(),
        dreport.initial_smoothed(100),
        dreport.final_smoothed(100)
    );

    vocoder.save(out.join("vocoder.ckpt"), true)?;
    diffusion.save(out.join("diffusion.ckpt"), true)?;
    std::fs::write(out.join("toy.yaml"), dcfg.to_yaml()?)?;
    println!("checkpoints written to {}", out.display());
    Ok(())
}
