//! Streaming log, standardize and min-max scaling of mel features, showing
//! running statistics and the exact inverse.
//!
//! `cargo run --example feature_scaling`

use meldiff::corpus::synth_corpus;
use meldiff::dsp::{FrontEnd, FrontEndConfig};
use meldiff::scaling::{FeatureScaler, ScalerMode};
use meldiff::Result;

fn main() -> Result<()> {
    let fe = FrontEnd::new(FrontEndConfig::toy())?;
    let n_mels = fe.config.n_mels;
    let mut scaler = FeatureScaler::new(n_mels, 0.05, 0.99)?;

    for (i, audio) in synth_corpus(6, 1.0, fe.config.sample_rate, 0)?.iter().enumerate() {
        let mel = fe.mel(audio)?.into_dyn();
        let y = scaler.transform(&mel)?;
        let (lo, hi) = y.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        println!(
            "batch {i}: output in [{lo:.2}, {hi:.2}], running mean[0] {:.3}, momentum {:.4}",
            scaler.standard.running_mean[0], scaler.standard.momentum
        );
    }

    scaler.set_mode(ScalerMode::Inference);
    let probe = fe.mel(&synth_corpus(1, 1.0, fe.config.sample_rate, 9)?[0])?.into_dyn();
    let y = scaler.apply(&probe)?;
    let back = scaler.inverse(&y)?;
    let rel = (&back - &probe).mapv(f64::abs).sum() / probe.mapv(f64::abs).sum();
    println!("inference: relative inverse error {rel:.2e} (clamping only affects out-of-range values)");
    Ok(())
}
