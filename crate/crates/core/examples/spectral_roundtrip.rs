//! STFT, mel projection and Griffin-Lim phase recovery on a synthetic clip.
//!
//! `cargo run --example spectral_roundtrip`

use meldiff::corpus::synth_corpus;
use meldiff::dsp::{istft, stft, FrontEnd, FrontEndConfig, GriffinLim, Spectrogram, SpectrogramKind};
use meldiff::Result;

fn main() -> Result<()> {
    let fe = FrontEnd::new(FrontEndConfig::full_size())?;
    let sr = fe.config.sample_rate;
    let audio = synth_corpus(1, 2.0, sr, 3)?.remove(0);

    let spec = stft(&audio, &fe.stft)?;
    let back = istft(&spec, &fe.stft)?;
    let n = back.len().min(audio.len());
    let err = (0..n)
        .map(|i| (back.samples()[[0, i]] - audio.samples()[[0, i]]).abs())
        .fold(0.0, f64::max);
    println!("{} samples -> {} frames; STFT round trip max error {err:.2e}", audio.len(), spec.frames());

    let mel = fe.mel(&audio)?;
    println!("mel spectrogram {:?}, peak {:.3}", mel.dim(), mel.iter().cloned().fold(0.0, f64::max));

    let mag = Spectrogram::new(spec.magnitude(), SpectrogramKind::Magnitude, sr);
    for (iterations, momentum) in [(32, 0.0), (32, 0.99), (200, 0.99)] {
        let report = GriffinLim { iterations, momentum, seed: Some(0) }.run(&mag, &fe.stft)?;
        println!("Griffin-Lim {iterations:3} iterations, momentum {momentum:.2}: spectral convergence {:.4}", report.convergence);
    }
    Ok(())
}
