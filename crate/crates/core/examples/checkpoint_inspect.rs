//! Reads a checkpoint and prints its header, weight groups and scaler state.
//!
//! `cargo run --example checkpoint_inspect -- target/toy/diffusion.ckpt`

use meldiff::checkpoint::Checkpoint;
use meldiff::Result;

fn main() -> Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "target/toy/diffusion.ckpt".into());
    let ckpt = Checkpoint::load(&path)?;
    println!("{path}: {:?} checkpoint at step {}, config hash {}", ckpt.kind, ckpt.step, ckpt.config.hash());
    for (group, store) in &ckpt.groups {
        let total: usize = store.iter().map(|(_, a)| a.len()).sum();
        println!("  group {group}: {} arrays, {total} values", store.len());
    }
    let s = &ckpt.scaler;
    println!(
        "  scaler: {} mel bins, momentum {:.5}, output range [{}, {}]",
        s.n_mels(),
        s.standard.momentum,
        s.minmax.y_min,
        s.minmax.y_max
    );
    Ok(())
}
