//! Cosine noise schedule, the closed-form forward process and DDIM sampling
//! with a noise predictor that knows the answer.
//!
//! `cargo run --example diffusion_sampling`

use ndarray::ArrayD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use meldiff::diffusion::{cosine_schedule, denoise, forward_sample, gaussian, truncated_grid, NoisePredictor, NoiseSchedule};
use meldiff::Result;

/// Points every sample back at a fixed target.
struct Oracle<'a> {
    target: &'a ArrayD<f64>,
    sched: &'a NoiseSchedule,
}

impl NoisePredictor for Oracle<'_> {
    fn predict_noise(&self, x: &ArrayD<f64>, t: usize) -> Result<ArrayD<f64>> {
        let ab = self.sched.alpha_bar_at(t)?;
        Ok((x - &(self.target * ab.sqrt())) / (1.0 - ab).sqrt())
    }
}

fn main() -> Result<()> {
    let sched = cosine_schedule(1000)?;
    for t in [1, 250, 500, 750, 1000] {
        println!(
            "t={t:4}  beta {:.5}  alpha_bar {:.5}  posterior variance {:.5}",
            sched.beta[t - 1],
            sched.alpha_bar[t - 1],
            sched.posterior_variance[t - 1]
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x0 = gaussian(&[1, 8, 32], &mut rng);
    let oracle = Oracle { target: &x0, sched: &sched };
    for (t, steps) in [(200, 4), (600, 20), (1000, 50)] {
        let x_t = forward_sample(&x0, t, &gaussian(x0.shape(), &mut rng), &sched)?;
        let grid = truncated_grid(1000, steps, t)?;
        let out = denoise(&oracle, x_t, &grid, &sched, 0.0, &mut rng)?;
        let err = (&out - &x0).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
        println!("from t={t} in {} DDIM steps: max error {err:.2e}", grid.len() - 1);
    }
    Ok(())
}
