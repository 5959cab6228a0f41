use ndarray::{ArrayD, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forward_sample, gaussian, NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};

/// Standard deviation of the fresh noise in a DDIM step from `t` to `t_prev`.
pub fn ddim_sigma(sched: &NoiseSchedule, t: usize, t_prev: usize, eta: f64) -> Result<f64> {
    if t_prev >= t {
        return Err(Error::InvalidStep(format!("DDIM step must go backwards, got {t} -> {t_prev}")));
    }
    let (ab, ab_prev) = (sched.alpha_bar_at(t)?, sched.alpha_bar_at(t_prev)?);
    Ok(eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt())
}

/// One DDIM update from `t` to `t_prev`. Noise is drawn from `rng` only when
/// `eta > 0`.
pub fn ddim_step(
    x_t: &ArrayD<f64>,
    eps_pred: &ArrayD<f64>,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
    eta: f64,
    rng: &mut impl Rng,
) -> Result<ArrayD<f64>> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::config(format!("eta must be in [0, 1], got {eta}")));
    }
    if x_t.shape() != eps_pred.shape() {
        return Err(Error::Contract(format!("noise prediction {:?} for sample {:?}", eps_pred.shape(), x_t.shape())));
    }
    let sigma = ddim_sigma(sched, t, t_prev, eta)?;
    let (ab, ab_prev) = (sched.alpha_bar_at(t)?, sched.alpha_bar_at(t_prev)?);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let sa_prev = ab_prev.sqrt();
    let mut out = Zip::from(x_t).and(eps_pred).map_collect(|&x, &e| {
        let x0 = (x - sb * e) / sa;
        sa_prev * x0 + dir * e
    });
    if sigma > 0.0 {
        let z = gaussian(x_t.shape(), rng);
        out.zip_mut_with(&z, |o, &z| *o += sigma * z);
    }
    Ok(out)
}

/// Evenly spaced decreasing timesteps `[N·k, ..., 2k, k, 0]` with `k = T / N`.
pub fn timestep_grid(timesteps: usize, num_steps: usize) -> Result<Vec<usize>> {
    if num_steps == 0 || num_steps > timesteps {
        return Err(Error::config(format!("sampling steps must be in 1..={timesteps}, got {num_steps}")));
    }
    let stride = timesteps / num_steps;
    Ok((0..=num_steps).rev().map(|j| j * stride).collect())
}

/// The grid restricted to a start at `t`: `[t, grid points below t..., 0]`.
pub fn truncated_grid(timesteps: usize, num_steps: usize, t: usize) -> Result<Vec<usize>> {
    if t > timesteps {
        return Err(Error::Timestep { t, max: timesteps });
    }
    let grid = timestep_grid(timesteps, num_steps)?;
    let mut out = vec![t];
    out.extend(grid.into_iter().filter(|&g| g < t));
    if *out.last().expect("nonempty") != 0 {
        out.push(0);
    }
    Ok(out)
}

/// Runs DDIM along consecutive pairs of `times`, which must be decreasing.
pub fn denoise(
    model: &impl NoisePredictor,
    x: ArrayD<f64>,
    times: &[usize],
    sched: &NoiseSchedule,
    eta: f64,
    rng: &mut impl Rng,
) -> Result<ArrayD<f64>> {
    let mut x = x;
    for pair in times.windows(2) {
        let eps = model.predict_noise(&x, pair[0])?;
        x = ddim_step(&x, &eps, pair[0], pair[1], sched, eta, rng)?;
    }
    Ok(x)
}

/// Unconditional sampling from unit Gaussian noise.
pub fn sample_loop(
    model: &impl NoisePredictor,
    shape: &[usize],
    sched: &NoiseSchedule,
    num_steps: usize,
    eta: f64,
    seed: u64,
) -> Result<ArrayD<f64>> {
    let grid = timestep_grid(sched.timesteps(), num_steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian(shape, &mut rng);
    denoise(model, x, &grid, sched, eta, &mut rng)
}

/// Resampling parameters for mask-guided sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepaintJumps {
    /// Grid steps re-noised per jump.
    pub jump_length: usize,
    /// Passes over each jump window; 1 disables resampling.
    pub jump_n_sample: usize,
}

impl Default for RepaintJumps {
    fn default() -> Self {
        Self { jump_length: 10, jump_n_sample: 10 }
    }
}

/// Sequence of grid indices visited, starting at `num_steps` and ending at 0.
/// A rise between neighbours is a re-noising jump.
pub fn jump_schedule(num_steps: usize, jumps: RepaintJumps) -> Result<Vec<usize>> {
    if jumps.jump_length == 0 || jumps.jump_n_sample == 0 {
        return Err(Error::config("jump length and sample count must be at least 1"));
    }
    let mut remaining = std::collections::HashMap::new();
    if num_steps > jumps.jump_length {
        for j in (0..num_steps - jumps.jump_length).step_by(jumps.jump_length) {
            remaining.insert(j, jumps.jump_n_sample - 1);
        }
    }
    let mut t = num_steps;
    let mut out = vec![t];
    while t >= 1 {
        t -= 1;
        out.push(t);
        if let Some(left) = remaining.get_mut(&t).filter(|l| **l > 0) {
            *left -= 1;
            for _ in 0..jumps.jump_length {
                t += 1;
                out.push(t);
            }
        }
    }
    Ok(out)
}

/// Mask-guided sampling: where `mask` is 1 the result is pinned to a noised
/// copy of `known` at every step (and to `known` itself at the end), elsewhere
/// it is generated.
pub fn repaint_loop(
    model: &impl NoisePredictor,
    known: &ArrayD<f64>,
    mask: &ArrayD<f64>,
    sched: &NoiseSchedule,
    num_steps: usize,
    jumps: RepaintJumps,
    eta: f64,
    seed: u64,
) -> Result<ArrayD<f64>> {
    let mask = mask
        .broadcast(known.raw_dim())
        .ok_or_else(|| Error::Contract(format!("mask {:?} does not broadcast to {:?}", mask.shape(), known.shape())))?;
    if mask.iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::Contract("mask entries must be 0 or 1".into()));
    }
    let grid = timestep_grid(sched.timesteps(), num_steps)?;
    // Grid index i (0 = clean) to timestep.
    let time = |i: usize| grid[num_steps - i];
    let path = jump_schedule(num_steps, jumps)?;

    // Same stream layout as `sample_loop`; known-region and jump noise come
    // from a separate stream.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aux = ChaCha8Rng::seed_from_u64(seed);
    aux.set_stream(1);
    let mut x = gaussian(known.shape(), &mut rng);
    for pair in path.windows(2) {
        let (cur, next) = (time(pair[0]), time(pair[1]));
        if next < cur {
            let eps = model.predict_noise(&x, cur)?;
            let generated = ddim_step(&x, &eps, cur, next, sched, eta, &mut rng)?;
            let kept = if next == 0 { known.clone() } else { forward_sample(known, next, &gaussian(known.shape(), &mut aux), sched)? };
            x = Zip::from(&mask).and(&kept).and(&generated).map_collect(|&m, &k, &g| if m == 1.0 { k } else { g });
        } else {
            let ratio = sched.alpha_bar_at(next)? / sched.alpha_bar_at(cur)?;
            let z = gaussian(known.shape(), &mut aux);
            let (a, b) = (ratio.sqrt(), (1.0 - ratio).sqrt());
            x = Zip::from(&x).and(&z).map_collect(|&v, &z| a * v + b * z);
        }
    }
    Ok(x)
}
