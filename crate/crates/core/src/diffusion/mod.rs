//! Gaussian diffusion over normalized mel spectrograms: noise schedule,
//! closed-form forward process, posterior algebra, the noise-prediction loss
//! and DDIM / RePaint samplers.

mod sampler;

use std::str::FromStr;

use ndarray::{ArrayD, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Backend;

pub use sampler::{
    ddim_sigma, ddim_step, denoise, jump_schedule, repaint_loop, sample_loop, timestep_grid, truncated_grid, RepaintJumps,
};

/// Offset of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
/// Upper clip for each beta.
pub const MAX_BETA: f64 = 0.999;

/// Per-timestep coefficients for `t = 1..=T`, stored at index `t - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    /// `alpha_bar[t - 2]`, with 1 at `t = 1`.
    pub alpha_bar_prev: Vec<f64>,
    pub posterior_variance: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::config("a schedule needs at least one timestep"));
        }
        if beta.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::config("betas must lie in (0, 1)"));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar: Vec<f64> = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let alpha_bar_prev: Vec<f64> = std::iter::once(1.0).chain(alpha_bar[..alpha_bar.len() - 1].iter().copied()).collect();
        let posterior_variance =
            (0..beta.len()).map(|i| (1.0 - alpha_bar_prev[i]) / (1.0 - alpha_bar[i]) * beta[i]).collect();
        Ok(Self { beta, alpha, alpha_bar, alpha_bar_prev, posterior_variance })
    }

    pub fn timesteps(&self) -> usize {
        self.beta.len()
    }

    /// Cumulative product at `t`, with `alpha_bar(0) = 1`.
    pub fn alpha_bar_at(&self, t: usize) -> Result<f64> {
        match t {
            0 => Ok(1.0),
            t if t <= self.timesteps() => Ok(self.alpha_bar[t - 1]),
            t => Err(Error::Timestep { t, max: self.timesteps() }),
        }
    }

    fn check_positive(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.timesteps() {
            return Err(Error::Timestep { t, max: self.timesteps() });
        }
        Ok(t - 1)
    }
}

/// Cosine schedule: `alpha_bar(t) = f(t) / f(0)` with
/// `f(t) = cos²(((t/T + s) / (1 + s)) · π/2)`.
pub fn cosine_schedule(timesteps: usize) -> Result<NoiseSchedule> {
    if timesteps == 0 {
        return Err(Error::config("timestep count must be at least 1"));
    }
    let f = |t: f64| {
        let x = (t / timesteps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
        x.cos().powi(2)
    };
    let beta = (1..=timesteps).map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).min(MAX_BETA)).collect();
    NoiseSchedule::from_betas(beta)
}

fn same_shape(a: &ArrayD<f64>, b: &ArrayD<f64>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `x_t = sqrt(ᾱ_t)·x0 + sqrt(1 - ᾱ_t)·eps`. `t = 0` returns `x0`.
pub fn forward_sample(x0: &ArrayD<f64>, t: usize, eps: &ArrayD<f64>, sched: &NoiseSchedule) -> Result<ArrayD<f64>> {
    same_shape(x0, eps, "forward sample")?;
    let ab = sched.alpha_bar_at(t)?;
    if t == 0 {
        return Ok(x0.clone());
    }
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(ndarray::Zip::from(x0).and(eps).map_collect(|&x, &e| a * x + b * e))
}

pub fn gaussian(shape: &[usize], rng: &mut impl Rng) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

/// What the second argument of [`posterior_mean_variance`] holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    X0,
    Eps,
}

impl FromStr for Parameterization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x0" => Ok(Self::X0),
            "eps" => Ok(Self::Eps),
            other => Err(Error::config(format!("unknown parameterization {other:?}; expected x0 or eps"))),
        }
    }
}

/// Mean and variance of `q(x_{t-1} | x_t, x_0)`, given either `x_0` or the
/// noise that produced `x_t` from it.
pub fn posterior_mean_variance(
    x_t: &ArrayD<f64>,
    x0_or_eps: &ArrayD<f64>,
    t: usize,
    sched: &NoiseSchedule,
    parameterization: Parameterization,
) -> Result<(ArrayD<f64>, f64)> {
    same_shape(x_t, x0_or_eps, "posterior")?;
    let i = sched.check_positive(t)?;
    let (beta, alpha, ab, ab_prev) = (sched.beta[i], sched.alpha[i], sched.alpha_bar[i], sched.alpha_bar_prev[i]);
    let mean = match parameterization {
        Parameterization::X0 => {
            let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
            let ct = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
            ndarray::Zip::from(x_t).and(x0_or_eps).map_collect(|&x, &x0| ct * x + c0 * x0)
        }
        Parameterization::Eps => {
            let ce = beta / (1.0 - ab).sqrt();
            let scale = 1.0 / alpha.sqrt();
            ndarray::Zip::from(x_t).and(x0_or_eps).map_collect(|&x, &e| scale * (x - ce * e))
        }
    };
    Ok((mean, sched.posterior_variance[i]))
}

/// Inference-time noise prediction on a single array.
pub trait NoisePredictor {
    fn predict_noise(&self, x: &ArrayD<f64>, t: usize) -> Result<ArrayD<f64>>;
}

/// Wraps a predictor so that the implied `x0 = (x - sqrt(1 - ab) eps) / sqrt(ab)`
/// is clamped to `range` and the noise re-derived from the clamped value.
/// Near `t = T` the division by `sqrt(ab)` amplifies any prediction error by
/// orders of magnitude; clamping keeps samples inside the data range.
pub struct ClampedX0<'s, P> {
    pub inner: P,
    pub sched: &'s NoiseSchedule,
    pub range: (f64, f64),
}

impl<P: NoisePredictor> NoisePredictor for ClampedX0<'_, P> {
    fn predict_noise(&self, x: &ArrayD<f64>, t: usize) -> Result<ArrayD<f64>> {
        let eps = self.inner.predict_noise(x, t)?;
        let ab = self.sched.alpha_bar_at(t)?;
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        if sb == 0.0 {
            return Ok(eps);
        }
        let (lo, hi) = self.range;
        Ok(ndarray::Zip::from(x).and(&eps).map_collect(|&xv, &e| {
            let x0 = ((xv - sb * e) / sa).clamp(lo, hi);
            (xv - sa * x0) / sb
        }))
    }
}

/// Differentiable noise prediction on a batch `[b, ...]` with one timestep per item.
pub trait NoiseModel {
    fn predict<B: Backend>(&self, backend: &mut B, x: B::T, t: &[usize]) -> Result<B::T>;
}

/// Mean squared error between `eps` and the model's prediction from the
/// forward-noised `x0`. `t` holds one timestep per batch item along axis 0.
pub fn training_loss<B: Backend, M: NoiseModel>(
    backend: &mut B,
    model: &M,
    x0: &ArrayD<f64>,
    t: &[usize],
    eps: &ArrayD<f64>,
    sched: &NoiseSchedule,
) -> Result<B::T> {
    same_shape(x0, eps, "training loss")?;
    if x0.ndim() == 0 || t.len() != x0.len_of(Axis(0)) {
        return Err(Error::shape(format!("{} timesteps for a batch of shape {:?}", t.len(), x0.shape())));
    }
    let mut x_t = x0.clone();
    for ((mut dst, (item, noise)), &ti) in
        x_t.axis_iter_mut(Axis(0)).zip(x0.axis_iter(Axis(0)).zip(eps.axis_iter(Axis(0)))).zip(t)
    {
        let ab = sched.alpha_bar_at(sched.check_positive(ti)? + 1)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        ndarray::Zip::from(&mut dst).and(&item).and(&noise).for_each(|d, &x, &e| *d = a * x + b * e);
    }
    let input = backend.constant(x_t);
    let pred = model.predict(backend, input, t)?;
    if backend.shape(&pred) != eps.shape() {
        return Err(Error::Contract(format!(
            "noise model returned shape {:?} for input {:?}",
            backend.shape(&pred),
            eps.shape()
        )));
    }
    let target = backend.constant(eps.clone());
    let diff = backend.sub(&pred, &target);
    let sq = backend.square(&diff);
    Ok(backend.mean_all(&sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradients, ScalarObjective};
    use crate::nn::{Eager, Init, ParamStore};
    use ndarray::IxDyn;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Fixed(ArrayD<f64>);

    impl NoisePredictor for Fixed {
        fn predict_noise(&self, _: &ArrayD<f64>, _: usize) -> Result<ArrayD<f64>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn clamped_x0_only_moves_out_of_range_predictions() {
        let sched = cosine_schedule(1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = gaussian(&[64], &mut rng).mapv(|v| v.clamp(-1.0, 1.0) * 0.9);
        let eps = gaussian(&[64], &mut rng);
        for t in [1, 500, 1000] {
            let x_t = forward_sample(&x0, t, &eps, &sched).unwrap();
            let exact = ClampedX0 { inner: Fixed(eps.clone()), sched: &sched, range: (-1.0, 1.0) };
            let got = exact.predict_noise(&x_t, t).unwrap();
            assert!((&got - &eps).iter().all(|d| d.abs() < 1e-6), "t={t}");

            let off = ClampedX0 { inner: Fixed(eps.mapv(|e| e + 3.0)), sched: &sched, range: (-1.0, 1.0) };
            let e = off.predict_noise(&x_t, t).unwrap();
            let ab = sched.alpha_bar_at(t).unwrap();
            let implied = (&x_t - &(e * (1.0 - ab).sqrt())) / ab.sqrt();
            assert!(implied.iter().all(|v| (-1.0 - 1e-9..=1.0 + 1e-9).contains(v)), "t={t}");
        }
    }

    fn constant_schedule(beta: f64, t: usize) -> NoiseSchedule {
        NoiseSchedule::from_betas(vec![beta; t]).unwrap()
    }

    #[test]
    fn cosine_schedule_is_monotone() {
        let s = cosine_schedule(1000).unwrap();
        assert_eq!(s.timesteps(), 1000);
        assert!(s.beta.windows(2).all(|w| w[1] > w[0]));
        assert!(s.beta.iter().all(|&b| b > 0.0 && b <= MAX_BETA));
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(s.posterior_variance[0], 0.0);
        assert!(s.alpha_bar[999] < 0.01);
        assert_eq!(s.alpha_bar_at(0).unwrap(), 1.0);
        assert!(matches!(cosine_schedule(0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn cosine_alpha_bar_matches_closed_form() {
        let s = cosine_schedule(1000).unwrap();
        let f = |t: f64| (((t / 1000.0 + 0.008) / 1.008) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        // Clipping only touches the very last step.
        for t in [1usize, 10, 500, 990] {
            assert!((s.alpha_bar[t - 1] - f(t as f64) / f(0.0)).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn forward_sample_trivial_cases() {
        let s = cosine_schedule(100).unwrap();
        let x0 = ArrayD::from_elem(IxDyn(&[3]), 2.0);
        let zero = ArrayD::zeros(IxDyn(&[3]));
        let ab = s.alpha_bar[49];
        assert_eq!(forward_sample(&x0, 50, &zero, &s).unwrap()[0], ab.sqrt() * 2.0);
        assert_eq!(forward_sample(&zero, 50, &x0, &s).unwrap()[0], (1.0 - ab).sqrt() * 2.0);
        assert_eq!(forward_sample(&x0, 0, &zero, &s).unwrap(), x0);
        assert!(matches!(forward_sample(&x0, 101, &zero, &s), Err(Error::Timestep { t: 101, max: 100 })));
        assert!(matches!(forward_sample(&x0, 5, &ArrayD::zeros(IxDyn(&[2])), &s), Err(Error::Shape(_))));
    }

    #[test]
    fn first_step_posterior_is_deterministic() {
        let s = constant_schedule(0.1, 5);
        let x = ArrayD::from_elem(IxDyn(&[2]), 0.3);
        let (_, var) = posterior_mean_variance(&x, &x, 1, &s, Parameterization::X0).unwrap();
        assert_eq!(var, 0.0);
        assert!(matches!("v".parse::<Parameterization>(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn posterior_forms_agree_on_scalar_example() {
        let s = constant_schedule(0.1, 2);
        let x0 = ArrayD::from_elem(IxDyn(&[1]), 1.0);
        let x_t = ArrayD::from_elem(IxDyn(&[1]), 0.4);
        let ab = 0.9f64 * 0.9;
        let eps = (&x_t - &(&x0 * ab.sqrt())) / (1.0 - ab).sqrt();
        let (m13, _) = posterior_mean_variance(&x_t, &x0, 2, &s, Parameterization::X0).unwrap();
        let (m15, _) = posterior_mean_variance(&x_t, &eps, 2, &s, Parameterization::Eps).unwrap();
        assert!((m13[0] - m15[0]).abs() < 1e-10);
        // Hand evaluation of the x0 form.
        let expected = 0.9f64.sqrt() * 0.1 / (1.0 - ab) * 0.4 + 0.9f64.sqrt() * 0.1 / (1.0 - ab) * 1.0;
        assert!((m13[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_eps_form() {
        let s = constant_schedule(0.2, 3);
        let x = ArrayD::from_elem(IxDyn(&[2]), 1.5);
        let (m, _) = posterior_mean_variance(&x, &ArrayD::zeros(IxDyn(&[2])), 3, &s, Parameterization::Eps).unwrap();
        assert!((m[0] - 1.5 / 0.8f64.sqrt()).abs() < 1e-15);
    }

    struct Perfect(ArrayD<f64>);

    impl NoiseModel for Perfect {
        fn predict<B: Backend>(&self, backend: &mut B, _x: B::T, _t: &[usize]) -> Result<B::T> {
            Ok(backend.constant(self.0.clone()))
        }
    }

    struct Zero;

    impl NoiseModel for Zero {
        fn predict<B: Backend>(&self, backend: &mut B, x: B::T, _t: &[usize]) -> Result<B::T> {
            Ok(backend.scale(&x, 0.0))
        }
    }

    struct Wrong;

    impl NoiseModel for Wrong {
        fn predict<B: Backend>(&self, backend: &mut B, _x: B::T, _t: &[usize]) -> Result<B::T> {
            Ok(backend.constant(ArrayD::zeros(IxDyn(&[1]))))
        }
    }

    #[test]
    fn loss_trivial_models() {
        let s = cosine_schedule(100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = gaussian(&[4, 50, 50], &mut rng);
        let eps = gaussian(&[4, 50, 50], &mut rng);
        let params = ParamStore::new();
        let mut eager = Eager::new(&params);
        let t = [3, 40, 77, 100];
        let l = training_loss(&mut eager, &Perfect(eps.clone()), &x0, &t, &eps, &s).unwrap();
        assert_eq!(l[[]], 0.0);
        let l = training_loss(&mut eager, &Zero, &x0, &t, &eps, &s).unwrap();
        assert!((l[[]] - 1.0).abs() < 0.05);
        assert!(matches!(training_loss(&mut eager, &Wrong, &x0, &t, &eps, &s), Err(Error::Contract(_))));
        assert!(matches!(training_loss(&mut eager, &Zero, &x0, &[0, 1, 2, 3], &eps, &s), Err(Error::Timestep { .. })));
    }

    /// `eps_hat = w * x + b`, elementwise over a `[b, 1, 1, n]` input.
    struct Linear;

    impl NoiseModel for Linear {
        fn predict<B: Backend>(&self, backend: &mut B, x: B::T, _t: &[usize]) -> Result<B::T> {
            let w = backend.param("w")?;
            let b = backend.param("b")?;
            Ok(backend.conv2d(&x, &w, Some(&b), crate::nn::Conv2dSpec::pointwise()))
        }
    }

    struct LossObjective {
        x0: ArrayD<f64>,
        eps: ArrayD<f64>,
        sched: NoiseSchedule,
    }

    impl ScalarObjective for LossObjective {
        fn eval<B: Backend>(&self, backend: &mut B) -> Result<B::T> {
            training_loss(backend, &Linear, &self.x0, &[7, 19], &self.eps, &self.sched)
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = ParamStore::new();
        params.declare("w", &[1, 1, 1, 1], Init::FanIn(1), &mut rng);
        params.declare("b", &[1], Init::FanIn(1), &mut rng);
        let f = LossObjective {
            x0: gaussian(&[2, 1, 1, 6], &mut rng),
            eps: gaussian(&[2, 1, 1, 6], &mut rng),
            sched: cosine_schedule(20).unwrap(),
        };
        let report = check_gradients(&params, &f, 1e-5, 16).unwrap();
        assert!(report.worst() < 1e-3, "{:?}", report.per_param);
    }

    proptest! {
        #[test]
        fn posterior_forms_agree(
            seed in any::<u64>(),
            t_frac in 0.0f64..1.0,
            steps in 1usize..200,
            beta_lo in 1e-4f64..0.01,
            beta_hi in 0.02f64..0.5,
        ) {
            let betas: Vec<f64> = (0..steps)
                .map(|i| beta_lo + (beta_hi - beta_lo) * i as f64 / steps.max(2) as f64)
                .collect();
            let s = NoiseSchedule::from_betas(betas).unwrap();
            let t = 1 + ((steps - 1) as f64 * t_frac) as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x0 = gaussian(&[3, 4], &mut rng);
            let eps = gaussian(&[3, 4], &mut rng);
            let x_t = forward_sample(&x0, t, &eps, &s).unwrap();
            let (a, va) = posterior_mean_variance(&x_t, &x0, t, &s, Parameterization::X0).unwrap();
            let (b, vb) = posterior_mean_variance(&x_t, &eps, t, &s, Parameterization::Eps).unwrap();
            prop_assert_eq!(va, vb);
            prop_assert!(va >= 0.0);
            let err = (&a - &b).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
            prop_assert!(err < 1e-8, "t={} err={}", t, err);
        }
    }
}
