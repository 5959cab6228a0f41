use ndarray::{ArrayBase, Data, Dimension, Zip};

use crate::error::{Error, Result};

/// Guard added to the Frobenius norm of the target.
pub const SPECTRAL_CONVERGENCE_EPS: f64 = 1e-8;
/// Offset inside the logarithms of the log-magnitude loss.
pub const LOG_MAGNITUDE_EPS: f64 = 1e-5;

fn check_pair<S, D>(target: &ArrayBase<S, D>, pred: &ArrayBase<S, D>) -> Result<()>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    if target.shape() != pred.shape() {
        return Err(Error::shape(format!("target {:?} vs prediction {:?}", target.shape(), pred.shape())));
    }
    if target.iter().chain(pred.iter()).any(|&v| v < 0.0 || v.is_nan()) {
        return Err(Error::input("magnitudes must be non-negative"));
    }
    Ok(())
}

/// `||target - pred||_F / (||target||_F + eps)`.
pub fn spectral_convergence_loss<S, D>(target: &ArrayBase<S, D>, pred: &ArrayBase<S, D>) -> Result<f64>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    check_pair(target, pred)?;
    let mut diff = 0.0;
    let mut norm = 0.0;
    Zip::from(target).and(pred).for_each(|&t, &p| {
        diff += (t - p) * (t - p);
        norm += t * t;
    });
    Ok(diff.sqrt() / (norm.sqrt() + SPECTRAL_CONVERGENCE_EPS))
}

/// Mean absolute difference of `ln(x + eps)`.
pub fn log_magnitude_loss<S, D>(target: &ArrayBase<S, D>, pred: &ArrayBase<S, D>, eps: f64) -> Result<f64>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    check_pair(target, pred)?;
    if target.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    Zip::from(target).and(pred).for_each(|&t, &p| total += ((t + eps).ln() - (p + eps).ln()).abs());
    Ok(total / target.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spectral_convergence_hand_values() {
        let t = array![[3.0, 4.0]];
        assert!((spectral_convergence_loss(&t, &t).unwrap()).abs() < 1e-15);
        assert!((spectral_convergence_loss(&t, &array![[0.0, 0.0]]).unwrap() - 1.0).abs() < 1e-8);
        assert!((spectral_convergence_loss(&t, &array![[3.0, 0.0]]).unwrap() - 0.8).abs() < 1e-8);
    }

    #[test]
    fn zero_target_is_guarded() {
        let z = array![[0.0, 0.0]];
        let v = spectral_convergence_loss(&z, &array![[1.0, 0.0]]).unwrap();
        assert!(v.is_finite() && v > 1e6);
        assert_eq!(spectral_convergence_loss(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn log_magnitude_hand_values() {
        let eps = LOG_MAGNITUDE_EPS;
        let t = array![[std::f64::consts::E - eps]];
        let p = array![[1.0 - eps]];
        assert!((log_magnitude_loss(&t, &p, eps).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(log_magnitude_loss(&t, &t, eps).unwrap(), 0.0);
    }

    #[test]
    fn log_magnitude_matches_elementwise_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = Array2::from_shape_simple_fn((7, 5), || rng.random_range(0.0..3.0));
        let p = Array2::from_shape_simple_fn((7, 5), || rng.random_range(0.0..3.0));
        let mut sum = 0.0;
        for i in 0..7 {
            for j in 0..5 {
                sum += ((t[[i, j]] + 1e-5f64).ln() - (p[[i, j]] + 1e-5f64).ln()).abs();
            }
        }
        assert!((log_magnitude_loss(&t, &p, 1e-5).unwrap() - sum / 35.0).abs() < 1e-9);
    }

    #[test]
    fn negative_magnitudes_rejected() {
        let t = array![[1.0, -1.0]];
        assert!(matches!(log_magnitude_loss(&t, &t, 1e-5), Err(Error::InvalidInput(_))));
        assert!(matches!(spectral_convergence_loss(&array![[1.0]], &array![[1.0, 2.0]]), Err(Error::Shape(_))));
    }
}
