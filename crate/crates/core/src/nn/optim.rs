use std::collections::BTreeMap;

use ndarray::{ArrayD, Zip};

use super::{Gradients, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. The learning rate is supplied per step so a
/// warmup schedule can drive it.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    first: BTreeMap<String, ArrayD<f64>>,
    second: BTreeMap<String, ArrayD<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            if p.shape() != g.shape() {
                return Err(Error::Contract(format!("gradient for `{name}` has shape {:?}, parameter {:?}", g.shape(), p.shape())));
            }
            let m = self.first.entry(name.clone()).or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let v = self.second.entry(name.clone()).or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr * sign(g) (up to eps).
        let mut ps = ParamStore::new();
        ps.insert("w", ArrayD::from_elem(IxDyn(&[2]), 1.0));
        let mut grads = Gradients::new();
        grads.insert("w".into(), ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.3, -2.0]).unwrap());
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut ps, &grads, 0.1).unwrap();
        let w = ps.get("w").unwrap();
        assert!((w[[0]] - 0.9).abs() < 1e-6);
        assert!((w[[1]] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut ps = ParamStore::new();
        ps.insert("w", ArrayD::from_elem(IxDyn(&[1]), 5.0));
        let mut adam = Adam::new(AdamConfig { beta1: 0.9, ..Default::default() });
        for _ in 0..2000 {
            let w = ps.get("w").unwrap()[[0]];
            let mut g = Gradients::new();
            g.insert("w".into(), ArrayD::from_elem(IxDyn(&[1]), 2.0 * (w - 2.0)));
            adam.step(&mut ps, &g, 0.05).unwrap();
        }
        assert!((ps.get("w").unwrap()[[0]] - 2.0).abs() < 1e-2);
    }
}
