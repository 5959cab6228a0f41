use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmaConfig {
    pub decay: f64,
    pub start_step: u64,
    pub update_every: u64,
}

impl Default for EmaConfig {
    fn default() -> Self {
        Self { decay: 0.995, start_step: 2000, update_every: 10 }
    }
}

/// Before `start_step` the average tracks the weights exactly; afterwards it
/// is blended every `update_every` steps.
pub fn ema_update(ema: &mut ParamStore, params: &ParamStore, cfg: &EmaConfig, step: u64) -> Result<()> {
    ema.ensure_same_layout(params)?;
    if step < cfg.start_step {
        for ((_, e), (_, p)) in ema.iter_mut().zip(params.iter()) {
            e.assign(p);
        }
    } else if step % cfg.update_every.max(1) == 0 {
        let d = cfg.decay;
        for ((_, e), (_, p)) in ema.iter_mut().zip(params.iter()) {
            e.zip_mut_with(p, |e, &p| *e = d * *e + (1.0 - d) * p);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use ndarray::{ArrayD, IxDyn};

    fn single(v: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", ArrayD::from_elem(IxDyn(&[2]), v));
        p
    }

    #[test]
    fn warmup_copies_bitwise() {
        let mut ema = single(0.0);
        let params = single(0.123456789);
        ema_update(&mut ema, &params, &EmaConfig::default(), 1999).unwrap();
        assert_eq!(ema, params);
    }

    #[test]
    fn single_update_value() {
        let mut ema = single(0.0);
        ema_update(&mut ema, &single(1.0), &EmaConfig::default(), 2000).unwrap();
        assert!((ema.get("w").unwrap()[0] - 0.005).abs() < 1e-15);
        // Off-cadence steps leave the average alone.
        ema_update(&mut ema, &single(1.0), &EmaConfig::default(), 2003).unwrap();
        assert!((ema.get("w").unwrap()[0] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn constant_weights_are_a_fixed_point() {
        let mut ema = single(2.5);
        for step in 2000..3000 {
            ema_update(&mut ema, &single(2.5), &EmaConfig::default(), step).unwrap();
        }
        assert_eq!(ema, single(2.5));
    }

    #[test]
    fn layout_mismatch_is_contract_error() {
        let mut ema = single(0.0);
        let mut other = ParamStore::new();
        other.insert("v", ArrayD::zeros(IxDyn(&[2])));
        assert!(matches!(ema_update(&mut ema, &other, &EmaConfig::default(), 0), Err(Error::Contract(_))));
    }
}
