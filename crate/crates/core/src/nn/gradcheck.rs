//! Central finite-difference verification of tape gradients.

use super::{Backend, Eager, ParamStore, Tape};
use crate::error::Result;

/// A scalar-valued computation over the parameters of a store.
pub trait ScalarObjective {
    fn eval<B: Backend>(&self, backend: &mut B) -> Result<B::T>;
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `(parameter, ||analytic - numeric|| / (||analytic|| + ||numeric||))`.
    pub per_param: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

fn eval_eager(params: &ParamStore, f: &impl ScalarObjective) -> Result<f64> {
    let mut eager = Eager::new(params);
    let out = f.eval(&mut eager)?;
    Ok(*out.iter().next().expect("scalar objective"))
}

/// Compares backpropagated gradients with central differences of step `h`.
///
/// At most `max_entries` entries per parameter are probed, spread evenly over
/// the flattened array.
pub fn check_gradients(params: &ParamStore, f: &impl ScalarObjective, h: f64, max_entries: usize) -> Result<GradCheckReport> {
    let mut tape = Tape::new(params);
    let root = f.eval(&mut tape)?;
    let grads = tape.backward(root);
    let mut probe = params.clone();
    let mut per_param = Vec::new();
    for (name, analytic) in &grads {
        let n = analytic.len();
        let stride = n.div_ceil(max_entries.max(1)).max(1);
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for flat in (0..n).step_by(stride) {
            let original = probe.get(name)?.as_slice_memory_order().expect("contiguous")[flat];
            let set = |store: &mut ParamStore, v: f64| -> Result<()> {
                store.get_mut(name)?.as_slice_memory_order_mut().expect("contiguous")[flat] = v;
                Ok(())
            };
            set(&mut probe, original + h)?;
            let plus = eval_eager(&probe, f)?;
            set(&mut probe, original - h)?;
            let minus = eval_eager(&probe, f)?;
            set(&mut probe, original)?;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.as_slice_memory_order().expect("contiguous")[flat];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let denom = (a2.sqrt() + n2.sqrt()).max(1e-7);
        per_param.push((name.clone(), diff2.sqrt() / denom));
    }
    Ok(GradCheckReport { per_param })
}
