use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

/// Weight initialization rule for a freshly declared parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    Constant(f64),
}

/// Named parameter arrays, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    arrays: BTreeMap<String, ArrayD<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut impl Rng) {
        let value = match init {
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                ArrayD::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
            }
            Init::Constant(v) => ArrayD::from_elem(IxDyn(shape), v),
        };
        self.insert(name, value);
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        self.arrays.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.arrays.get(name).ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ArrayD<f64>> {
        self.arrays.get_mut(name).ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.arrays.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ArrayD<f64>)> {
        self.arrays.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_elements(&self) -> usize {
        self.arrays.values().map(ArrayD::len).sum()
    }

    /// Errors unless both stores hold the same names with the same shapes.
    pub fn ensure_same_layout(&self, other: &ParamStore) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Contract(format!("parameter sets differ in size: {} vs {}", self.len(), other.len())));
        }
        for ((a, av), (b, bv)) in self.arrays.iter().zip(other.arrays.iter()) {
            if a != b {
                return Err(Error::Contract(format!("parameter name mismatch: `{a}` vs `{b}`")));
            }
            if av.shape() != bv.shape() {
                return Err(Error::Contract(format!("parameter `{a}` shape {:?} vs {:?}", av.shape(), bv.shape())));
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.values().all(|a| a.iter().all(|v| v.is_finite()))
    }
}
