//! Streaming feature scalers with momentum-decayed running statistics, and
//! the log-mel feature pipeline built from them.
//!
//! Statistics are kept per feature (mel bin). The feature axis is given as an
//! offset from the last axis, so `[c, f, l]` and `[b, c, f, l]` arrays share
//! the same scaler with `feature_axis_from_end = 2`.

use ndarray::{ArrayD, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalerMode {
    Training,
    Inference,
}

/// Floor applied to the min-max range.
pub const MINMAX_RANGE_EPS: f64 = 1e-8;

fn feature_axis(x: &ArrayD<f64>, from_end: usize) -> Result<Axis> {
    if from_end == 0 || from_end > x.ndim() {
        return Err(Error::shape(format!("array of rank {} has no feature axis {from_end} from the end", x.ndim())));
    }
    Ok(Axis(x.ndim() - from_end))
}

fn check_features(x: &ArrayD<f64>, axis: Axis, expected: usize) -> Result<()> {
    let n = x.len_of(axis);
    if n != expected {
        return Err(Error::shape(format!("scaler tracks {expected} features, input has {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("scaler input must be finite"));
    }
    Ok(())
}

/// Applies `f(feature_index, value)` elementwise along `axis`.
fn map_features(x: &ArrayD<f64>, axis: Axis, f: impl Fn(usize, f64) -> f64) -> ArrayD<f64> {
    let mut y = x.clone();
    for (i, mut lane) in y.axis_iter_mut(axis).enumerate() {
        lane.mapv_inplace(|v| f(i, v));
    }
    y
}

fn batch_moments(x: &ArrayD<f64>, axis: Axis) -> (Vec<f64>, Vec<f64>) {
    x.axis_iter(axis)
        .map(|lane| {
            let n = lane.len() as f64;
            let mean = lane.sum() / n;
            let var = lane.fold(0.0, |acc, &v| acc + (v - mean) * (v - mean)) / n;
            (mean, var)
        })
        .unzip()
}

fn batch_extrema(x: &ArrayD<f64>, axis: Axis) -> (Vec<f64>, Vec<f64>) {
    x.axis_iter(axis)
        .map(|lane| lane.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))))
        .unzip()
}

fn blend(running: &mut [f64], batch: &[f64], m: f64) {
    for (r, b) in running.iter_mut().zip(batch) {
        *r = (1.0 - m) * *r + m * b;
    }
}

/// Standardization with running mean and variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardScaler {
    pub num_features: usize,
    pub feature_axis_from_end: usize,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub decay: f64,
    pub eps: f64,
    pub initialized: bool,
    pub mode: ScalerMode,
}

impl StandardScaler {
    pub fn new(num_features: usize, feature_axis_from_end: usize, momentum: f64, decay: f64, eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) || !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::config(format!("need 0 <= momentum <= 1 and 0 < decay <= 1, got {momentum}, {decay}")));
        }
        Ok(Self {
            num_features,
            feature_axis_from_end,
            running_mean: vec![0.0; num_features],
            running_var: vec![1.0; num_features],
            momentum,
            decay,
            eps,
            initialized: false,
            mode: ScalerMode::Training,
        })
    }

    /// Scales `x`; in training mode the running statistics are updated and the
    /// batch statistics are used, in inference mode the running ones are.
    pub fn transform(&mut self, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        let axis = feature_axis(x, self.feature_axis_from_end)?;
        check_features(x, axis, self.num_features)?;
        let (mean, var) = match self.mode {
            ScalerMode::Training => {
                let (bm, bv) = batch_moments(x, axis);
                if !self.initialized {
                    self.running_mean = bm.clone();
                    self.running_var = bv.clone();
                    self.initialized = true;
                }
                self.momentum *= self.decay;
                blend(&mut self.running_mean, &bm, self.momentum);
                blend(&mut self.running_var, &bv, self.momentum);
                (bm, bv)
            }
            ScalerMode::Inference => {
                self.ensure_initialized()?;
                (self.running_mean.clone(), self.running_var.clone())
            }
        };
        let eps = self.eps;
        Ok(map_features(x, axis, |i, v| (v - mean[i]) / (var[i] + eps).sqrt()))
    }

    /// Inference-mode transform without touching state.
    pub fn apply(&self, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        let mut frozen = self.clone();
        frozen.mode = ScalerMode::Inference;
        frozen.transform(x)
    }

    pub fn inverse(&self, y: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        self.ensure_initialized()?;
        let axis = feature_axis(y, self.feature_axis_from_end)?;
        check_features(y, axis, self.num_features)?;
        Ok(map_features(y, axis, |i, v| v * (self.running_var[i] + self.eps).sqrt() + self.running_mean[i]))
    }

    fn ensure_initialized(&self) -> Result<()> {
        if !self.initialized {
            return Err(Error::State("standard scaler has no running statistics yet".into()));
        }
        Ok(())
    }
}

/// Min-max scaling into `[y_min, y_max]` with running extrema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub num_features: usize,
    pub feature_axis_from_end: usize,
    pub running_min: Vec<f64>,
    pub running_max: Vec<f64>,
    pub y_min: f64,
    pub y_max: f64,
    pub momentum: f64,
    pub decay: f64,
    pub initialized: bool,
    pub mode: ScalerMode,
}

impl MinMaxScaler {
    pub fn new(
        num_features: usize,
        feature_axis_from_end: usize,
        (y_min, y_max): (f64, f64),
        momentum: f64,
        decay: f64,
    ) -> Result<Self> {
        if y_min >= y_max {
            return Err(Error::config(format!("target range [{y_min}, {y_max}] is empty")));
        }
        if !(0.0..=1.0).contains(&momentum) || !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::config(format!("need 0 <= momentum <= 1 and 0 < decay <= 1, got {momentum}, {decay}")));
        }
        Ok(Self {
            num_features,
            feature_axis_from_end,
            running_min: vec![0.0; num_features],
            running_max: vec![1.0; num_features],
            y_min,
            y_max,
            momentum,
            decay,
            initialized: false,
            mode: ScalerMode::Training,
        })
    }

    pub fn transform(&mut self, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        let axis = feature_axis(x, self.feature_axis_from_end)?;
        check_features(x, axis, self.num_features)?;
        let (lo, hi) = match self.mode {
            ScalerMode::Training => {
                let (bmin, bmax) = batch_extrema(x, axis);
                if !self.initialized {
                    self.running_min = bmin.clone();
                    self.running_max = bmax.clone();
                    self.initialized = true;
                }
                self.momentum *= self.decay;
                blend(&mut self.running_min, &bmin, self.momentum);
                blend(&mut self.running_max, &bmax, self.momentum);
                (bmin, bmax)
            }
            ScalerMode::Inference => {
                self.ensure_initialized()?;
                (self.running_min.clone(), self.running_max.clone())
            }
        };
        let (y_min, y_max) = (self.y_min, self.y_max);
        Ok(map_features(x, axis, |i, v| {
            let range = (hi[i] - lo[i]).max(MINMAX_RANGE_EPS);
            let y = (v - lo[i]) / range * (y_max - y_min) + y_min;
            y.clamp(y_min, y_max)
        }))
    }

    pub fn apply(&self, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        let mut frozen = self.clone();
        frozen.mode = ScalerMode::Inference;
        frozen.transform(x)
    }

    pub fn inverse(&self, y: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        self.ensure_initialized()?;
        let axis = feature_axis(y, self.feature_axis_from_end)?;
        check_features(y, axis, self.num_features)?;
        Ok(map_features(y, axis, |i, v| {
            let range = (self.running_max[i] - self.running_min[i]).max(MINMAX_RANGE_EPS);
            (v - self.y_min) / (self.y_max - self.y_min) * range + self.running_min[i]
        }))
    }

    fn ensure_initialized(&self) -> Result<()> {
        if !self.initialized {
            return Err(Error::State("min-max scaler has no running statistics yet".into()));
        }
        Ok(())
    }
}

/// Offset inside `ln(mel + eps)`.
pub const LOG_MEL_EPS: f64 = 1e-5;

/// `ln(mel + eps)` followed by standard scaling and min-max scaling to
/// `[-1, 1]`, all per mel bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub standard: StandardScaler,
    pub minmax: MinMaxScaler,
    pub log_eps: f64,
}

impl FeatureScaler {
    pub fn new(n_mels: usize, momentum: f64, decay: f64) -> Result<Self> {
        Ok(Self {
            standard: StandardScaler::new(n_mels, 2, momentum, decay, 1e-5)?,
            minmax: MinMaxScaler::new(n_mels, 2, (-1.0, 1.0), momentum, decay)?,
            log_eps: LOG_MEL_EPS,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.standard.num_features
    }

    pub fn set_mode(&mut self, mode: ScalerMode) {
        self.standard.mode = mode;
        self.minmax.mode = mode;
    }

    pub fn is_initialized(&self) -> bool {
        self.standard.initialized && self.minmax.initialized
    }

    /// Linear mel magnitudes to model space, updating statistics in training mode.
    pub fn transform(&mut self, mel: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        let log = self.log(mel)?;
        let z = self.standard.transform(&log)?;
        self.minmax.transform(&z)
    }

    /// Linear mel magnitudes to model space using running statistics.
    pub fn apply(&self, mel: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        let log = self.log(mel)?;
        self.minmax.apply(&self.standard.apply(&log)?)
    }

    /// Model space back to log-mel.
    pub fn inverse_to_log(&self, y: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        self.standard.inverse(&self.minmax.inverse(y)?)
    }

    /// Model space back to linear mel magnitudes (clamped at zero).
    pub fn inverse(&self, y: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        Ok(self.inverse_to_log(y)?.mapv(|v| (v.exp() - self.log_eps).max(0.0)))
    }

    fn log(&self, mel: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        if mel.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::input("mel magnitudes must be finite and non-negative"));
        }
        Ok(mel.mapv(|v| (v + self.log_eps).ln()))
    }
}
