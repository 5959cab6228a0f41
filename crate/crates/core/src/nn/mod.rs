//! A small reverse-mode differentiation engine.
//!
//! Model code is written once against [`Backend`]. [`Eager`] evaluates it
//! directly (inference), [`Tape`] records it for backpropagation (training
//! and gradient checks). Both share the kernels in [`kernels`].

pub mod gradcheck;
pub mod kernels;
pub mod optim;
mod params;
mod tape;

use ndarray::{ArrayD, Axis, Ix1, Ix4, IxDyn};

pub use kernels::Conv2dSpec;
pub use params::{Init, ParamStore};
pub use tape::{Gradients, Tape, Var};

use crate::error::Result;

/// Tensor operations needed by the models and losses in this crate.
///
/// Shape errors inside these ops are programming errors and panic; callers
/// validate user-facing shapes before building a computation.
pub trait Backend {
    type T: Clone;

    fn value<'v>(&'v self, x: &'v Self::T) -> &'v ArrayD<f64>;
    fn shape(&self, x: &Self::T) -> Vec<usize> {
        self.value(x).shape().to_vec()
    }

    fn param(&mut self, name: &str) -> Result<Self::T>;
    fn constant(&mut self, value: ArrayD<f64>) -> Self::T;

    fn add(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn sub(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn mul(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn scale(&mut self, a: &Self::T, s: f64) -> Self::T;
    fn add_scalar(&mut self, a: &Self::T, s: f64) -> Self::T;
    fn exp(&mut self, a: &Self::T) -> Self::T;
    fn ln(&mut self, a: &Self::T) -> Self::T;
    fn abs(&mut self, a: &Self::T) -> Self::T;
    fn square(&mut self, a: &Self::T) -> Self::T;
    fn sqrt(&mut self, a: &Self::T) -> Self::T;
    fn gelu(&mut self, a: &Self::T) -> Self::T;
    fn elu_plus_one(&mut self, a: &Self::T) -> Self::T;
    fn sum_all(&mut self, a: &Self::T) -> Self::T;
    fn mean_all(&mut self, a: &Self::T) -> Self::T;

    fn conv2d(&mut self, x: &Self::T, w: &Self::T, b: Option<&Self::T>, spec: Conv2dSpec) -> Self::T;
    fn conv_transpose2d(&mut self, x: &Self::T, w: &Self::T, b: Option<&Self::T>, spec: Conv2dSpec) -> Self::T;
    fn instance_norm(&mut self, x: &Self::T, eps: f64) -> Self::T;
    /// `x * gamma[c] + beta[c]` over axis 1.
    fn feature_affine(&mut self, x: &Self::T, gamma: &Self::T, beta: &Self::T) -> Self::T;
    /// Adds a `[b, c, 1, 1]` tensor to every spatial position of `[b, c, h, w]`.
    fn add_broadcast_spatial(&mut self, x: &Self::T, bias: &Self::T) -> Self::T;
    fn concat_features(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn reshape(&mut self, x: &Self::T, shape: &[usize]) -> Self::T;
    fn permute(&mut self, x: &Self::T, axes: &[usize]) -> Self::T;
    /// Kernelized attention on `[b, heads, dim, tokens]` feature-mapped inputs.
    fn linear_attention(&mut self, fq: &Self::T, fk: &Self::T, v: &Self::T) -> Self::T;
}

/// Direct evaluation; intermediate arrays are dropped as soon as they go out
/// of scope.
pub struct Eager<'p> {
    params: &'p ParamStore,
}

impl<'p> Eager<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params }
    }
}

pub(crate) fn view4(a: &ArrayD<f64>) -> ndarray::ArrayView4<'_, f64> {
    a.view().into_dimensionality::<Ix4>().expect("expected a rank-4 tensor")
}

pub(crate) fn view1(a: &ArrayD<f64>) -> ndarray::ArrayView1<'_, f64> {
    a.view().into_dimensionality::<Ix1>().expect("expected a rank-1 tensor")
}

pub(crate) fn scalar(v: f64) -> ArrayD<f64> {
    ArrayD::from_elem(IxDyn(&[]), v)
}

pub(crate) fn permuted(x: &ArrayD<f64>, axes: &[usize]) -> ArrayD<f64> {
    x.view().permuted_axes(IxDyn(axes)).as_standard_layout().into_owned()
}

pub(crate) fn reshaped(x: &ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    x.as_standard_layout().into_owned().into_shape_with_order(IxDyn(shape)).expect("reshape preserves size")
}

pub(crate) fn concat_axis1(a: &ArrayD<f64>, b: &ArrayD<f64>) -> ArrayD<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("concat shapes agree except features")
}

pub(crate) fn feature_affine_fwd(x: &ArrayD<f64>, gamma: &ArrayD<f64>, beta: &ArrayD<f64>) -> ArrayD<f64> {
    let mut y = x.clone();
    let g = view1(gamma);
    let b = view1(beta);
    for mut sample in y.outer_iter_mut() {
        for (ci, mut plane) in sample.outer_iter_mut().enumerate() {
            let (gv, bv) = (g[ci], b[ci]);
            plane.mapv_inplace(|v| v * gv + bv);
        }
    }
    y
}

pub(crate) fn add_broadcast_spatial_fwd(x: &ArrayD<f64>, bias: &ArrayD<f64>) -> ArrayD<f64> {
    let bias = view4(bias);
    let mut y = x.clone();
    for (bi, mut sample) in y.outer_iter_mut().enumerate() {
        for (ci, mut plane) in sample.outer_iter_mut().enumerate() {
            plane += bias[[bi, ci, 0, 0]];
        }
    }
    y
}

impl Backend for Eager<'_> {
    type T = ArrayD<f64>;

    fn value<'v>(&'v self, x: &'v Self::T) -> &'v ArrayD<f64> {
        x
    }

    fn param(&mut self, name: &str) -> Result<Self::T> {
        Ok(self.params.get(name)?.clone())
    }

    fn constant(&mut self, value: ArrayD<f64>) -> Self::T {
        value
    }

    fn add(&mut self, a: &Self::T, b: &Self::T) -> Self::T {
        assert_eq!(a.shape(), b.shape());
        a + b
    }

    fn sub(&mut self, a: &Self::T, b: &Self::T) -> Self::T {
        assert_eq!(a.shape(), b.shape());
        a - b
    }

    fn mul(&mut self, a: &Self::T, b: &Self::T) -> Self::T {
        assert_eq!(a.shape(), b.shape());
        a * b
    }

    fn scale(&mut self, a: &Self::T, s: f64) -> Self::T {
        a * s
    }

    fn add_scalar(&mut self, a: &Self::T, s: f64) -> Self::T {
        a + s
    }

    fn exp(&mut self, a: &Self::T) -> Self::T {
        a.mapv(f64::exp)
    }

    fn ln(&mut self, a: &Self::T) -> Self::T {
        a.mapv(f64::ln)
    }

    fn abs(&mut self, a: &Self::T) -> Self::T {
        a.mapv(f64::abs)
    }

    fn square(&mut self, a: &Self::T) -> Self::T {
        a.mapv(|v| v * v)
    }

    fn sqrt(&mut self, a: &Self::T) -> Self::T {
        a.mapv(f64::sqrt)
    }

    fn gelu(&mut self, a: &Self::T) -> Self::T {
        a.mapv(kernels::gelu)
    }

    fn elu_plus_one(&mut self, a: &Self::T) -> Self::T {
        a.mapv(kernels::elu_plus_one)
    }

    fn sum_all(&mut self, a: &Self::T) -> Self::T {
        scalar(a.sum())
    }

    fn mean_all(&mut self, a: &Self::T) -> Self::T {
        scalar(a.sum() / a.len() as f64)
    }

    fn conv2d(&mut self, x: &Self::T, w: &Self::T, b: Option<&Self::T>, spec: Conv2dSpec) -> Self::T {
        kernels::conv2d(view4(x), view4(w), b.map(view1), &spec).into_dyn()
    }

    fn conv_transpose2d(&mut self, x: &Self::T, w: &Self::T, b: Option<&Self::T>, spec: Conv2dSpec) -> Self::T {
        kernels::conv_transpose2d(view4(x), view4(w), b.map(view1), &spec).into_dyn()
    }

    fn instance_norm(&mut self, x: &Self::T, eps: f64) -> Self::T {
        kernels::instance_norm(view4(x), eps).into_dyn()
    }

    fn feature_affine(&mut self, x: &Self::T, gamma: &Self::T, beta: &Self::T) -> Self::T {
        feature_affine_fwd(x, gamma, beta)
    }

    fn add_broadcast_spatial(&mut self, x: &Self::T, bias: &Self::T) -> Self::T {
        add_broadcast_spatial_fwd(x, bias)
    }

    fn concat_features(&mut self, a: &Self::T, b: &Self::T) -> Self::T {
        concat_axis1(a, b)
    }

    fn reshape(&mut self, x: &Self::T, shape: &[usize]) -> Self::T {
        reshaped(x, shape)
    }

    fn permute(&mut self, x: &Self::T, axes: &[usize]) -> Self::T {
        permuted(x, axes)
    }

    fn linear_attention(&mut self, fq: &Self::T, fk: &Self::T, v: &Self::T) -> Self::T {
        kernels::linear_attention(view4(fq), view4(fk), view4(v)).into_dyn()
    }
}
