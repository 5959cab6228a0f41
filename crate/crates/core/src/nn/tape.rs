use std::borrow::Cow;
use std::collections::BTreeMap;

use ndarray::{ArrayD, Axis, IxDyn, Zip};

use super::kernels::{self, Conv2dSpec};
use super::{
    add_broadcast_spatial_fwd, concat_axis1, feature_affine_fwd, permuted, reshaped, scalar, view1, view4, Backend,
    ParamStore,
};
use crate::error::Result;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Ln(Var),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    Gelu(Var),
    EluPlusOne(Var),
    SumAll(Var),
    MeanAll(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec },
    InstanceNorm { x: Var, eps: f64 },
    FeatureAffine { x: Var, gamma: Var, beta: Var },
    AddBroadcastSpatial { x: Var, bias: Var },
    Concat { a: Var, b: Var },
    Reshape(Var),
    Permute { x: Var, axes: Vec<usize> },
    LinearAttention { q: Var, k: Var, v: Var },
}

struct Node<'p> {
    value: Cow<'p, ArrayD<f64>>,
    op: Op,
    needs_grad: bool,
}

/// Records operations for reverse-mode differentiation.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    param_vars: BTreeMap<String, Var>,
}

/// Parameter gradients produced by [`Tape::backward`].
pub type Gradients = BTreeMap<String, ArrayD<f64>>;

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new(), param_vars: BTreeMap::new() }
    }

    fn push(&mut self, value: Cow<'p, ArrayD<f64>>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: ArrayD<f64>, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(Cow::Owned(value), op, needs_grad)
    }

    fn val(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a rank-0 node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let a = self.val(v);
        assert_eq!(a.len(), 1, "not a scalar");
        *a.iter().next().unwrap()
    }

    /// Backpropagates from a scalar node and returns the gradient of every
    /// parameter that took part in the computation.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(ArrayD::ones(self.val(root).raw_dim()));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let contribs = self.local_grads(idx, &g);
            for (parent, pg) in contribs {
                if !self.nodes[parent.0].needs_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => *acc += &pg,
                    slot @ None => *slot = Some(pg),
                }
            }
            // Leaf grads are needed after the sweep.
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        self.param_vars
            .iter()
            .map(|(name, v)| {
                let g = grads[v.0].take().unwrap_or_else(|| ArrayD::zeros(self.val(*v).raw_dim()));
                (name.clone(), g)
            })
            .collect()
    }

    fn local_grads(&self, idx: usize, g: &ArrayD<f64>) -> Vec<(Var, ArrayD<f64>)> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, -g)],
            Op::Mul(a, b) => vec![(*a, g * self.val(*b)), (*b, g * self.val(*a))],
            Op::Scale(a, s) => vec![(*a, g * *s)],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Exp(a) => vec![(*a, g * &*node.value)],
            Op::Ln(a) => vec![(*a, g / self.val(*a))],
            Op::Abs(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.val(*a)).for_each(|d, &x| *d *= if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 });
                vec![(*a, d)]
            }
            Op::Square(a) => vec![(*a, g * self.val(*a) * 2.0)],
            Op::Sqrt(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&*node.value).for_each(|d, &y| *d *= 0.5 / y);
                vec![(*a, d)]
            }
            Op::Gelu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.val(*a)).for_each(|d, &x| *d *= kernels::gelu_grad(x));
                vec![(*a, d)]
            }
            Op::EluPlusOne(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.val(*a)).for_each(|d, &x| *d *= kernels::elu_plus_one_grad(x));
                vec![(*a, d)]
            }
            Op::SumAll(a) => {
                let gv = *g.iter().next().unwrap();
                vec![(*a, ArrayD::from_elem(self.val(*a).raw_dim(), gv))]
            }
            Op::MeanAll(a) => {
                let n = self.val(*a).len() as f64;
                let gv = *g.iter().next().unwrap() / n;
                vec![(*a, ArrayD::from_elem(self.val(*a).raw_dim(), gv))]
            }
            Op::Conv2d { x, w, b, spec } => {
                let cg = kernels::conv2d_backward(view4(self.val(*x)), view4(self.val(*w)), view4(g), spec);
                let mut out = vec![(*x, cg.dx.into_dyn()), (*w, cg.dw.into_dyn())];
                if let Some(b) = b {
                    out.push((*b, cg.db.into_dyn()));
                }
                out
            }
            Op::ConvTranspose2d { x, w, b, spec } => {
                let cg = kernels::conv_transpose2d_backward(view4(self.val(*x)), view4(self.val(*w)), view4(g), spec);
                let mut out = vec![(*x, cg.dx.into_dyn()), (*w, cg.dw.into_dyn())];
                if let Some(b) = b {
                    out.push((*b, cg.db.into_dyn()));
                }
                out
            }
            Op::InstanceNorm { x, eps } => {
                vec![(*x, kernels::instance_norm_backward(view4(self.val(*x)), view4(g), *eps).into_dyn())]
            }
            Op::FeatureAffine { x, gamma, beta } => {
                let xv = view4(self.val(*x));
                let gv = view4(g);
                let gamma_v = view1(self.val(*gamma));
                let mut dx = g.clone();
                for mut sample in dx.outer_iter_mut() {
                    for (ci, mut plane) in sample.outer_iter_mut().enumerate() {
                        plane *= gamma_v[ci];
                    }
                }
                let dgamma = (&gv * &xv).sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
                let dbeta = gv.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
                vec![(*x, dx), (*gamma, dgamma.into_dyn()), (*beta, dbeta.into_dyn())]
            }
            Op::AddBroadcastSpatial { x, bias } => {
                let db = view4(g).sum_axis(Axis(3)).sum_axis(Axis(2));
                let (b, c) = db.dim();
                let db = db.into_shape_with_order(IxDyn(&[b, c, 1, 1])).expect("bias grad");
                vec![(*x, g.clone()), (*bias, db)]
            }
            Op::Concat { a, b } => {
                let ca = self.val(*a).shape()[1];
                let ga = g.slice_axis(Axis(1), ndarray::Slice::from(..ca)).to_owned();
                let gb = g.slice_axis(Axis(1), ndarray::Slice::from(ca..)).to_owned();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Reshape(x) => vec![(*x, reshaped(g, self.val(*x).shape()))],
            Op::Permute { x, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                vec![(*x, permuted(g, &inverse))]
            }
            Op::LinearAttention { q, k, v } => {
                let ag = kernels::linear_attention_backward(view4(self.val(*q)), view4(self.val(*k)), view4(self.val(*v)), view4(g));
                vec![(*q, ag.dfq.into_dyn()), (*k, ag.dfk.into_dyn()), (*v, ag.dv.into_dyn())]
            }
        }
    }
}

impl<'p> Backend for Tape<'p> {
    type T = Var;

    fn value<'v>(&'v self, x: &'v Var) -> &'v ArrayD<f64> {
        self.val(*x)
    }

    fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.param_vars.get(name) {
            return Ok(*v);
        }
        let value = self.params.get(name)?;
        let v = self.push(Cow::Borrowed(value), Op::Leaf, true);
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    fn constant(&mut self, value: ArrayD<f64>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Var {
        assert_eq!(self.val(*a).shape(), self.val(*b).shape());
        let v = self.val(*a) + self.val(*b);
        self.record(v, Op::Add(*a, *b), &[*a, *b])
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        assert_eq!(self.val(*a).shape(), self.val(*b).shape());
        let v = self.val(*a) - self.val(*b);
        self.record(v, Op::Sub(*a, *b), &[*a, *b])
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        assert_eq!(self.val(*a).shape(), self.val(*b).shape());
        let v = self.val(*a) * self.val(*b);
        self.record(v, Op::Mul(*a, *b), &[*a, *b])
    }

    fn scale(&mut self, a: &Var, s: f64) -> Var {
        let v = self.val(*a) * s;
        self.record(v, Op::Scale(*a, s), &[*a])
    }

    fn add_scalar(&mut self, a: &Var, s: f64) -> Var {
        let v = self.val(*a) + s;
        self.record(v, Op::AddScalar(*a), &[*a])
    }

    fn exp(&mut self, a: &Var) -> Var {
        let v = self.val(*a).mapv(f64::exp);
        self.record(v, Op::Exp(*a), &[*a])
    }

    fn ln(&mut self, a: &Var) -> Var {
        let v = self.val(*a).mapv(f64::ln);
        self.record(v, Op::Ln(*a), &[*a])
    }

    fn abs(&mut self, a: &Var) -> Var {
        let v = self.val(*a).mapv(f64::abs);
        self.record(v, Op::Abs(*a), &[*a])
    }

    fn square(&mut self, a: &Var) -> Var {
        let v = self.val(*a).mapv(|x| x * x);
        self.record(v, Op::Square(*a), &[*a])
    }

    fn sqrt(&mut self, a: &Var) -> Var {
        let v = self.val(*a).mapv(f64::sqrt);
        self.record(v, Op::Sqrt(*a), &[*a])
    }

    fn gelu(&mut self, a: &Var) -> Var {
        let v = self.val(*a).mapv(kernels::gelu);
        self.record(v, Op::Gelu(*a), &[*a])
    }

    fn elu_plus_one(&mut self, a: &Var) -> Var {
        let v = self.val(*a).mapv(kernels::elu_plus_one);
        self.record(v, Op::EluPlusOne(*a), &[*a])
    }

    fn sum_all(&mut self, a: &Var) -> Var {
        let v = scalar(self.val(*a).sum());
        self.record(v, Op::SumAll(*a), &[*a])
    }

    fn mean_all(&mut self, a: &Var) -> Var {
        let x = self.val(*a);
        let v = scalar(x.sum() / x.len() as f64);
        self.record(v, Op::MeanAll(*a), &[*a])
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>, spec: Conv2dSpec) -> Var {
        let v = kernels::conv2d(view4(self.val(*x)), view4(self.val(*w)), b.map(|b| view1(self.val(*b))), &spec).into_dyn();
        let mut parents = vec![*x, *w];
        parents.extend(b.copied());
        self.record(v, Op::Conv2d { x: *x, w: *w, b: b.copied(), spec }, &parents)
    }

    fn conv_transpose2d(&mut self, x: &Var, w: &Var, b: Option<&Var>, spec: Conv2dSpec) -> Var {
        let v = kernels::conv_transpose2d(view4(self.val(*x)), view4(self.val(*w)), b.map(|b| view1(self.val(*b))), &spec)
            .into_dyn();
        let mut parents = vec![*x, *w];
        parents.extend(b.copied());
        self.record(v, Op::ConvTranspose2d { x: *x, w: *w, b: b.copied(), spec }, &parents)
    }

    fn instance_norm(&mut self, x: &Var, eps: f64) -> Var {
        let v = kernels::instance_norm(view4(self.val(*x)), eps).into_dyn();
        self.record(v, Op::InstanceNorm { x: *x, eps }, &[*x])
    }

    fn feature_affine(&mut self, x: &Var, gamma: &Var, beta: &Var) -> Var {
        let v = feature_affine_fwd(self.val(*x), self.val(*gamma), self.val(*beta));
        self.record(v, Op::FeatureAffine { x: *x, gamma: *gamma, beta: *beta }, &[*x, *gamma, *beta])
    }

    fn add_broadcast_spatial(&mut self, x: &Var, bias: &Var) -> Var {
        let v = add_broadcast_spatial_fwd(self.val(*x), self.val(*bias));
        self.record(v, Op::AddBroadcastSpatial { x: *x, bias: *bias }, &[*x, *bias])
    }

    fn concat_features(&mut self, a: &Var, b: &Var) -> Var {
        let v = concat_axis1(self.val(*a), self.val(*b));
        self.record(v, Op::Concat { a: *a, b: *b }, &[*a, *b])
    }

    fn reshape(&mut self, x: &Var, shape: &[usize]) -> Var {
        let v = reshaped(self.val(*x), shape);
        self.record(v, Op::Reshape(*x), &[*x])
    }

    fn permute(&mut self, x: &Var, axes: &[usize]) -> Var {
        let v = permuted(self.val(*x), axes);
        self.record(v, Op::Permute { x: *x, axes: axes.to_vec() }, &[*x])
    }

    fn linear_attention(&mut self, fq: &Var, fk: &Var, v: &Var) -> Var {
        let out = kernels::linear_attention(view4(self.val(*fq)), view4(self.val(*fk)), view4(self.val(*v))).into_dyn();
        self.record(out, Op::LinearAttention { q: *fq, k: *fk, v: *v }, &[*fq, *fk, *v])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Eager, Init};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eager_and_tape_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamStore::new();
        ps.declare("w", &[4, 2, 3, 3], Init::FanIn(18), &mut rng);
        ps.declare("b", &[4], Init::FanIn(18), &mut rng);
        let x = ArrayD::from_shape_fn(IxDyn(&[1, 2, 2, 5]), |d| (d[3] as f64 - 2.0) * 0.3 + d[1] as f64);

        fn f<B: Backend>(bk: &mut B, x: &ArrayD<f64>) -> B::T {
            let x = bk.constant(x.clone());
            let w = bk.param("w").unwrap();
            let b = bk.param("b").unwrap();
            let y = bk.conv2d(&x, &w, Some(&b), Conv2dSpec::dense((1, 1)));
            let y = bk.gelu(&y);
            bk.mean_all(&y)
        }
        let mut eager = Eager::new(&ps);
        let e = f(&mut eager, &x);
        let mut tape = Tape::new(&ps);
        let t = f(&mut tape, &x);
        assert_eq!(e[[]], tape.scalar_value(t));
        let grads = tape.backward(t);
        assert_eq!(grads.len(), 2);
        assert_eq!(grads["w"].shape(), &[4, 2, 3, 3]);
    }

    #[test]
    fn concat_backward_splits_gradient() {
        let ps = ParamStore::new();
        let mut tape = Tape::new(&ps);
        let a = tape.constant(ArrayD::ones(IxDyn(&[1, 2, 1, 1])));
        let b = tape.constant(ArrayD::ones(IxDyn(&[1, 3, 1, 1])));
        let c = tape.concat_features(&a, &b);
        assert_eq!(tape.value(&c).shape(), &[1, 5, 1, 1]);
    }
}
