//! Building blocks shared by the U-Net and the vocoder.
//!
//! Latent features use the `[batch, features, channels, frames]` layout, so
//! audio channels are a spatial axis and one parameter set serves any channel
//! count.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Backend, Conv2dSpec, Init, ParamStore};

pub const NORM_EPS: f64 = 1e-5;

/// A parameter a layer expects to find in the store.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    fn new(name: String, shape: &[usize], init: Init) -> Self {
        Self { name, shape: shape.to_vec(), init }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn declare_all(specs: &[ParamSpec], params: &mut ParamStore, rng: &mut impl Rng) {
    for p in specs {
        params.declare(p.name.clone(), &p.shape, p.init, rng);
    }
}

fn conv_specs(out: &mut Vec<ParamSpec>, prefix: &str, cin: usize, cout: usize, (kh, kw): (usize, usize), groups: usize) {
    let fan_in = cin / groups * kh * kw;
    out.push(ParamSpec::new(format!("{prefix}.w"), &[cout, cin / groups, kh, kw], Init::FanIn(fan_in)));
    out.push(ParamSpec::new(format!("{prefix}.b"), &[cout], Init::FanIn(fan_in)));
}

fn conv<B: Backend>(b: &mut B, prefix: &str, x: &B::T, spec: Conv2dSpec) -> Result<B::T> {
    let w = b.param(&format!("{prefix}.w"))?;
    let bias = b.param(&format!("{prefix}.b"))?;
    Ok(b.conv2d(x, &w, Some(&bias), spec))
}

fn norm_specs(out: &mut Vec<ParamSpec>, prefix: &str, dim: usize) {
    out.push(ParamSpec::new(format!("{prefix}.gamma"), &[dim], Init::Constant(1.0)));
    out.push(ParamSpec::new(format!("{prefix}.beta"), &[dim], Init::Constant(0.0)));
}

fn norm<B: Backend>(b: &mut B, prefix: &str, x: &B::T) -> Result<B::T> {
    let gamma = b.param(&format!("{prefix}.gamma"))?;
    let beta = b.param(&format!("{prefix}.beta"))?;
    let n = b.instance_norm(x, NORM_EPS);
    Ok(b.feature_affine(&n, &gamma, &beta))
}

fn expect_dim<B: Backend>(b: &B, x: &B::T, axis: usize, expected: usize, what: &str) -> Result<()> {
    let shape = b.shape(x);
    if shape.len() != 4 || shape[axis] != expected {
        return Err(Error::shape(format!("{what}: expected {expected} along axis {axis}, got shape {shape:?}")));
    }
    Ok(())
}

/// Spectrogram `[b, c, f, l]` to latent `[b, d, c, l]`: one linear map over
/// the frequency column of every (channel, frame) token.
#[derive(Clone, Debug)]
pub struct Tokenizer {
    pub prefix: String,
    pub bins: usize,
    pub dim: usize,
}

impl Tokenizer {
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        conv_specs(&mut out, &self.prefix, self.bins, self.dim, (1, 1), 1);
        out
    }

    pub fn forward<B: Backend>(&self, b: &mut B, x: &B::T) -> Result<B::T> {
        expect_dim(b, x, 2, self.bins, "tokenize")?;
        let p = b.permute(x, &[0, 2, 1, 3]);
        conv(b, &self.prefix, &p, Conv2dSpec::pointwise())
    }
}

/// Latent `[b, d, c, l]` back to spectrogram `[b, c, bins, l]`.
#[derive(Clone, Debug)]
pub struct Detokenizer {
    pub prefix: String,
    pub dim: usize,
    pub bins: usize,
}

impl Detokenizer {
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        conv_specs(&mut out, &self.prefix, self.dim, self.bins, (1, 1), 1);
        out
    }

    pub fn forward<B: Backend>(&self, b: &mut B, h: &B::T) -> Result<B::T> {
        expect_dim(b, h, 1, self.dim, "detokenize")?;
        let y = conv(b, &self.prefix, h, Conv2dSpec::pointwise())?;
        Ok(b.permute(&y, &[0, 2, 1, 3]))
    }
}

/// Sinusoidal features of integer timesteps, `[b, k, 1, 1]`: sines in the
/// first half, cosines in the second.
pub fn timestep_embedding(t: &[usize], k: usize) -> ArrayD<f64> {
    let half = k / 2;
    ArrayD::from_shape_fn(IxDyn(&[t.len(), k, 1, 1]), |d| {
        let i = d[1] % half.max(1);
        if d[1] >= 2 * half {
            return 0.0;
        }
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t[d[0]] as f64 * freq;
        if d[1] < half {
            arg.sin()
        } else {
            arg.cos()
        }
    })
}

/// Two pointwise layers with a GELU between, applied to the sinusoidal
/// timestep features.
#[derive(Clone, Debug)]
pub struct TimestepMlp {
    pub prefix: String,
    pub dim: usize,
}

impl TimestepMlp {
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        conv_specs(&mut out, &format!("{}.fc1", self.prefix), self.dim, 4 * self.dim, (1, 1), 1);
        conv_specs(&mut out, &format!("{}.fc2", self.prefix), 4 * self.dim, self.dim, (1, 1), 1);
        out
    }

    pub fn forward<B: Backend>(&self, b: &mut B, t: &[usize]) -> Result<B::T> {
        let e = b.constant(timestep_embedding(t, self.dim));
        let h = conv(b, &format!("{}.fc1", self.prefix), &e, Conv2dSpec::pointwise())?;
        let h = b.gelu(&h);
        conv(b, &format!("{}.fc2", self.prefix), &h, Conv2dSpec::pointwise())
    }
}

/// Pre-normalized residual block: norm, 3×3 conv, optional timestep shift,
/// then a pointwise/depthwise MLP with GELU in front.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub prefix: String,
    pub d_in: usize,
    pub d_out: usize,
    pub mlp_factor: usize,
    /// Dilation along the time axis.
    pub dilation: usize,
    pub timestep_dim: Option<usize>,
}

impl ResidualBlock {
    fn hidden(&self) -> usize {
        self.d_out * self.mlp_factor
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let p = &self.prefix;
        let mut out = Vec::new();
        norm_specs(&mut out, &format!("{p}.norm"), self.d_in);
        conv_specs(&mut out, &format!("{p}.conv"), self.d_in, self.d_out, (3, 3), 1);
        if let Some(k) = self.timestep_dim {
            conv_specs(&mut out, &format!("{p}.time"), k, self.d_out, (1, 1), 1);
        }
        conv_specs(&mut out, &format!("{p}.mlp.expand"), self.d_out, self.hidden(), (1, 1), 1);
        conv_specs(&mut out, &format!("{p}.mlp.depthwise"), self.hidden(), self.hidden(), (3, 3), self.hidden());
        conv_specs(&mut out, &format!("{p}.mlp.contract"), self.hidden(), self.d_out, (1, 1), 1);
        if self.d_in != self.d_out {
            conv_specs(&mut out, &format!("{p}.skip"), self.d_in, self.d_out, (1, 1), 1);
        }
        out
    }

    pub fn forward<B: Backend>(&self, b: &mut B, h: &B::T, temb: Option<&B::T>) -> Result<B::T> {
        let p = &self.prefix;
        expect_dim(b, h, 1, self.d_in, "residual block input")?;
        let n = norm(b, &format!("{p}.norm"), h)?;
        let dil = self.dilation;
        let spec = Conv2dSpec::dense((1, dil)).with_dilation((1, dil));
        let mut y = conv(b, &format!("{p}.conv"), &n, spec)?;
        match (self.timestep_dim, temb) {
            (Some(k), Some(temb)) => {
                expect_dim(b, temb, 1, k, "timestep embedding")?;
                let shift = conv(b, &format!("{p}.time"), temb, Conv2dSpec::pointwise())?;
                y = b.add_broadcast_spatial(&y, &shift);
            }
            (None, None) => {}
            (Some(_), None) => return Err(Error::Contract(format!("block `{p}` needs a timestep embedding"))),
            (None, Some(_)) => return Err(Error::Contract(format!("block `{p}` takes no timestep embedding"))),
        }
        let m = b.gelu(&y);
        let m = conv(b, &format!("{p}.mlp.expand"), &m, Conv2dSpec::pointwise())?;
        let m = conv(b, &format!("{p}.mlp.depthwise"), &m, Conv2dSpec::dense((1, 1)).with_groups(self.hidden()))?;
        let m = b.gelu(&m);
        let m = conv(b, &format!("{p}.mlp.contract"), &m, Conv2dSpec::pointwise())?;
        let residual = if self.d_in != self.d_out { conv(b, &format!("{p}.skip"), h, Conv2dSpec::pointwise())? } else { h.clone() };
        Ok(b.add(&m, &residual))
    }
}

/// Pre-normalized multi-head linear attention over all `c·l` positions, with
/// `elu + 1` as the feature map and a residual connection.
#[derive(Clone, Debug)]
pub struct LinearAttention {
    pub prefix: String,
    pub dim: usize,
    pub heads: usize,
}

impl LinearAttention {
    pub fn new(prefix: String, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::config(format!("feature dim {dim} is not divisible by {heads} heads")));
        }
        Ok(Self { prefix, dim, heads })
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let p = &self.prefix;
        let mut out = Vec::new();
        norm_specs(&mut out, &format!("{p}.norm"), self.dim);
        for role in ["q", "k", "v", "out"] {
            conv_specs(&mut out, &format!("{p}.{role}"), self.dim, self.dim, (1, 1), 1);
        }
        out
    }

    pub fn forward<B: Backend>(&self, b: &mut B, h: &B::T) -> Result<B::T> {
        let p = &self.prefix;
        expect_dim(b, h, 1, self.dim, "attention input")?;
        let shape = b.shape(h);
        let (bsz, c, l) = (shape[0], shape[2], shape[3]);
        let heads_shape = [bsz, self.heads, self.dim / self.heads, c * l];
        let n = norm(b, &format!("{p}.norm"), h)?;
        let project = |b: &mut B, role: &str| -> Result<B::T> {
            let y = conv(b, &format!("{p}.{role}"), &n, Conv2dSpec::pointwise())?;
            Ok(b.reshape(&y, &heads_shape))
        };
        let q = project(b, "q")?;
        let k = project(b, "k")?;
        let v = project(b, "v")?;
        let fq = b.elu_plus_one(&q);
        let fk = b.elu_plus_one(&k);
        let a = b.linear_attention(&fq, &fk, &v);
        let a = b.reshape(&a, &shape);
        let o = conv(b, &format!("{p}.out"), &a, Conv2dSpec::pointwise())?;
        Ok(b.add(&o, h))
    }
}

/// A bare 1×1 convolution.
#[derive(Clone, Debug)]
pub struct Pointwise {
    pub prefix: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl Pointwise {
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        conv_specs(&mut out, &self.prefix, self.d_in, self.d_out, (1, 1), 1);
        out
    }

    pub fn forward<B: Backend>(&self, b: &mut B, h: &B::T) -> Result<B::T> {
        expect_dim(b, h, 1, self.d_in, "projection input")?;
        conv(b, &self.prefix, h, Conv2dSpec::pointwise())
    }
}

/// Halves the time axis with a strided 1×3 convolution.
#[derive(Clone, Debug)]
pub struct Downsample {
    pub prefix: String,
    pub dim: usize,
}

impl Downsample {
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        conv_specs(&mut out, &self.prefix, self.dim, self.dim, (1, 3), 1);
        out
    }

    pub fn forward<B: Backend>(&self, b: &mut B, h: &B::T) -> Result<B::T> {
        expect_dim(b, h, 1, self.dim, "downsample input")?;
        let l = b.shape(h)[3];
        if l % 2 != 0 {
            return Err(Error::shape(format!("cannot halve odd time length {l}")));
        }
        conv(b, &self.prefix, h, Conv2dSpec::dense((0, 1)).with_stride((1, 2)))
    }
}

/// Doubles the time axis with a 1×4 transposed convolution.
#[derive(Clone, Debug)]
pub struct Upsample {
    pub prefix: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl Upsample {
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let fan_in = self.d_in * 4;
        vec![
            ParamSpec::new(format!("{}.w", self.prefix), &[self.d_in, self.d_out, 1, 4], Init::FanIn(fan_in)),
            ParamSpec::new(format!("{}.b", self.prefix), &[self.d_out], Init::FanIn(fan_in)),
        ]
    }

    pub fn forward<B: Backend>(&self, b: &mut B, h: &B::T) -> Result<B::T> {
        expect_dim(b, h, 1, self.d_in, "upsample input")?;
        let w = b.param(&format!("{}.w", self.prefix))?;
        let bias = b.param(&format!("{}.b", self.prefix))?;
        Ok(b.conv_transpose2d(h, &w, Some(&bias), Conv2dSpec::dense((0, 1)).with_stride((1, 2))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::gaussian;
    use crate::nn::gradcheck::{check_gradients, ScalarObjective};
    use crate::nn::Eager;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(specs: &[ParamSpec], seed: u64) -> ParamStore {
        let mut params = ParamStore::new();
        declare_all(specs, &mut params, &mut ChaCha8Rng::seed_from_u64(seed));
        params
    }

    /// Randomizes constant-initialized parameters so their gradients are generic.
    fn perturb(params: &mut ParamStore, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, a) in params.iter_mut() {
            a.mapv_inplace(|v| v + 0.3 * rng.random_range(-1.0..1.0));
        }
    }

    fn eager<'p>(params: &'p ParamStore) -> Eager<'p> {
        Eager::new(params)
    }

    /// `sum(out ⊙ probe)` for a fixed random probe.
    struct Probe<F> {
        f: F,
        probe: ArrayD<f64>,
    }

    trait Layer {
        fn run<B: Backend>(&self, b: &mut B) -> Result<B::T>;
    }

    impl<F: Layer> ScalarObjective for Probe<F> {
        fn eval<B: Backend>(&self, b: &mut B) -> Result<B::T> {
            let out = self.f.run(b)?;
            let p = b.constant(self.probe.clone());
            let prod = b.mul(&out, &p);
            Ok(b.sum_all(&prod))
        }
    }

    fn probe_for<F: Layer>(f: F, params: &ParamStore, seed: u64) -> Probe<F> {
        let shape = f.run(&mut eager(params)).unwrap().shape().to_vec();
        Probe { f, probe: gaussian(&shape, &mut ChaCha8Rng::seed_from_u64(seed)) }
    }

    struct BlockCase {
        block: ResidualBlock,
        x: ArrayD<f64>,
        t: Vec<usize>,
    }

    impl Layer for BlockCase {
        fn run<B: Backend>(&self, b: &mut B) -> Result<B::T> {
            let x = b.constant(self.x.clone());
            let mlp = TimestepMlp { prefix: "time".into(), dim: 4 };
            let temb = mlp.forward(b, &self.t)?;
            self.block.forward(b, &x, Some(&temb))
        }
    }

    #[test]
    fn residual_block_gradients() {
        for (d_in, dilation) in [(8, 1), (6, 2)] {
            let block = ResidualBlock { prefix: "blk".into(), d_in, d_out: 8, mlp_factor: 2, dilation, timestep_dim: Some(4) };
            let mut specs = block.param_specs();
            specs.extend(TimestepMlp { prefix: "time".into(), dim: 4 }.param_specs());
            let mut params = store(&specs, 1);
            perturb(&mut params, 2);
            let x = gaussian(&[1, d_in, 2, 8], &mut ChaCha8Rng::seed_from_u64(3));
            let f = probe_for(BlockCase { block, x, t: vec![17] }, &params, 4);
            let report = check_gradients(&params, &f, 1e-5, 12).unwrap();
            assert!(report.worst() < 1e-3, "{:?}", report.per_param);
        }
    }

    #[test]
    fn residual_block_reduces_to_residual_path() {
        let block = ResidualBlock { prefix: "blk".into(), d_in: 4, d_out: 6, mlp_factor: 4, dilation: 1, timestep_dim: None };
        let mut params = store(&block.param_specs(), 5);
        params.get_mut("blk.mlp.contract.w").unwrap().fill(0.0);
        params.get_mut("blk.mlp.contract.b").unwrap().fill(0.0);
        let x = gaussian(&[2, 4, 2, 5], &mut ChaCha8Rng::seed_from_u64(6));
        let mut b = eager(&params);
        let out = block.forward(&mut b, &x, None).unwrap();
        let skip = b.conv2d(&x, params.get("blk.skip.w").unwrap(), Some(params.get("blk.skip.b").unwrap()), Conv2dSpec::pointwise());
        assert_eq!(out, skip);
        assert!(matches!(block.forward(&mut b, &gaussian(&[1, 5, 2, 5], &mut ChaCha8Rng::seed_from_u64(0)), None), Err(Error::Shape(_))));
    }

    #[test]
    fn residual_block_checks_timestep_width() {
        let block = ResidualBlock { prefix: "blk".into(), d_in: 4, d_out: 4, mlp_factor: 1, dilation: 1, timestep_dim: Some(8) };
        let params = store(&block.param_specs(), 1);
        let x = ArrayD::zeros(IxDyn(&[1, 4, 1, 4]));
        let temb = ArrayD::zeros(IxDyn(&[1, 6, 1, 1]));
        assert!(matches!(block.forward(&mut eager(&params), &x, Some(&temb)), Err(Error::Shape(_))));
        assert!(matches!(block.forward(&mut eager(&params), &x, None), Err(Error::Contract(_))));
    }

    struct AttnCase {
        attn: LinearAttention,
        x: ArrayD<f64>,
    }

    impl Layer for AttnCase {
        fn run<B: Backend>(&self, b: &mut B) -> Result<B::T> {
            let x = b.constant(self.x.clone());
            self.attn.forward(b, &x)
        }
    }

    #[test]
    fn attention_gradients() {
        let attn = LinearAttention::new("attn".into(), 6, 2).unwrap();
        let mut params = store(&attn.param_specs(), 7);
        perturb(&mut params, 8);
        let x = gaussian(&[2, 6, 2, 3], &mut ChaCha8Rng::seed_from_u64(9));
        let f = probe_for(AttnCase { attn, x }, &params, 10);
        let report = check_gradients(&params, &f, 1e-5, 12).unwrap();
        assert!(report.worst() < 1e-3, "{:?}", report.per_param);
    }

    /// Explicit `N×N` kernel-attention matrix, normalized per query.
    fn quadratic_attention(params: &ParamStore, attn: &LinearAttention, x: &ArrayD<f64>) -> ArrayD<f64> {
        let mut b = eager(params);
        let n = norm(&mut b, "attn.norm", x).unwrap();
        let proj = |role: &str| {
            b_conv(params, &format!("attn.{role}"), &n)
        };
        let (q, k, v) = (proj("q"), proj("k"), proj("v"));
        let (bsz, d, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let dh = d / attn.heads;
        let tokens = c * l;
        let mut a = ArrayD::zeros(IxDyn(&[bsz, d, c, l]));
        let feat = |t: &ArrayD<f64>, bi: usize, ch: usize, tok: usize| crate::nn::kernels::elu_plus_one(t[[bi, ch, tok / l, tok % l]]);
        for bi in 0..bsz {
            for h in 0..attn.heads {
                for i in 0..tokens {
                    let weights: Vec<f64> = (0..tokens)
                        .map(|j| (0..dh).map(|e| feat(&q, bi, h * dh + e, i) * feat(&k, bi, h * dh + e, j)).sum())
                        .collect();
                    let total: f64 = weights.iter().sum();
                    for e in 0..dh {
                        let ch = h * dh + e;
                        let val: f64 = (0..tokens).map(|j| weights[j] * v[[bi, ch, j / l, j % l]]).sum();
                        a[[bi, ch, i / l, i % l]] = val / total;
                    }
                }
            }
        }
        &b_conv(params, "attn.out", &a) + x
    }

    fn b_conv(params: &ParamStore, prefix: &str, x: &ArrayD<f64>) -> ArrayD<f64> {
        conv(&mut eager(params), prefix, x, Conv2dSpec::pointwise()).unwrap()
    }

    #[test]
    fn attention_matches_quadratic_oracle() {
        let attn = LinearAttention::new("attn".into(), 8, 2).unwrap();
        let mut params = store(&attn.param_specs(), 11);
        perturb(&mut params, 12);
        for shape in [[1, 8, 1, 4], [2, 8, 2, 4], [1, 8, 1, 1]] {
            let x = gaussian(&shape, &mut ChaCha8Rng::seed_from_u64(13));
            let got = attn.forward(&mut eager(&params), &x).unwrap();
            let want = quadratic_attention(&params, &attn, &x);
            let err = (&got - &want).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
            assert!(err < 1e-9, "{shape:?}: {err}");
        }
    }

    #[test]
    fn single_token_attention_is_value_projection() {
        let attn = LinearAttention::new("attn".into(), 4, 2).unwrap();
        let mut params = store(&attn.param_specs(), 14);
        perturb(&mut params, 15);
        let x = gaussian(&[1, 4, 1, 1], &mut ChaCha8Rng::seed_from_u64(16));
        let got = attn.forward(&mut eager(&params), &x).unwrap();
        let n = norm(&mut eager(&params), "attn.norm", &x).unwrap();
        let want = &b_conv(&params, "attn.out", &b_conv(&params, "attn.v", &n)) + &x;
        assert!((&got - &want).iter().all(|d| d.abs() < 1e-12));
        assert!(matches!(LinearAttention::new("a".into(), 6, 4), Err(Error::InvalidConfig(_))));
    }

    struct TokenCase {
        tok: Tokenizer,
        detok: Detokenizer,
        x: ArrayD<f64>,
    }

    impl Layer for TokenCase {
        fn run<B: Backend>(&self, b: &mut B) -> Result<B::T> {
            let x = b.constant(self.x.clone());
            let h = self.tok.forward(b, &x)?;
            let h = b.gelu(&h);
            self.detok.forward(b, &h)
        }
    }

    #[test]
    fn tokenizer_shapes_and_gradients() {
        let tok = Tokenizer { prefix: "tok".into(), bins: 5, dim: 7 };
        let detok = Detokenizer { prefix: "detok".into(), dim: 7, bins: 5 };
        let mut specs = tok.param_specs();
        specs.extend(detok.param_specs());
        let params = store(&specs, 17);
        let x = gaussian(&[1, 2, 5, 6], &mut ChaCha8Rng::seed_from_u64(18));
        let h = tok.forward(&mut eager(&params), &x).unwrap();
        assert_eq!(h.shape(), &[1, 7, 2, 6]);
        assert_eq!(detok.forward(&mut eager(&params), &h).unwrap().shape(), x.shape());
        let bad = ArrayD::zeros(IxDyn(&[1, 2, 4, 6]));
        assert!(matches!(tok.forward(&mut eager(&params), &bad), Err(Error::Shape(_))));
        assert!(matches!(detok.forward(&mut eager(&params), &bad), Err(Error::Shape(_))));
        let f = probe_for(TokenCase { tok, detok, x }, &params, 19);
        let report = check_gradients(&params, &f, 1e-5, 16).unwrap();
        assert!(report.worst() < 1e-3, "{:?}", report.per_param);
    }

    #[test]
    fn tokenizer_is_linear_and_channel_independent() {
        let tok = Tokenizer { prefix: "tok".into(), bins: 4, dim: 8 };
        let mut params = store(&tok.param_specs(), 20);
        params.get_mut("tok.b").unwrap().fill(0.0);
        let zero = ArrayD::zeros(IxDyn(&[1, 2, 4, 3]));
        assert!(tok.forward(&mut eager(&params), &zero).unwrap().iter().all(|&v| v == 0.0));
        let x = gaussian(&[1, 2, 4, 3], &mut ChaCha8Rng::seed_from_u64(21));
        let flipped = ndarray::concatenate(
            ndarray::Axis(1),
            &[x.slice(ndarray::s![.., 1..2, .., ..]).into_dyn(), x.slice(ndarray::s![.., 0..1, .., ..]).into_dyn()],
        )
        .unwrap();
        let a = tok.forward(&mut eager(&params), &x).unwrap();
        let b = tok.forward(&mut eager(&params), &flipped).unwrap();
        assert_eq!(a.slice(ndarray::s![.., .., 0, ..]), b.slice(ndarray::s![.., .., 1, ..]));
        assert_eq!(a.slice(ndarray::s![.., .., 1, ..]), b.slice(ndarray::s![.., .., 0, ..]));
    }

    #[test]
    fn timestep_embedding_values() {
        let e = timestep_embedding(&[0], 128);
        assert_eq!(e.shape(), &[1, 128, 1, 1]);
        assert!((0..64).all(|i| e[[0, i, 0, 0]] == 0.0));
        assert!((64..128).all(|i| e[[0, i, 0, 0]] == 1.0));
        let e = timestep_embedding(&[1, 2], 128);
        let diff = (0..128).map(|i| (e[[0, i, 0, 0]] - e[[1, i, 0, 0]]).abs()).fold(0.0, f64::max);
        assert!(diff > 1e-3);
    }

    struct ResampleCase {
        down: Downsample,
        up: Upsample,
        x: ArrayD<f64>,
    }

    impl Layer for ResampleCase {
        fn run<B: Backend>(&self, b: &mut B) -> Result<B::T> {
            let x = b.constant(self.x.clone());
            let h = self.down.forward(b, &x)?;
            self.up.forward(b, &h)
        }
    }

    #[test]
    fn resampling_shapes_and_gradients() {
        let down = Downsample { prefix: "down".into(), dim: 3 };
        let up = Upsample { prefix: "up".into(), d_in: 3, d_out: 2 };
        let mut specs = down.param_specs();
        specs.extend(up.param_specs());
        let params = store(&specs, 22);
        let x = gaussian(&[1, 3, 2, 8], &mut ChaCha8Rng::seed_from_u64(23));
        let h = down.forward(&mut eager(&params), &x).unwrap();
        assert_eq!(h.shape(), &[1, 3, 2, 4]);
        assert_eq!(up.forward(&mut eager(&params), &h).unwrap().shape(), &[1, 2, 2, 8]);
        let odd = ArrayD::zeros(IxDyn(&[1, 3, 1, 5]));
        assert!(matches!(down.forward(&mut eager(&params), &odd), Err(Error::Shape(_))));
        let f = probe_for(ResampleCase { down, up, x }, &params, 24);
        let report = check_gradients(&params, &f, 1e-5, 16).unwrap();
        assert!(report.worst() < 1e-3, "{:?}", report.per_param);
    }

    #[test]
    fn averaging_downsample_keeps_constants() {
        let down = Downsample { prefix: "down".into(), dim: 1 };
        let mut params = ParamStore::new();
        // Interior outputs see all three taps; the first also sees left padding.
        params.insert("down.w", ArrayD::from_shape_vec(IxDyn(&[1, 1, 1, 3]), vec![0.0, 0.5, 0.5]).unwrap());
        params.insert("down.b", ArrayD::zeros(IxDyn(&[1])));
        let x = ArrayD::from_elem(IxDyn(&[1, 1, 1, 4]), 3.0);
        let y = down.forward(&mut eager(&params), &x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert!(y.iter().all(|&v| v == 3.0));
        let up = Upsample { prefix: "up".into(), d_in: 1, d_out: 1 };
        let mut params = store(&up.param_specs(), 25);
        params.get_mut("up.b").unwrap().fill(0.25);
        let out = up.forward(&mut eager(&params), &ArrayD::zeros(IxDyn(&[1, 1, 1, 3]))).unwrap();
        assert!(out.iter().all(|&v| v == 0.25));
    }
}
