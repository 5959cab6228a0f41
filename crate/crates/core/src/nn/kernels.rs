//! Forward and backward kernels shared by the eager and tape backends.
//!
//! Layout is `[batch, features, height, width]` throughout. In this crate the
//! height axis carries audio channels and the width axis carries time frames.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView1, ArrayView3, ArrayView4, Axis, Zip};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    /// Either 1 (dense) or equal to the input feature count (depthwise).
    pub groups: usize,
}

impl Conv2dSpec {
    pub const fn dense(padding: (usize, usize)) -> Self {
        Self { stride: (1, 1), padding, dilation: (1, 1), groups: 1 }
    }

    pub const fn pointwise() -> Self {
        Self::dense((0, 0))
    }

    pub fn with_stride(mut self, stride: (usize, usize)) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_dilation(mut self, dilation: (usize, usize)) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    fn is_trivial_pointwise(&self, kh: usize, kw: usize) -> bool {
        kh == 1 && kw == 1 && self.stride == (1, 1) && self.padding == (0, 0)
    }
}

pub fn conv_out_len(n: usize, k: usize, stride: usize, pad: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (k - 1) + 1;
    if n + 2 * pad < span {
        return None;
    }
    Some((n + 2 * pad - span) / stride + 1)
}

/// Output size of a transposed convolution with no output padding.
pub fn conv_transpose_out_len(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    ((n - 1) * stride + k).checked_sub(2 * pad)
}

fn im2col(x: ArrayView3<f64>, kh: usize, kw: usize, spec: &Conv2dSpec, ho: usize, wo: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;
    let mut cols = Array2::<f64>::zeros((c * kh * kw, ho * wo));
    for ci in 0..c {
        let plane = x.index_axis(Axis(0), ci);
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let mut dst = cols.row_mut(row);
                let dst = dst.as_slice_mut().expect("row of standard array");
                for oy in 0..ho {
                    let iy = (oy * sh + ki * dh) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = plane.row(iy as usize);
                    let out = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * sw + kj * dw) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add of columns back onto a `[c, h, w]` image; adjoint of [`im2col`].
fn col2im(cols: &Array2<f64>, c: usize, h: usize, w: usize, kh: usize, kw: usize, spec: &Conv2dSpec, ho: usize, wo: usize) -> Array3<f64> {
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;
    let mut img = Array3::<f64>::zeros((c, h, w));
    for ci in 0..c {
        let mut plane = img.index_axis_mut(Axis(0), ci);
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = cols.row(row);
                for oy in 0..ho {
                    let iy = (oy * sh + ki * dh) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let mut dst = plane.row_mut(iy as usize);
                    for ox in 0..wo {
                        let ix = (ox * sw + kj * dw) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    img
}

fn weight_matrix(w: &ArrayView4<f64>) -> Array2<f64> {
    let (o, i, kh, kw) = w.dim();
    w.as_standard_layout().into_owned().into_shape_with_order((o, i * kh * kw)).expect("contiguous weight")
}

fn flat_plane(x: ArrayView3<f64>) -> Array2<f64> {
    let (c, h, w) = x.dim();
    x.as_standard_layout().into_owned().into_shape_with_order((c, h * w)).expect("contiguous plane")
}

fn add_bias(y: &mut Array4<f64>, b: ArrayView1<f64>) {
    for (mut plane, &bv) in y.axis_iter_mut(Axis(1)).zip(b.iter()) {
        plane += bv;
    }
}

fn conv_geometry(x: &ArrayView4<f64>, w: &ArrayView4<f64>, spec: &Conv2dSpec) -> (usize, usize) {
    let (_, _, h, wd) = x.dim();
    let (_, _, kh, kw) = w.dim();
    let ho = conv_out_len(h, kh, spec.stride.0, spec.padding.0, spec.dilation.0).expect("kernel larger than padded input");
    let wo = conv_out_len(wd, kw, spec.stride.1, spec.padding.1, spec.dilation.1).expect("kernel larger than padded input");
    (ho, wo)
}

pub fn conv2d(x: ArrayView4<f64>, w: ArrayView4<f64>, b: Option<ArrayView1<f64>>, spec: &Conv2dSpec) -> Array4<f64> {
    if spec.groups != 1 {
        return depthwise_conv2d(x, w, b, spec);
    }
    let (bsz, cin, _, _) = x.dim();
    let (cout, wcin, kh, kw) = w.dim();
    assert_eq!(cin, wcin, "conv2d input features {cin} != weight features {wcin}");
    let (ho, wo) = conv_geometry(&x, &w, spec);
    let wmat = weight_matrix(&w);
    let mut y = Array4::<f64>::zeros((bsz, cout, ho, wo));
    for bi in 0..bsz {
        let xb = x.index_axis(Axis(0), bi);
        let cols = if spec.is_trivial_pointwise(kh, kw) { flat_plane(xb) } else { im2col(xb, kh, kw, spec, ho, wo) };
        let yb = wmat.dot(&cols);
        y.index_axis_mut(Axis(0), bi).assign(&yb.into_shape_with_order((cout, ho, wo)).expect("output plane"));
    }
    if let Some(b) = b {
        add_bias(&mut y, b);
    }
    y
}

pub struct ConvGrads {
    pub dx: Array4<f64>,
    pub dw: Array4<f64>,
    pub db: Array1<f64>,
}

pub fn conv2d_backward(x: ArrayView4<f64>, w: ArrayView4<f64>, dy: ArrayView4<f64>, spec: &Conv2dSpec) -> ConvGrads {
    if spec.groups != 1 {
        return depthwise_conv2d_backward(x, w, dy, spec);
    }
    let (bsz, cin, h, wd) = x.dim();
    let (cout, _, kh, kw) = w.dim();
    let (_, _, ho, wo) = dy.dim();
    let wmat = weight_matrix(&w);
    let mut dwmat = Array2::<f64>::zeros(wmat.dim());
    let mut dx = Array4::<f64>::zeros((bsz, cin, h, wd));
    let pointwise = spec.is_trivial_pointwise(kh, kw);
    for bi in 0..bsz {
        let xb = x.index_axis(Axis(0), bi);
        let cols = if pointwise { flat_plane(xb) } else { im2col(xb, kh, kw, spec, ho, wo) };
        let dyb = flat_plane(dy.index_axis(Axis(0), bi));
        dwmat += &dyb.dot(&cols.t());
        let dcols = wmat.t().dot(&dyb);
        let dxb = if pointwise {
            dcols.into_shape_with_order((cin, h, wd)).expect("input plane")
        } else {
            col2im(&dcols, cin, h, wd, kh, kw, spec, ho, wo)
        };
        dx.index_axis_mut(Axis(0), bi).assign(&dxb);
    }
    let dw = dwmat.into_shape_with_order((cout, cin, kh, kw)).expect("weight grad");
    let db = dy.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
    ConvGrads { dx, dw, db }
}

fn depthwise_conv2d(x: ArrayView4<f64>, w: ArrayView4<f64>, b: Option<ArrayView1<f64>>, spec: &Conv2dSpec) -> Array4<f64> {
    let (bsz, c, h, wd) = x.dim();
    let (cout, one, kh, kw) = w.dim();
    assert!(spec.groups == c && cout == c && one == 1, "only depthwise grouping is supported");
    let (ho, wo) = conv_geometry(&x, &w, spec);
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;
    let mut y = Array4::<f64>::zeros((bsz, c, ho, wo));
    for bi in 0..bsz {
        for ci in 0..c {
            let plane = x.slice(s![bi, ci, .., ..]);
            let kernel = w.slice(s![ci, 0, .., ..]);
            let mut out = y.slice_mut(s![bi, ci, .., ..]);
            for ki in 0..kh {
                for kj in 0..kw {
                    let kv = kernel[[ki, kj]];
                    for oy in 0..ho {
                        let iy = (oy * sh + ki * dh) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = plane.row(iy as usize);
                        let mut dst = out.row_mut(oy);
                        for ox in 0..wo {
                            let ix = (ox * sw + kj * dw) as isize - pw as isize;
                            if ix >= 0 && ix < wd as isize {
                                dst[ox] += kv * src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(b) = b {
        add_bias(&mut y, b);
    }
    y
}

fn depthwise_conv2d_backward(x: ArrayView4<f64>, w: ArrayView4<f64>, dy: ArrayView4<f64>, spec: &Conv2dSpec) -> ConvGrads {
    let (bsz, c, h, wd) = x.dim();
    let (_, _, kh, kw) = w.dim();
    let (_, _, ho, wo) = dy.dim();
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dwl) = spec.dilation;
    let mut dx = Array4::<f64>::zeros((bsz, c, h, wd));
    let mut dw = Array4::<f64>::zeros(w.dim());
    for bi in 0..bsz {
        for ci in 0..c {
            let plane = x.slice(s![bi, ci, .., ..]);
            let g = dy.slice(s![bi, ci, .., ..]);
            for ki in 0..kh {
                for kj in 0..kw {
                    let kv = w[[ci, 0, ki, kj]];
                    let mut acc = 0.0;
                    for oy in 0..ho {
                        let iy = (oy * sh + ki * dh) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for ox in 0..wo {
                            let ix = (ox * sw + kj * dwl) as isize - pw as isize;
                            if ix >= 0 && ix < wd as isize {
                                let gv = g[[oy, ox]];
                                acc += gv * plane[[iy, ix as usize]];
                                dx[[bi, ci, iy, ix as usize]] += kv * gv;
                            }
                        }
                    }
                    dw[[ci, 0, ki, kj]] += acc;
                }
            }
        }
    }
    let db = dy.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
    ConvGrads { dx, dw, db }
}

/// Transposed convolution; weight layout is `[in, out, kh, kw]`.
pub fn conv_transpose2d(x: ArrayView4<f64>, w: ArrayView4<f64>, b: Option<ArrayView1<f64>>, spec: &Conv2dSpec) -> Array4<f64> {
    let (bsz, cin, h, wd) = x.dim();
    let (wcin, cout, kh, kw) = w.dim();
    assert_eq!(cin, wcin, "transposed conv input features {cin} != weight features {wcin}");
    assert_eq!(spec.dilation, (1, 1));
    assert_eq!(spec.groups, 1);
    let ho = conv_transpose_out_len(h, kh, spec.stride.0, spec.padding.0).expect("padding too large");
    let wo = conv_transpose_out_len(wd, kw, spec.stride.1, spec.padding.1).expect("padding too large");
    let wmat = weight_matrix(&w);
    let mut y = Array4::<f64>::zeros((bsz, cout, ho, wo));
    for bi in 0..bsz {
        let xb = flat_plane(x.index_axis(Axis(0), bi));
        let cols = wmat.t().dot(&xb);
        let yb = col2im(&cols, cout, ho, wo, kh, kw, spec, h, wd);
        y.index_axis_mut(Axis(0), bi).assign(&yb);
    }
    if let Some(b) = b {
        add_bias(&mut y, b);
    }
    y
}

pub fn conv_transpose2d_backward(x: ArrayView4<f64>, w: ArrayView4<f64>, dy: ArrayView4<f64>, spec: &Conv2dSpec) -> ConvGrads {
    let (bsz, cin, h, wd) = x.dim();
    let (_, cout, kh, kw) = w.dim();
    let wmat = weight_matrix(&w);
    let mut dwmat = Array2::<f64>::zeros(wmat.dim());
    let mut dx = Array4::<f64>::zeros((bsz, cin, h, wd));
    for bi in 0..bsz {
        let cols = im2col(dy.index_axis(Axis(0), bi), kh, kw, spec, h, wd);
        let xb = flat_plane(x.index_axis(Axis(0), bi));
        dwmat += &xb.dot(&cols.t());
        let dxb = wmat.dot(&cols).into_shape_with_order((cin, h, wd)).expect("input plane");
        dx.index_axis_mut(Axis(0), bi).assign(&dxb);
    }
    let dw = dwmat.into_shape_with_order((cin, cout, kh, kw)).expect("weight grad");
    let db = dy.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
    ConvGrads { dx, dw, db }
}

/// Per-sample, per-feature normalization over the spatial axes.
pub fn instance_norm(x: ArrayView4<f64>, eps: f64) -> Array4<f64> {
    let mut y = x.to_owned();
    for mut sample in y.outer_iter_mut() {
        for mut plane in sample.outer_iter_mut() {
            let n = plane.len() as f64;
            let mean = plane.sum() / n;
            let var = plane.fold(0.0, |acc, &v| acc + (v - mean) * (v - mean)) / n;
            let inv = 1.0 / (var + eps).sqrt();
            plane.mapv_inplace(|v| (v - mean) * inv);
        }
    }
    y
}

pub fn instance_norm_backward(x: ArrayView4<f64>, dy: ArrayView4<f64>, eps: f64) -> Array4<f64> {
    let mut dx = Array4::<f64>::zeros(x.dim());
    let (bsz, c, _, _) = x.dim();
    for bi in 0..bsz {
        for ci in 0..c {
            let xp = x.slice(s![bi, ci, .., ..]);
            let gp = dy.slice(s![bi, ci, .., ..]);
            let n = xp.len() as f64;
            let mean = xp.sum() / n;
            let var = xp.fold(0.0, |acc, &v| acc + (v - mean) * (v - mean)) / n;
            let inv = 1.0 / (var + eps).sqrt();
            let mut mean_g = 0.0;
            let mut mean_gy = 0.0;
            Zip::from(&xp).and(&gp).for_each(|&xv, &gv| {
                mean_g += gv;
                mean_gy += gv * (xv - mean) * inv;
            });
            mean_g /= n;
            mean_gy /= n;
            let mut out = dx.slice_mut(s![bi, ci, .., ..]);
            Zip::from(&mut out).and(&xp).and(&gp).for_each(|o, &xv, &gv| {
                let yv = (xv - mean) * inv;
                *o = inv * (gv - mean_g - yv * mean_gy);
            });
        }
    }
    dx
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / SQRT_2));
    cdf + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Kernel feature map `elu(x) + 1`.
pub fn elu_plus_one(x: f64) -> f64 {
    if x > 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

pub fn elu_plus_one_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Non-causal linear attention on `[batch, heads, dim, tokens]` tensors whose
/// query and key inputs have already passed through a positive feature map.
pub fn linear_attention(fq: ArrayView4<f64>, fk: ArrayView4<f64>, v: ArrayView4<f64>) -> Array4<f64> {
    let (bsz, heads, _, n) = fq.dim();
    let dv = v.dim().2;
    let mut out = Array4::<f64>::zeros((bsz, heads, dv, n));
    for bi in 0..bsz {
        for hi in 0..heads {
            let q = fq.slice(s![bi, hi, .., ..]);
            let k = fk.slice(s![bi, hi, .., ..]);
            let vv = v.slice(s![bi, hi, .., ..]);
            let kv = vv.dot(&k.t());
            let z = k.sum_axis(Axis(1));
            let num = kv.dot(&q);
            let den = q.t().dot(&z);
            let mut o = out.slice_mut(s![bi, hi, .., ..]);
            Zip::from(o.columns_mut()).and(num.columns()).and(&den).for_each(|mut oc, nc, &d| {
                Zip::from(&mut oc).and(&nc).for_each(|ov, &nv| *ov = nv / d);
            });
        }
    }
    out
}

pub struct AttentionGrads {
    pub dfq: Array4<f64>,
    pub dfk: Array4<f64>,
    pub dv: Array4<f64>,
}

pub fn linear_attention_backward(fq: ArrayView4<f64>, fk: ArrayView4<f64>, v: ArrayView4<f64>, dout: ArrayView4<f64>) -> AttentionGrads {
    let (bsz, heads, _, _) = fq.dim();
    let mut dfq = Array4::<f64>::zeros(fq.dim());
    let mut dfk = Array4::<f64>::zeros(fk.dim());
    let mut dvv = Array4::<f64>::zeros(v.dim());
    for bi in 0..bsz {
        for hi in 0..heads {
            let q = fq.slice(s![bi, hi, .., ..]);
            let k = fk.slice(s![bi, hi, .., ..]);
            let vv = v.slice(s![bi, hi, .., ..]);
            let g = dout.slice(s![bi, hi, .., ..]);
            let kv = vv.dot(&k.t());
            let z = k.sum_axis(Axis(1));
            let num = kv.dot(&q);
            let den = q.t().dot(&z);
            // d(num) = g / den, d(den) = -sum_v g * num / den^2
            let mut dnum = g.to_owned();
            let mut dden = Array1::<f64>::zeros(den.len());
            for (n, &d) in den.iter().enumerate() {
                let mut col = dnum.column_mut(n);
                col /= d;
                dden[n] = -g.column(n).dot(&num.column(n)) / (d * d);
            }
            let mut dq = kv.t().dot(&dnum);
            for (n, &dd) in dden.iter().enumerate() {
                dq.column_mut(n).scaled_add(dd, &z);
            }
            let dkv = dnum.dot(&q.t());
            let dz = q.dot(&dden);
            let dvb = dkv.dot(&k);
            let mut dk = dkv.t().dot(&vv);
            for mut col in dk.columns_mut() {
                col += &dz;
            }
            dfq.slice_mut(s![bi, hi, .., ..]).assign(&dq);
            dfk.slice_mut(s![bi, hi, .., ..]).assign(&dk);
            dvv.slice_mut(s![bi, hi, .., ..]).assign(&dvb);
        }
    }
    AttentionGrads { dfq, dfk, dv: dvv }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn ramp(shape: (usize, usize, usize, usize)) -> Array4<f64> {
        let n = shape.0 * shape.1 * shape.2 * shape.3;
        Array::from_iter((0..n).map(|i| ((i * 37 % 17) as f64 - 8.0) / 7.0)).into_shape_with_order(shape).unwrap()
    }

    fn naive_conv(x: &Array4<f64>, w: &Array4<f64>, spec: &Conv2dSpec) -> Array4<f64> {
        let (b, cin, h, wd) = x.dim();
        let (cout, _, kh, kw) = w.dim();
        let ho = conv_out_len(h, kh, spec.stride.0, spec.padding.0, spec.dilation.0).unwrap();
        let wo = conv_out_len(wd, kw, spec.stride.1, spec.padding.1, spec.dilation.1).unwrap();
        let mut y = Array4::zeros((b, cout, ho, wo));
        for bi in 0..b {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * spec.stride.0 + ki * spec.dilation.0) as isize - spec.padding.0 as isize;
                                    let ix = (ox * spec.stride.1 + kj * spec.dilation.1) as isize - spec.padding.1 as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += w[[co, ci, ki, kj]] * x[[bi, ci, iy as usize, ix as usize]];
                                    }
                                }
                            }
                        }
                        y[[bi, co, oy, ox]] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn im2col_conv_matches_direct_sum() {
        let x = ramp((2, 3, 2, 9));
        for (spec, w) in [
            (Conv2dSpec::dense((1, 1)), ramp((4, 3, 3, 3))),
            (Conv2dSpec::dense((0, 1)).with_stride((1, 2)), ramp((4, 3, 1, 3))),
            (Conv2dSpec::dense((1, 2)).with_dilation((1, 2)), ramp((4, 3, 3, 3))),
        ] {
            let fast = conv2d(x.view(), w.view(), None, &spec);
            let slow = naive_conv(&x, &w, &spec);
            assert_eq!(fast.dim(), slow.dim());
            assert!(fast.iter().zip(slow.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> with shared weights.
        let spec = Conv2dSpec::dense((0, 1)).with_stride((1, 2));
        let x = ramp((1, 3, 2, 8));
        let w = ramp((5, 3, 1, 4));
        let y = conv2d(x.view(), w.view(), None, &spec);
        let probe = ramp((1, 5, y.dim().2, y.dim().3)).mapv(|v| v * 0.3 + 0.1);
        let lhs: f64 = (&y * &probe).sum();
        // conv weight [out, in] doubles as transposed weight [in', out'] with in' = 5.
        let back = conv_transpose2d(probe.view(), w.view(), None, &spec);
        assert_eq!(back.dim(), x.dim());
        let rhs: f64 = (&x * &back).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn depthwise_matches_per_channel_dense() {
        let x = ramp((1, 3, 2, 6));
        let w = ramp((3, 1, 3, 3));
        let spec = Conv2dSpec::dense((1, 1)).with_groups(3);
        let y = conv2d(x.view(), w.view(), None, &spec);
        for c in 0..3 {
            let xc = x.slice(s![.., c..c + 1, .., ..]).to_owned();
            let wc = w.slice(s![c..c + 1, .., .., ..]).to_owned();
            let yc = naive_conv(&xc, &wc, &Conv2dSpec::dense((1, 1)));
            let got = y.slice(s![.., c..c + 1, .., ..]);
            assert!(got.iter().zip(yc.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn instance_norm_zero_mean_unit_var() {
        let x = ramp((2, 3, 2, 5)).mapv(|v| 3.0 * v + 1.0);
        let y = instance_norm(x.view(), 0.0);
        for sample in y.outer_iter() {
            for plane in sample.outer_iter() {
                let n = plane.len() as f64;
                let mean = plane.sum() / n;
                let var = plane.mapv(|v| (v - mean).powi(2)).sum() / n;
                assert!(mean.abs() < 1e-12);
                assert!((var - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((gelu(-1.0) + 0.158_655_253_931_457_05).abs() < 1e-12);
    }
}
