//! Layer primitives on `[B, C, H, W]` and `[N, L, D]` tensors.
//! Dense convolutions run as one GEMM per kernel tap; depthwise ones as
//! shifted row updates.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{FeatureTensor, ParamSink, ParamSinkMut};

pub(crate) fn uniform_init(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Depthwise `K x K` convolution with zero "same" padding.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseConv2d {
    /// `[C, K, K]`
    pub weight: Array3<f64>,
    pub bias: Option<Array1<f64>>,
}

/// Gradients of a [`DepthwiseConv2d`].
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseGrads {
    pub weight: Array3<f64>,
    pub bias: Option<Array1<f64>>,
}

impl DepthwiseConv2d {
    pub fn new(channels: usize, kernel: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = kernel * kernel;
        let weight = Array3::from_shape_vec((channels, kernel, kernel), uniform_init(rng, fan_in, channels * fan_in))
            .expect("shape");
        let bias = bias.then(|| Array1::from(uniform_init(rng, fan_in, channels)));
        Self { weight, bias }
    }

    /// Center tap 1, everything else 0.
    pub fn identity(channels: usize, kernel: usize, bias: bool) -> Self {
        let mut weight = Array3::zeros((channels, kernel, kernel));
        weight.slice_mut(s![.., kernel / 2, kernel / 2]).fill(1.0);
        Self {
            weight,
            bias: bias.then(|| Array1::zeros(channels)),
        }
    }

    pub fn channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().1
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }

    pub fn forward(&self, x: &FeatureTensor) -> FeatureTensor {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.channels(), "depthwise conv channel mismatch");
        let k = self.kernel();
        let half = (k / 2) as isize;
        let mut out = Array4::zeros((b, c, h, w));
        for bi in 0..b {
            for ci in 0..c {
                let xin = x.slice(s![bi, ci, .., ..]);
                let mut o = out.slice_mut(s![bi, ci, .., ..]);
                if let Some(bias) = &self.bias {
                    o.fill(bias[ci]);
                }
                for p in 0..k {
                    let di = p as isize - half;
                    for q in 0..k {
                        let dj = q as isize - half;
                        let wv = self.weight[[ci, p, q]];
                        if wv == 0.0 {
                            continue;
                        }
                        shifted_axpy(&mut o, &xin, di, dj, wv);
                    }
                }
            }
        }
        out
    }

    /// Input gradient and parameter gradients for upstream gradient `g`.
    pub fn backward(&self, x: &FeatureTensor, g: &FeatureTensor) -> (FeatureTensor, DepthwiseGrads) {
        let (b, c, h, w) = x.dim();
        let k = self.kernel();
        let half = (k / 2) as isize;
        let mut dx = Array4::zeros((b, c, h, w));
        let mut dw = Array3::zeros(self.weight.dim());
        for bi in 0..b {
            for ci in 0..c {
                let xin = x.slice(s![bi, ci, .., ..]);
                let gin = g.slice(s![bi, ci, .., ..]);
                let mut dxo = dx.slice_mut(s![bi, ci, .., ..]);
                for p in 0..k {
                    let di = p as isize - half;
                    for q in 0..k {
                        let dj = q as isize - half;
                        // y[i,j] += w x[i+di, j+dj]  =>  dx[i',j'] += w g[i'-di, j'-dj]
                        shifted_axpy(&mut dxo, &gin, -di, -dj, self.weight[[ci, p, q]]);
                        dw[[ci, p, q]] += shifted_dot(&gin, &xin, di, dj);
                    }
                }
            }
        }
        let db = self.bias.as_ref().map(|_| g.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0)));
        (dx, DepthwiseGrads { weight: dw, bias: db })
    }

    pub(crate) fn visit(&self, name: &str, sink: &mut ParamSink<'_>) {
        sink(&format!("{name}.weight"), self.weight.shape(), self.weight.as_slice().expect("contiguous"), true);
        if let Some(b) = &self.bias {
            sink(&format!("{name}.bias"), b.shape(), b.as_slice().expect("contiguous"), true);
        }
    }

    pub(crate) fn visit_mut(&mut self, name: &str, sink: &mut ParamSinkMut<'_>) {
        let shape = self.weight.shape().to_vec();
        sink(&format!("{name}.weight"), &shape, self.weight.as_slice_mut().expect("contiguous"), true);
        if let Some(b) = &mut self.bias {
            let shape = b.shape().to_vec();
            sink(&format!("{name}.bias"), &shape, b.as_slice_mut().expect("contiguous"), true);
        }
    }
}

/// `out[i, j] += a * src[i + di, j + dj]` over the valid overlap.
fn shifted_axpy(out: &mut ndarray::ArrayViewMut2<'_, f64>, src: &ArrayView2<'_, f64>, di: isize, dj: isize, a: f64) {
    let (h, w) = src.dim();
    let (i0, i1) = ((-di).max(0) as usize, (h as isize - di).min(h as isize).max(0) as usize);
    let (j0, j1) = ((-dj).max(0) as usize, (w as isize - dj).min(w as isize).max(0) as usize);
    if i0 >= i1 || j0 >= j1 {
        return;
    }
    for i in i0..i1 {
        let si = (i as isize + di) as usize;
        let srow = src.row(si);
        let mut orow = out.row_mut(i);
        let sj0 = (j0 as isize + dj) as usize;
        let srow = srow.slice(s![sj0..sj0 + (j1 - j0)]);
        let mut orow = orow.slice_mut(s![j0..j1]);
        orow.scaled_add(a, &srow);
    }
}

/// `sum_{i,j} g[i, j] * src[i + di, j + dj]` over the valid overlap.
fn shifted_dot(g: &ArrayView2<'_, f64>, src: &ArrayView2<'_, f64>, di: isize, dj: isize) -> f64 {
    let (h, w) = src.dim();
    let (i0, i1) = ((-di).max(0) as usize, (h as isize - di).min(h as isize).max(0) as usize);
    let (j0, j1) = ((-dj).max(0) as usize, (w as isize - dj).min(w as isize).max(0) as usize);
    let mut acc = 0.0;
    for i in i0..i1 {
        let si = (i as isize + di) as usize;
        let sj0 = (j0 as isize + dj) as usize;
        let a = g.slice(s![i, j0..j1]);
        let b = src.slice(s![si, sj0..sj0 + (j1 - j0)]);
        acc += a.dot(&b);
    }
    acc
}

/// Dense 2-D convolution, stride on the first spatial axis only.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[C_out, C_in, K_h, K_w]`
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub stride_h: usize,
    /// Zero padding (top, bottom) on H and (left, right) on W.
    pub pad_h: (usize, usize),
    pub pad_w: (usize, usize),
}

impl Conv2d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride_h: usize,
        pad_h: (usize, usize),
        pad_w: (usize, usize),
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * kernel.0 * kernel.1;
        let weight = Array4::from_shape_vec((c_out, c_in, kernel.0, kernel.1), uniform_init(rng, fan_in, c_out * fan_in))
            .expect("shape");
        let bias = Array1::from(uniform_init(rng, fan_in, c_out));
        Self {
            weight,
            bias,
            stride_h,
            pad_h,
            pad_w,
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (_, _, kh, kw) = self.weight.dim();
        let hp = h + self.pad_h.0 + self.pad_h.1;
        let wp = w + self.pad_w.0 + self.pad_w.1;
        (hp >= kh && wp >= kw).then(|| ((hp - kh) / self.stride_h + 1, wp - kw + 1))
    }

    pub fn forward(&self, x: &FeatureTensor) -> FeatureTensor {
        let (b, c_in, h, w) = x.dim();
        let (c_out, wc_in, kh, kw) = self.weight.dim();
        assert_eq!(c_in, wc_in, "conv input channels");
        let (ho, wo) = self.out_hw(h, w).expect("input smaller than kernel");
        let mut out = Array4::zeros((b, c_out, ho, wo));
        let mut tap = Array2::<f64>::zeros((c_in, ho * wo));
        for bi in 0..b {
            let mut acc = Array2::<f64>::zeros((c_out, ho * wo));
            for p in 0..kh {
                for q in 0..kw {
                    tap.fill(0.0);
                    let mut any = false;
                    for i in 0..ho {
                        let src_i = (i * self.stride_h + p) as isize - self.pad_h.0 as isize;
                        if src_i < 0 || src_i >= h as isize {
                            continue;
                        }
                        let j0 = self.pad_w.0.saturating_sub(q);
                        let j1 = (w + self.pad_w.0).saturating_sub(q).min(wo);
                        if j0 >= j1 {
                            continue;
                        }
                        any = true;
                        let sj0 = j0 + q - self.pad_w.0;
                        let src = x.slice(s![bi, .., src_i as usize, sj0..sj0 + (j1 - j0)]);
                        tap.slice_mut(s![.., i * wo + j0..i * wo + j1]).assign(&src);
                    }
                    if any {
                        let wt = self.weight.slice(s![.., .., p, q]);
                        general_mat_mul(1.0, &wt, &tap, 1.0, &mut acc);
                    }
                }
            }
            for co in 0..c_out {
                acc.row_mut(co).mapv_inplace(|v| v + self.bias[co]);
            }
            out.slice_mut(s![bi, .., .., ..])
                .assign(&acc.into_shape_with_order((c_out, ho, wo)).expect("shape"));
        }
        out
    }

    pub(crate) fn visit(&self, name: &str, sink: &mut ParamSink<'_>) {
        sink(&format!("{name}.weight"), self.weight.shape(), self.weight.as_slice().expect("contiguous"), true);
        sink(&format!("{name}.bias"), self.bias.shape(), self.bias.as_slice().expect("contiguous"), true);
    }

    pub(crate) fn visit_mut(&mut self, name: &str, sink: &mut ParamSinkMut<'_>) {
        let shape = self.weight.shape().to_vec();
        sink(&format!("{name}.weight"), &shape, self.weight.as_slice_mut().expect("contiguous"), true);
        let shape = self.bias.shape().to_vec();
        sink(&format!("{name}.bias"), &shape, self.bias.as_slice_mut().expect("contiguous"), true);
    }
}

/// Transposed 2-D convolution: stride on H, causal crop on W (the output keeps
/// the first `W` frames, so frame `t` depends on inputs `<= t` only).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    /// `[C_in, C_out, K_h, K_w]`
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub stride_h: usize,
    pub pad_h: usize,
    pub output_padding_h: usize,
}

impl ConvTranspose2d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride_h: usize,
        pad_h: usize,
        output_padding_h: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_out * kernel.0 * kernel.1;
        let weight = Array4::from_shape_vec((c_in, c_out, kernel.0, kernel.1), uniform_init(rng, fan_in, c_in * fan_in))
            .expect("shape");
        let bias = Array1::from(uniform_init(rng, fan_in, c_out));
        Self {
            weight,
            bias,
            stride_h,
            pad_h,
            output_padding_h,
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn out_h(&self, h: usize) -> usize {
        let kh = self.weight.dim().2;
        ((h - 1) * self.stride_h + kh + self.output_padding_h).saturating_sub(2 * self.pad_h)
    }

    pub fn forward(&self, x: &FeatureTensor) -> FeatureTensor {
        let (b, c_in, h, w) = x.dim();
        let (wc_in, c_out, kh, kw) = self.weight.dim();
        assert_eq!(c_in, wc_in, "transposed conv input channels");
        let ho = self.out_h(h);
        let mut out = Array4::zeros((b, c_out, ho, w));
        for bi in 0..b {
            let xin = x
                .slice(s![bi, .., .., ..])
                .to_owned()
                .into_shape_with_order((c_in, h * w))
                .expect("shape");
            for p in 0..kh {
                for q in 0..kw {
                    let wt = self.weight.slice(s![.., .., p, q]);
                    let contrib = wt.t().dot(&xin);
                    for i in 0..h {
                        let oi = (i * self.stride_h + p) as isize - self.pad_h as isize;
                        if oi < 0 || oi >= ho as isize || q >= w {
                            continue;
                        }
                        let src = contrib.slice(s![.., i * w..i * w + (w - q)]);
                        let mut dst = out.slice_mut(s![bi, .., oi as usize, q..w]);
                        dst += &src;
                    }
                }
            }
            for co in 0..c_out {
                out.slice_mut(s![bi, co, .., ..]).mapv_inplace(|v| v + self.bias[co]);
            }
        }
        out
    }

    pub(crate) fn visit(&self, name: &str, sink: &mut ParamSink<'_>) {
        sink(&format!("{name}.weight"), self.weight.shape(), self.weight.as_slice().expect("contiguous"), true);
        sink(&format!("{name}.bias"), self.bias.shape(), self.bias.as_slice().expect("contiguous"), true);
    }

    pub(crate) fn visit_mut(&mut self, name: &str, sink: &mut ParamSinkMut<'_>) {
        let shape = self.weight.shape().to_vec();
        sink(&format!("{name}.weight"), &shape, self.weight.as_slice_mut().expect("contiguous"), true);
        let shape = self.bias.shape().to_vec();
        sink(&format!("{name}.bias"), &shape, self.bias.as_slice_mut().expect("contiguous"), true);
    }
}

/// `y = x W^T + b` on the rows of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[out, in]`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Array2::from_shape_vec((d_out, d_in), uniform_init(rng, d_in, d_in * d_out)).expect("shape"),
            bias: Array1::from(uniform_init(rng, d_in, d_out)),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            weight: Array2::zeros((d_out, d_in)),
            bias: Array1::zeros(d_out),
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    pub(crate) fn visit(&self, name: &str, sink: &mut ParamSink<'_>) {
        sink(&format!("{name}.weight"), self.weight.shape(), self.weight.as_slice().expect("contiguous"), true);
        sink(&format!("{name}.bias"), self.bias.shape(), self.bias.as_slice().expect("contiguous"), true);
    }

    pub(crate) fn visit_mut(&mut self, name: &str, sink: &mut ParamSinkMut<'_>) {
        let shape = self.weight.shape().to_vec();
        sink(&format!("{name}.weight"), &shape, self.weight.as_slice_mut().expect("contiguous"), true);
        let shape = self.bias.shape().to_vec();
        sink(&format!("{name}.bias"), &shape, self.bias.as_slice_mut().expect("contiguous"), true);
    }
}

pub const NORM_EPS: f64 = 1e-5;

/// Layer normalization over the last axis of `[N, D]` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Array1::ones(d),
            beta: Array1::zeros(d),
        }
    }

    pub fn num_params(&self) -> usize {
        2 * self.gamma.len()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let d = x.ncols() as f64;
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * self.gamma[k] + self.beta[k];
            }
        }
        y
    }

    pub(crate) fn visit(&self, name: &str, sink: &mut ParamSink<'_>) {
        sink(&format!("{name}.gamma"), self.gamma.shape(), self.gamma.as_slice().expect("contiguous"), true);
        sink(&format!("{name}.beta"), self.beta.shape(), self.beta.as_slice().expect("contiguous"), true);
    }

    pub(crate) fn visit_mut(&mut self, name: &str, sink: &mut ParamSinkMut<'_>) {
        let shape = self.gamma.shape().to_vec();
        sink(&format!("{name}.gamma"), &shape, self.gamma.as_slice_mut().expect("contiguous"), true);
        sink(&format!("{name}.beta"), &shape, self.beta.as_slice_mut().expect("contiguous"), true);
    }
}

/// Batch normalization over channel axis 1. Eval mode uses the running
/// statistics; train mode normalizes with the batch statistics (running
/// statistics are buffers and are not updated here).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Array1::ones(c),
            beta: Array1::zeros(c),
            running_mean: Array1::zeros(c),
            running_var: Array1::ones(c),
        }
    }

    pub fn num_params(&self) -> usize {
        2 * self.gamma.len()
    }

    /// Normalizes `x` in place; `channel_of(i)` maps a flat lane to its channel.
    pub fn forward4(&self, x: &mut FeatureTensor, train: bool) {
        let c = x.dim().1;
        for ci in 0..c {
            let mut lane = x.slice_mut(s![.., ci, .., ..]);
            let (mean, var) = if train {
                let n = lane.len() as f64;
                let mean = lane.sum() / n;
                (mean, lane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
            } else {
                (self.running_mean[ci], self.running_var[ci])
            };
            let scale = self.gamma[ci] / (var + NORM_EPS).sqrt();
            let shift = self.beta[ci] - mean * scale;
            lane.mapv_inplace(|v| v * scale + shift);
        }
    }

    /// Same on `[N, L, D]` sequences with channels on the last axis.
    pub fn forward3(&self, x: &mut Array3<f64>, train: bool) {
        let d = x.dim().2;
        for ci in 0..d {
            let mut lane = x.slice_mut(s![.., .., ci]);
            let (mean, var) = if train {
                let n = lane.len() as f64;
                let mean = lane.sum() / n;
                (mean, lane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
            } else {
                (self.running_mean[ci], self.running_var[ci])
            };
            let scale = self.gamma[ci] / (var + NORM_EPS).sqrt();
            let shift = self.beta[ci] - mean * scale;
            lane.mapv_inplace(|v| v * scale + shift);
        }
    }

    pub(crate) fn visit(&self, name: &str, sink: &mut ParamSink<'_>) {
        sink(&format!("{name}.gamma"), self.gamma.shape(), self.gamma.as_slice().expect("contiguous"), true);
        sink(&format!("{name}.beta"), self.beta.shape(), self.beta.as_slice().expect("contiguous"), true);
        sink(&format!("{name}.running_mean"), self.running_mean.shape(), self.running_mean.as_slice().expect("contiguous"), false);
        sink(&format!("{name}.running_var"), self.running_var.shape(), self.running_var.as_slice().expect("contiguous"), false);
    }

    pub(crate) fn visit_mut(&mut self, name: &str, sink: &mut ParamSinkMut<'_>) {
        let shape = self.gamma.shape().to_vec();
        sink(&format!("{name}.gamma"), &shape, self.gamma.as_slice_mut().expect("contiguous"), true);
        sink(&format!("{name}.beta"), &shape, self.beta.as_slice_mut().expect("contiguous"), true);
        sink(&format!("{name}.running_mean"), &shape, self.running_mean.as_slice_mut().expect("contiguous"), false);
        sink(&format!("{name}.running_var"), &shape, self.running_var.as_slice_mut().expect("contiguous"), false);
    }
}

/// Per-channel PReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct PRelu {
    pub slope: Array1<f64>,
}

impl PRelu {
    pub fn new(c: usize) -> Self {
        Self {
            slope: Array1::from_elem(c, 0.25),
        }
    }

    pub fn num_params(&self) -> usize {
        self.slope.len()
    }

    pub fn forward(&self, x: &mut FeatureTensor) {
        for (ci, mut lane) in x.axis_iter_mut(Axis(1)).enumerate() {
            let a = self.slope[ci];
            lane.mapv_inplace(|v| if v >= 0.0 { v } else { a * v });
        }
    }

    pub(crate) fn visit(&self, name: &str, sink: &mut ParamSink<'_>) {
        sink(&format!("{name}.slope"), self.slope.shape(), self.slope.as_slice().expect("contiguous"), true);
    }

    pub(crate) fn visit_mut(&mut self, name: &str, sink: &mut ParamSinkMut<'_>) {
        let shape = self.slope.shape().to_vec();
        sink(&format!("{name}.slope"), &shape, self.slope.as_slice_mut().expect("contiguous"), true);
    }
}
