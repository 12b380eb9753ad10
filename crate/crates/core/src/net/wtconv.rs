//! Wavelet convolution: a depthwise conv on the input plus depthwise convs on
//! cascaded Haar subbands, rebuilt by inverse transforms.
//!
//! Level `i` analyses the (unconvolved) low band of level `i - 1`, convolves
//! all four subbands and scales them. Reconstruction runs from the deepest
//! level up, adding each rebuilt plane to the convolved LL of the level above.

use ndarray::{s, Array1, Array4, Axis};
use rand_chacha::ChaCha8Rng;

use super::haar::{haar_dwt2, haar_dwt2_backward, haar_idwt2, haar_idwt2_backward, Subbands};
use super::ops::{DepthwiseConv2d, DepthwiseGrads};
use super::{FeatureTensor, ParamSink, ParamSinkMut};
use crate::error::{Error, Result};

pub const WAVELET_SCALE_INIT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct WtConv {
    pub base: DepthwiseConv2d,
    /// Per-channel scale on the base branch.
    pub base_scale: Array1<f64>,
    /// One depthwise conv over the `4C` stacked subbands per level.
    pub level_convs: Vec<DepthwiseConv2d>,
    /// Per-subband gain, `4C` entries per level.
    pub wavelet_scales: Vec<Array1<f64>>,
}

/// Intermediates kept by [`WtConv::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct WtConvCache {
    input: FeatureTensor,
    base_out: FeatureTensor,
    subbands: Vec<Subbands>,
    stacked: Vec<FeatureTensor>,
    conv_out: Vec<FeatureTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WtConvGrads {
    pub input: FeatureTensor,
    pub base: DepthwiseGrads,
    pub base_scale: Array1<f64>,
    pub level_convs: Vec<DepthwiseGrads>,
    pub wavelet_scales: Vec<Array1<f64>>,
}

/// Number of Haar levels a `rows x cols` plane supports.
pub fn max_levels(rows: usize, cols: usize) -> usize {
    let (mut h, mut w, mut n) = (rows, cols, 0);
    while h >= 2 && w >= 2 {
        h = h.div_ceil(2);
        w = w.div_ceil(2);
        n += 1;
    }
    n
}

fn stack(sb: &Subbands) -> FeatureTensor {
    let (b, c, h, w) = sb.ll.dim();
    let mut out = Array4::zeros((b, 4 * c, h, w));
    for (k, band) in [&sb.ll, &sb.lh, &sb.hl, &sb.hh].into_iter().enumerate() {
        out.slice_mut(s![.., k..;4, .., ..]).assign(band);
    }
    out
}

fn unstack(x: &FeatureTensor, orig: (usize, usize)) -> Subbands {
    let band = |k: usize| x.slice(s![.., k..;4, .., ..]).to_owned();
    Subbands {
        ll: band(0),
        lh: band(1),
        hl: band(2),
        hh: band(3),
        orig,
    }
}

fn scale_channels(x: &mut FeatureTensor, scale: &Array1<f64>) {
    for (c, mut lane) in x.axis_iter_mut(Axis(1)).enumerate() {
        lane *= scale[c];
    }
}

fn channel_dots(a: &FeatureTensor, b: &FeatureTensor) -> Array1<f64> {
    Array1::from_iter(
        a.axis_iter(Axis(1))
            .zip(b.axis_iter(Axis(1)))
            .map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| p * q).sum()),
    )
}

impl WtConv {
    pub fn new(channels: usize, kernel: usize, levels: usize, rng: &mut ChaCha8Rng) -> Self {
        let base = DepthwiseConv2d::new(channels, kernel, true, rng);
        let level_convs = (0..levels)
            .map(|_| DepthwiseConv2d::new(4 * channels, kernel, false, rng))
            .collect();
        Self {
            base,
            base_scale: Array1::ones(channels),
            level_convs,
            wavelet_scales: vec![Array1::from_elem(4 * channels, WAVELET_SCALE_INIT); levels],
        }
    }

    /// Center-tap kernels, zero bias, unit gains.
    pub fn identity(channels: usize, kernel: usize, levels: usize) -> Self {
        Self {
            base: DepthwiseConv2d::identity(channels, kernel, true),
            base_scale: Array1::ones(channels),
            level_convs: vec![DepthwiseConv2d::identity(4 * channels, kernel, false); levels],
            wavelet_scales: vec![Array1::ones(4 * channels); levels],
        }
    }

    pub fn levels(&self) -> usize {
        self.level_convs.len()
    }

    pub fn channels(&self) -> usize {
        self.base.channels()
    }

    pub fn num_params(&self) -> usize {
        self.base.num_params()
            + self.base_scale.len()
            + self.level_convs.iter().map(DepthwiseConv2d::num_params).sum::<usize>()
            + self.wavelet_scales.iter().map(Array1::len).sum::<usize>()
    }

    /// Fails when the plane is too small for the configured depth.
    pub fn check_extent(&self, block: &str, rows: usize, cols: usize) -> Result<()> {
        let max = max_levels(rows, cols);
        if self.levels() > max {
            return Err(Error::TooManyLevels {
                block: block.to_string(),
                levels: self.levels(),
                rows,
                cols,
                max_levels: max,
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &FeatureTensor) -> Result<FeatureTensor> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &FeatureTensor) -> Result<(FeatureTensor, WtConvCache)> {
        let (_, c, h, w) = x.dim();
        if c != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "wtconv expects {} channels, got {c}",
                self.channels()
            )));
        }
        self.check_extent("wtconv", h, w)?;
        let mut subbands = Vec::with_capacity(self.levels());
        let mut stacked = Vec::with_capacity(self.levels());
        let mut conv_out = Vec::with_capacity(self.levels());
        let mut scaled = Vec::with_capacity(self.levels());
        let mut low = x.clone();
        for (conv, gain) in self.level_convs.iter().zip(&self.wavelet_scales) {
            let sb = haar_dwt2(&low);
            let z = stack(&sb);
            let y = conv.forward(&z);
            let mut ys = y.clone();
            scale_channels(&mut ys, gain);
            low = sb.ll.clone();
            subbands.push(sb);
            stacked.push(z);
            conv_out.push(y);
            scaled.push(ys);
        }
        let mut rec: Option<FeatureTensor> = None;
        for (ys, sb) in scaled.iter().zip(&subbands).rev() {
            let mut bands = unstack(ys, sb.orig);
            if let Some(r) = rec.take() {
                bands.ll += &r;
            }
            rec = Some(haar_idwt2(&bands)?);
        }
        let base_out = self.base.forward(x);
        let mut out = base_out.clone();
        scale_channels(&mut out, &self.base_scale);
        if let Some(r) = rec {
            out += &r;
        }
        let cache = WtConvCache {
            input: x.clone(),
            base_out,
            subbands,
            stacked,
            conv_out,
        };
        Ok((out, cache))
    }

    /// Gradients of a scalar loss given `g = dL/d(output)`.
    pub fn backward(&self, cache: &WtConvCache, g: &FeatureTensor) -> WtConvGrads {
        let levels = self.levels();
        // Base branch.
        let d_base_scale = channel_dots(g, &cache.base_out);
        let mut g_base = g.clone();
        scale_channels(&mut g_base, &self.base_scale);
        let (mut dx, d_base) = self.base.backward(&cache.input, &g_base);

        // Reconstruction chain, shallow to deep.
        let mut g_stacked = Vec::with_capacity(levels);
        let mut d_levels = Vec::with_capacity(levels);
        let mut d_gains = Vec::with_capacity(levels);
        let mut g_rec = g.clone();
        for i in 0..levels {
            let sb = &cache.subbands[i];
            let g_bands = haar_idwt2_backward(&g_rec, sb);
            g_rec = g_bands.ll.clone();
            let g_y = stack(&g_bands);
            d_gains.push(channel_dots(&g_y, &cache.conv_out[i]));
            let mut g_conv = g_y;
            scale_channels(&mut g_conv, &self.wavelet_scales[i]);
            let (g_z, d_conv) = self.level_convs[i].backward(&cache.stacked[i], &g_conv);
            g_stacked.push(g_z);
            d_levels.push(d_conv);
        }

        // Analysis chain, deep to shallow.
        let mut g_low: Option<FeatureTensor> = None;
        for i in (0..levels).rev() {
            let mut bands = unstack(&g_stacked[i], cache.subbands[i].orig);
            if let Some(gl) = g_low.take() {
                bands.ll += &gl;
            }
            g_low = Some(haar_dwt2_backward(&bands));
        }
        if let Some(gl) = g_low {
            dx += &gl;
        }
        WtConvGrads {
            input: dx,
            base: d_base,
            base_scale: d_base_scale,
            level_convs: d_levels,
            wavelet_scales: d_gains,
        }
    }

    pub(crate) fn visit(&self, name: &str, sink: &mut ParamSink<'_>) {
        self.base.visit(&format!("{name}.base"), sink);
        sink(&format!("{name}.base_scale"), self.base_scale.shape(), self.base_scale.as_slice().expect("contiguous"), true);
        for (i, (conv, gain)) in self.level_convs.iter().zip(&self.wavelet_scales).enumerate() {
            conv.visit(&format!("{name}.level{i}"), sink);
            sink(&format!("{name}.level{i}.scale"), gain.shape(), gain.as_slice().expect("contiguous"), true);
        }
    }

    pub(crate) fn visit_mut(&mut self, name: &str, sink: &mut ParamSinkMut<'_>) {
        self.base.visit_mut(&format!("{name}.base"), sink);
        let shape = self.base_scale.shape().to_vec();
        sink(&format!("{name}.base_scale"), &shape, self.base_scale.as_slice_mut().expect("contiguous"), true);
        for (i, (conv, gain)) in self.level_convs.iter_mut().zip(&mut self.wavelet_scales).enumerate() {
            conv.visit_mut(&format!("{name}.level{i}"), sink);
            let shape = gain.shape().to_vec();
            sink(&format!("{name}.level{i}.scale"), &shape, gain.as_slice_mut().expect("contiguous"), true);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn random(shape: (usize, usize, usize, usize), seed: u64) -> FeatureTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0))
    }

    fn max_abs(a: &FeatureTensor) -> f64 {
        a.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
    }

    #[test]
    fn identity_kernels_single_level_double_the_input() {
        let x = random((2, 3, 10, 12), 1);
        let out = WtConv::identity(3, 5, 1).forward(&x).unwrap();
        assert!(max_abs(&(&out - &(&x * 2.0))) < 1e-12);
    }

    #[test]
    fn identity_kernels_two_levels_add_the_low_band_once_more() {
        // The deeper level rebuilds LL1 and adds it to the convolved LL1.
        let x = random((1, 2, 16, 16), 2);
        let out = WtConv::identity(2, 5, 2).forward(&x).unwrap();
        let mut low_only = haar_dwt2(&x);
        for band in [&mut low_only.lh, &mut low_only.hl, &mut low_only.hh] {
            band.fill(0.0);
        }
        let expected = &(&x * 2.0) + &haar_idwt2(&low_only).unwrap();
        assert!(max_abs(&(&out - &expected)) < 1e-12);
    }

    #[test]
    fn zero_input_gives_zero_output_without_bias() {
        let mut conv = WtConv::new(4, 5, 2, &mut ChaCha8Rng::seed_from_u64(3));
        conv.base.bias.as_mut().unwrap().fill(0.0);
        let out = conv.forward(&Array4::zeros((1, 4, 9, 11))).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_deep_is_rejected_with_feasible_depth() {
        let conv = WtConv::new(1, 5, 3, &mut ChaCha8Rng::seed_from_u64(4));
        match conv.forward(&Array4::zeros((1, 1, 4, 40))) {
            Err(Error::TooManyLevels { max_levels, .. }) => assert_eq!(max_levels, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(max_levels(161, 401), 8);
        assert_eq!(max_levels(1, 401), 0);
    }

    // Dense-operator oracle: each stage built as an explicit matrix on one
    // channel plane, straight from the Haar and convolution definitions.

    fn haar_matrix(n: usize) -> Array2<f64> {
        // Rows: LL, LH, HL, HH blocks, each (n/2)^2, row-major.
        let m = n / 2;
        let mut d = Array2::zeros((4 * m * m, n * n));
        let signs = [[1.0, 1.0, 1.0, 1.0], [1.0, -1.0, 1.0, -1.0], [1.0, 1.0, -1.0, -1.0], [1.0, -1.0, -1.0, 1.0]];
        for (k, sg) in signs.iter().enumerate() {
            for i in 0..m {
                for j in 0..m {
                    let row = k * m * m + i * m + j;
                    let taps = [(2 * i, 2 * j), (2 * i, 2 * j + 1), (2 * i + 1, 2 * j), (2 * i + 1, 2 * j + 1)];
                    for (t, &(p, q)) in taps.iter().enumerate() {
                        d[[row, p * n + q]] = 0.5 * sg[t];
                    }
                }
            }
        }
        d
    }

    fn conv_matrix(kernel: ndarray::ArrayView2<'_, f64>, n: usize) -> Array2<f64> {
        let k = kernel.nrows() as isize;
        let half = k / 2;
        let mut a = Array2::zeros((n * n, n * n));
        for i in 0..n as isize {
            for j in 0..n as isize {
                for p in 0..k {
                    for q in 0..k {
                        let (si, sj) = (i + p - half, j + q - half);
                        if si >= 0 && sj >= 0 && si < n as isize && sj < n as isize {
                            a[[(i * n as isize + j) as usize, (si * n as isize + sj) as usize]] += kernel[[p as usize, q as usize]];
                        }
                    }
                }
            }
        }
        a
    }

    fn block_diag(blocks: &[Array2<f64>]) -> Array2<f64> {
        let n: usize = blocks.iter().map(|b| b.nrows()).sum();
        let mut out = Array2::zeros((n, n));
        let mut off = 0;
        for b in blocks {
            let k = b.nrows();
            out.slice_mut(s![off..off + k, off..off + k]).assign(b);
            off += k;
        }
        out
    }

    /// Operator of one level on a single channel plane of size `n`, acting on
    /// the stacked subband vector [LL, LH, HL, HH].
    fn level_operator(conv: &WtConv, level: usize, ch: usize, n: usize) -> Array2<f64> {
        let m = n / 2;
        let blocks: Vec<Array2<f64>> = (0..4)
            .map(|k| {
                let idx = 4 * ch + k;
                conv_matrix(conv.level_convs[level].weight.slice(s![idx, .., ..]), m) * conv.wavelet_scales[level][idx]
            })
            .collect();
        block_diag(&blocks)
    }

    #[test]
    fn two_levels_match_dense_operator_composition() {
        let (c, n) = (2, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut conv = WtConv::new(c, 5, 2, &mut rng);
        for s in conv.wavelet_scales.iter_mut().chain([&mut conv.base_scale]) {
            s.mapv_inplace(|_| rng.gen_range(0.5..1.5));
        }
        let x = random((1, c, n, n), 12);
        let out = conv.forward(&x).unwrap();

        let (d1, d2) = (haar_matrix(n), haar_matrix(n / 2));
        let q = (n / 2) * (n / 2);
        for ch in 0..c {
            let xv = Array1::from_iter(x.slice(s![0, ch, .., ..]).iter().copied());
            let a1 = level_operator(&conv, 0, ch, n);
            let a2 = level_operator(&conv, 1, ch, n / 2);
            // Deep level: LL1 -> D2^T A2 D2 LL1.
            let deep = d2.t().dot(&a2).dot(&d2);
            let mut select_ll = Array2::zeros((q, 4 * q));
            for i in 0..q {
                select_ll[[i, i]] = 1.0;
            }
            let mut lift = Array2::zeros((4 * q, q));
            lift.slice_mut(s![..q, ..]).assign(&Array2::eye(q));
            // Level 1: D1^T (A1 + lift * deep * select_ll) D1.
            let wavelet = d1.t().dot(&(&a1 + &lift.dot(&deep).dot(&select_ll))).dot(&d1);
            let base = conv_matrix(conv.base.weight.slice(s![ch, .., ..]), n) * conv.base_scale[ch];
            let total = &base + &wavelet;
            let bias = conv.base.bias.as_ref().unwrap()[ch] * conv.base_scale[ch];
            let expected = total.dot(&xv) + bias;
            let got = Array1::from_iter(out.slice(s![0, ch, .., ..]).iter().copied());
            let err = (&got - &expected).iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            assert!(err < 1e-9, "channel {ch}: {err}");
        }
    }

    #[test]
    fn backward_matches_vector_jacobian_of_dense_operator() {
        // <g, W x> = <W^T g, x> for the linear part (bias removed).
        let mut conv = WtConv::new(2, 5, 2, &mut ChaCha8Rng::seed_from_u64(13));
        conv.base.bias.as_mut().unwrap().fill(0.0);
        let x = random((1, 2, 9, 13), 14);
        let g = random((1, 2, 9, 13), 15);
        let (y, cache) = conv.forward_cached(&x).unwrap();
        let grads = conv.backward(&cache, &g);
        let lhs: f64 = g.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = grads.input.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}
