//! Conformer blocks on `[N, L, D]` sequences and the two-pass TF-Conformer.
//! Attention carries no positional encoding.

use ndarray::{s, Array1, Array2, Array3, Array4};
use rand_chacha::ChaCha8Rng;

use super::ops::{sigmoid, swish, uniform_init, BatchNorm, LayerNorm, Linear};
use super::{FeatureTensor, ForwardCtx, ParamSink, ParamSinkMut};
use crate::error::{Error, Result};

fn flat(x: &Array3<f64>) -> Array2<f64> {
    let (n, l, d) = x.dim();
    x.to_shape((n * l, d)).expect("contiguous").to_owned()
}

fn unflat(x: Array2<f64>, n: usize, l: usize) -> Array3<f64> {
    let d = x.ncols();
    x.into_shape_with_order((n, l, d)).expect("shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub norm: LayerNorm,
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    fn new(d: usize, expansion: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            norm: LayerNorm::new(d),
            up: Linear::new(d, expansion * d, rng),
            down: Linear::new(expansion * d, d, rng),
        }
    }

    fn forward(&self, x: &Array2<f64>, ctx: &mut ForwardCtx, p: f64) -> Array2<f64> {
        let mut h = self.up.forward(&self.norm.forward(x));
        h.mapv_inplace(swish);
        ctx.dropout(h.as_slice_mut().expect("contiguous"), p);
        let mut y = self.down.forward(&h);
        ctx.dropout(y.as_slice_mut().expect("contiguous"), p);
        y
    }

    fn num_params(&self) -> usize {
        self.norm.num_params() + self.up.num_params() + self.down.num_params()
    }

    fn visit(&self, name: &str, sink: &mut ParamSink<'_>) {
        self.norm.visit(&format!("{name}.norm"), sink);
        self.up.visit(&format!("{name}.up"), sink);
        self.down.visit(&format!("{name}.down"), sink);
    }

    fn visit_mut(&mut self, name: &str, sink: &mut ParamSinkMut<'_>) {
        self.norm.visit_mut(&format!("{name}.norm"), sink);
        self.up.visit_mut(&format!("{name}.up"), sink);
        self.down.visit_mut(&format!("{name}.down"), sink);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    pub norm: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl SelfAttention {
    fn new(d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            norm: LayerNorm::new(d),
            query: Linear::new(d, d, rng),
            key: Linear::new(d, d, rng),
            value: Linear::new(d, d, rng),
            out: Linear::new(d, d, rng),
            heads,
        }
    }

    /// Returns the projected output and, if asked, the `[N, H, L, L]` weights.
    fn forward(&self, x: &Array3<f64>, ctx: &mut ForwardCtx, p: f64, keep: bool) -> (Array3<f64>, Option<Array4<f64>>) {
        let (n, l, d) = x.dim();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let xn = self.norm.forward(&flat(x));
        let q = unflat(self.query.forward(&xn), n, l);
        let k = unflat(self.key.forward(&xn), n, l);
        let v = unflat(self.value.forward(&xn), n, l);
        let mut merged = Array3::<f64>::zeros((n, l, d));
        let mut kept = keep.then(|| Array4::<f64>::zeros((n, self.heads, l, l)));
        for ni in 0..n {
            for h in 0..self.heads {
                let (c0, c1) = (h * dh, (h + 1) * dh);
                let qh = q.slice(s![ni, .., c0..c1]);
                let kh = k.slice(s![ni, .., c0..c1]);
                let vh = v.slice(s![ni, .., c0..c1]);
                let mut a = qh.dot(&kh.t());
                for mut row in a.rows_mut() {
                    let m = row.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v * scale));
                    row.mapv_inplace(|v| (v * scale - m).exp());
                    let z = row.sum();
                    row /= z;
                }
                if let Some(store) = kept.as_mut() {
                    store.slice_mut(s![ni, h, .., ..]).assign(&a);
                }
                ctx.dropout(a.as_slice_mut().expect("contiguous"), p);
                merged.slice_mut(s![ni, .., c0..c1]).assign(&a.dot(&vh));
            }
        }
        let mut y = self.out.forward(&flat(&merged));
        ctx.dropout(y.as_slice_mut().expect("contiguous"), p);
        (unflat(y, n, l), kept)
    }

    fn num_params(&self) -> usize {
        self.norm.num_params() + [&self.query, &self.key, &self.value, &self.out].iter().map(|l| l.num_params()).sum::<usize>()
    }

    fn visit(&self, name: &str, sink: &mut ParamSink<'_>) {
        self.norm.visit(&format!("{name}.norm"), sink);
        self.query.visit(&format!("{name}.query"), sink);
        self.key.visit(&format!("{name}.key"), sink);
        self.value.visit(&format!("{name}.value"), sink);
        self.out.visit(&format!("{name}.out"), sink);
    }

    fn visit_mut(&mut self, name: &str, sink: &mut ParamSinkMut<'_>) {
        self.norm.visit_mut(&format!("{name}.norm"), sink);
        self.query.visit_mut(&format!("{name}.query"), sink);
        self.key.visit_mut(&format!("{name}.key"), sink);
        self.value.visit_mut(&format!("{name}.value"), sink);
        self.out.visit_mut(&format!("{name}.out"), sink);
    }
}

/// LayerNorm, point-wise conv with GLU, depthwise conv, BN, Swish, point-wise conv.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvModule {
    pub norm: LayerNorm,
    pub pointwise_in: Linear,
    /// `[D, K]`
    pub depthwise: Array2<f64>,
    pub depthwise_bias: Array1<f64>,
    pub bn: BatchNorm,
    pub pointwise_out: Linear,
}

impl ConvModule {
    fn new(d: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            norm: LayerNorm::new(d),
            pointwise_in: Linear::new(d, 2 * d, rng),
            depthwise: Array2::from_shape_vec((d, kernel), uniform_init(rng, kernel, d * kernel)).expect("shape"),
            depthwise_bias: Array1::from(uniform_init(rng, kernel, d)),
            bn: BatchNorm::new(d),
            pointwise_out: Linear::new(d, d, rng),
        }
    }

    fn forward(&self, x: &Array3<f64>, ctx: &mut ForwardCtx, p: f64) -> Array3<f64> {
        let (n, l, d) = x.dim();
        let h = self.pointwise_in.forward(&self.norm.forward(&flat(x)));
        let glu = Array2::from_shape_fn((n * l, d), |(r, c)| h[[r, c]] * sigmoid(h[[r, c + d]]));
        let glu = unflat(glu, n, l);
        let k = self.depthwise.ncols();
        let half = (k / 2) as isize;
        let mut y = Array3::<f64>::zeros((n, l, d));
        y += &self.depthwise_bias;
        for ni in 0..n {
            for j in 0..k {
                let shift = j as isize - half;
                let (l0, l1) = ((-shift).max(0) as usize, (l as isize - shift).min(l as isize).max(0) as usize);
                if l0 >= l1 {
                    continue;
                }
                let src = glu.slice(s![ni, (l0 as isize + shift) as usize..(l1 as isize + shift) as usize, ..]);
                let w = self.depthwise.column(j);
                let mut dst = y.slice_mut(s![ni, l0..l1, ..]);
                dst += &(&src * &w);
            }
        }
        self.bn.forward3(&mut y, ctx.train);
        y.mapv_inplace(swish);
        let mut out = self.pointwise_out.forward(&flat(&y));
        ctx.dropout(out.as_slice_mut().expect("contiguous"), p);
        unflat(out, n, l)
    }

    fn num_params(&self) -> usize {
        self.norm.num_params()
            + self.pointwise_in.num_params()
            + self.depthwise.len()
            + self.depthwise_bias.len()
            + self.bn.num_params()
            + self.pointwise_out.num_params()
    }

    fn visit(&self, name: &str, sink: &mut ParamSink<'_>) {
        self.norm.visit(&format!("{name}.norm"), sink);
        self.pointwise_in.visit(&format!("{name}.pointwise_in"), sink);
        sink(&format!("{name}.depthwise.weight"), self.depthwise.shape(), self.depthwise.as_slice().expect("contiguous"), true);
        sink(&format!("{name}.depthwise.bias"), self.depthwise_bias.shape(), self.depthwise_bias.as_slice().expect("contiguous"), true);
        self.bn.visit(&format!("{name}.bn"), sink);
        self.pointwise_out.visit(&format!("{name}.pointwise_out"), sink);
    }

    fn visit_mut(&mut self, name: &str, sink: &mut ParamSinkMut<'_>) {
        self.norm.visit_mut(&format!("{name}.norm"), sink);
        self.pointwise_in.visit_mut(&format!("{name}.pointwise_in"), sink);
        let shape = self.depthwise.shape().to_vec();
        sink(&format!("{name}.depthwise.weight"), &shape, self.depthwise.as_slice_mut().expect("contiguous"), true);
        let shape = self.depthwise_bias.shape().to_vec();
        sink(&format!("{name}.depthwise.bias"), &shape, self.depthwise_bias.as_slice_mut().expect("contiguous"), true);
        self.bn.visit_mut(&format!("{name}.bn"), sink);
        self.pointwise_out.visit_mut(&format!("{name}.pointwise_out"), sink);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConformerBlock {
    pub ffn1: FeedForward,
    pub attention: SelfAttention,
    pub conv: ConvModule,
    pub ffn2: FeedForward,
    pub final_norm: LayerNorm,
    pub dropout: f64,
}

/// Attention weights captured by [`ConformerBlock::forward_traced`].
#[derive(Debug, Clone)]
pub struct ConformerTrace {
    /// `[N, heads, L, L]`
    pub attention: Array4<f64>,
}

impl ConformerBlock {
    pub fn new(d: usize, heads: usize, ffn_expansion: usize, conv_kernel: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if d == 0 || heads == 0 || d % heads != 0 {
            return Err(Error::InvalidConfig(format!("{heads} heads do not divide conformer dim {d}")));
        }
        Ok(Self {
            ffn1: FeedForward::new(d, ffn_expansion, rng),
            attention: SelfAttention::new(d, heads, rng),
            conv: ConvModule::new(d, conv_kernel, rng),
            ffn2: FeedForward::new(d, ffn_expansion, rng),
            final_norm: LayerNorm::new(d),
            dropout,
        })
    }

    pub fn dim(&self) -> usize {
        self.final_norm.gamma.len()
    }

    pub fn forward(&self, x: &Array3<f64>, ctx: &mut ForwardCtx) -> Array3<f64> {
        self.run(x, ctx, false).0
    }

    pub fn forward_traced(&self, x: &Array3<f64>, ctx: &mut ForwardCtx) -> (Array3<f64>, ConformerTrace) {
        let (y, attention) = self.run(x, ctx, true);
        (
            y,
            ConformerTrace {
                attention: attention.expect("kept"),
            },
        )
    }

    fn run(&self, x: &Array3<f64>, ctx: &mut ForwardCtx, keep: bool) -> (Array3<f64>, Option<Array4<f64>>) {
        let (n, l, _) = x.dim();
        let p = self.dropout;
        let mut h = flat(x);
        h.scaled_add(0.5, &self.ffn1.forward(&h, ctx, p));
        let h3 = unflat(h, n, l);
        let (att, kept) = self.attention.forward(&h3, ctx, p, keep);
        let h3 = h3 + att;
        let conv = self.conv.forward(&h3, ctx, p);
        let mut h = flat(&(h3 + conv));
        h.scaled_add(0.5, &self.ffn2.forward(&h, ctx, p));
        (unflat(self.final_norm.forward(&h), n, l), kept)
    }

    pub fn num_params(&self) -> usize {
        self.ffn1.num_params() + self.attention.num_params() + self.conv.num_params() + self.ffn2.num_params() + self.final_norm.num_params()
    }

    pub(crate) fn visit(&self, name: &str, sink: &mut ParamSink<'_>) {
        self.ffn1.visit(&format!("{name}.ffn1"), sink);
        self.attention.visit(&format!("{name}.attention"), sink);
        self.conv.visit(&format!("{name}.conv"), sink);
        self.ffn2.visit(&format!("{name}.ffn2"), sink);
        self.final_norm.visit(&format!("{name}.final_norm"), sink);
    }

    pub(crate) fn visit_mut(&mut self, name: &str, sink: &mut ParamSinkMut<'_>) {
        self.ffn1.visit_mut(&format!("{name}.ffn1"), sink);
        self.attention.visit_mut(&format!("{name}.attention"), sink);
        self.conv.visit_mut(&format!("{name}.conv"), sink);
        self.ffn2.visit_mut(&format!("{name}.ffn2"), sink);
        self.final_norm.visit_mut(&format!("{name}.final_norm"), sink);
    }
}

/// Time pass then frequency pass, fused with the input through a learned scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct TfConformer {
    pub time: ConformerBlock,
    pub frequency: ConformerBlock,
    /// Residual gate, one entry.
    pub gamma: Array1<f64>,
}

impl TfConformer {
    pub fn new(d: usize, heads: usize, ffn_expansion: usize, conv_kernel: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            time: ConformerBlock::new(d, heads, ffn_expansion, conv_kernel, dropout, rng)?,
            frequency: ConformerBlock::new(d, heads, ffn_expansion, conv_kernel, dropout, rng)?,
            gamma: Array1::ones(1),
        })
    }

    pub fn forward(&self, x: &FeatureTensor, ctx: &mut ForwardCtx) -> Result<FeatureTensor> {
        let (b, c, f, t) = x.dim();
        if c != self.time.dim() {
            return Err(Error::ShapeMismatch(format!(
                "tf-conformer expects {} channels, got {c}",
                self.time.dim()
            )));
        }
        // [B, C, F, T] -> [B*F, T, C]
        let seq = x.view().permuted_axes([0, 2, 3, 1]).as_standard_layout().into_owned();
        let seq = seq.into_shape_with_order((b * f, t, c)).expect("shape");
        let seq = self.time.forward(&seq, ctx);
        // [B, F, T, C] -> [B*T, F, C]
        let seq = seq.into_shape_with_order((b, f, t, c)).expect("shape");
        let seq = seq.permuted_axes([0, 2, 1, 3]).as_standard_layout().into_owned();
        let seq = seq.into_shape_with_order((b * t, f, c)).expect("shape");
        let seq = self.frequency.forward(&seq, ctx);
        // [B, T, F, C] -> [B, C, F, T]
        let h = seq
            .into_shape_with_order((b, t, f, c))
            .expect("shape")
            .permuted_axes([0, 3, 2, 1])
            .as_standard_layout()
            .into_owned();
        let gamma = self.gamma[0];
        Ok(x + &(h * gamma))
    }

    pub fn num_params(&self) -> usize {
        self.time.num_params() + self.frequency.num_params() + 1
    }

    pub(crate) fn visit(&self, name: &str, sink: &mut ParamSink<'_>) {
        self.time.visit(&format!("{name}.time"), sink);
        self.frequency.visit(&format!("{name}.frequency"), sink);
        sink(&format!("{name}.gamma"), self.gamma.shape(), self.gamma.as_slice().expect("contiguous"), true);
    }

    pub(crate) fn visit_mut(&mut self, name: &str, sink: &mut ParamSinkMut<'_>) {
        self.time.visit_mut(&format!("{name}.time"), sink);
        self.frequency.visit_mut(&format!("{name}.frequency"), sink);
        sink(&format!("{name}.gamma"), &[1], self.gamma.as_slice_mut().expect("contiguous"), true);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random3(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut r = rng(seed);
        Array3::from_shape_simple_fn(shape, || r.gen_range(-1.0..1.0))
    }

    #[test]
    fn heads_must_divide_dim() {
        assert!(ConformerBlock::new(64, 5, 4, 31, 0.2, &mut rng(0)).is_err());
    }

    #[test]
    fn shape_is_kept_and_attention_rows_are_stochastic() {
        let block = ConformerBlock::new(64, 4, 4, 31, 0.2, &mut rng(1)).unwrap();
        let x = random3((8, 50, 64), 2);
        let (y, trace) = block.forward_traced(&x, &mut ForwardCtx::eval());
        assert_eq!(y.dim(), (8, 50, 64));
        assert!(y.iter().all(|v| v.is_finite()));
        assert_eq!(trace.attention.dim(), (8, 4, 50, 50));
        for row in trace.attention.lanes(Axis(3)) {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn zero_output_projections_leave_the_final_norm() {
        let mut block = ConformerBlock::new(16, 4, 4, 31, 0.2, &mut rng(3)).unwrap();
        block.ffn1.down = Linear::zeros(64, 16);
        block.ffn2.down = Linear::zeros(64, 16);
        block.attention.out = Linear::zeros(16, 16);
        block.conv.pointwise_out = Linear::zeros(16, 16);
        let x = random3((2, 9, 16), 4);
        let y = block.forward(&x, &mut ForwardCtx::eval());
        let expected = unflat(block.final_norm.forward(&flat(&x)), 2, 9);
        assert_eq!(y, expected);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= ((2 * 9 * 16) as f64).sqrt() + 1e-9);
    }

    #[test]
    fn tf_conformer_keeps_shape_and_gate_zero_is_identity() {
        let mut tf = TfConformer::new(16, 4, 4, 31, 0.2, &mut rng(5)).unwrap();
        let mut r = rng(6);
        let x = Array4::from_shape_simple_fn((2, 16, 5, 7), || r.gen_range(-1.0..1.0));
        let y = tf.forward(&x, &mut ForwardCtx::eval()).unwrap();
        assert_eq!(y.dim(), x.dim());
        assert_ne!(y, x);
        tf.gamma[0] = 0.0;
        assert_eq!(tf.forward(&x, &mut ForwardCtx::eval()).unwrap(), x);
    }

    #[test]
    fn batch_permutation_is_equivariant() {
        let tf = TfConformer::new(8, 4, 4, 31, 0.2, &mut rng(7)).unwrap();
        let mut r = rng(8);
        let x = Array4::from_shape_simple_fn((2, 8, 4, 6), || r.gen_range(-1.0..1.0));
        let mut swapped = x.clone();
        swapped.slice_mut(s![0, .., .., ..]).assign(&x.slice(s![1, .., .., ..]));
        swapped.slice_mut(s![1, .., .., ..]).assign(&x.slice(s![0, .., .., ..]));
        let y = tf.forward(&x, &mut ForwardCtx::eval()).unwrap();
        let ys = tf.forward(&swapped, &mut ForwardCtx::eval()).unwrap();
        assert_eq!(ys.slice(s![0, .., .., ..]), y.slice(s![1, .., .., ..]));
    }
}
