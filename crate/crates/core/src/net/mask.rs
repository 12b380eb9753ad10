//! Mask generator (frequency-shared two-layer LSTM plus a linear head) and
//! complex ratio mask application.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, Axis};
use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;

use super::ops::{sigmoid, uniform_init, Linear};
use super::{FeatureTensor, ParamSink, ParamSinkMut};
use crate::error::{Error, Result};
use crate::signal::Spectrogram;

/// Complex mask `[M, F, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMask {
    pub mask: Array3<Complex64>,
}

impl ComplexMask {
    pub fn ones(shape: (usize, usize, usize)) -> Self {
        Self {
            mask: Array3::from_elem(shape, Complex64::new(1.0, 0.0)),
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.mask.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.mask.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// `S = mask * Y`, bin by bin.
pub fn apply_cirm(mask: &ComplexMask, noisy: &Spectrogram) -> Result<Spectrogram> {
    if mask.shape() != noisy.shape() {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} vs spectrogram {:?}",
            mask.shape(),
            noisy.shape()
        )));
    }
    noisy.with_bins(&mask.mask * &noisy.bins)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `[4H, input]`, gate order input, forget, cell, output.
    pub w_ih: Array2<f64>,
    /// `[4H, H]`
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Stacked unidirectional LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub layers: Vec<LstmLayer>,
}

impl Lstm {
    pub fn new(input: usize, hidden: usize, layers: usize, rng: &mut ChaCha8Rng) -> Self {
        let layers = (0..layers)
            .map(|i| {
                let d_in = if i == 0 { input } else { hidden };
                LstmLayer {
                    w_ih: Array2::from_shape_vec((4 * hidden, d_in), uniform_init(rng, hidden, 4 * hidden * d_in)).expect("shape"),
                    w_hh: Array2::from_shape_vec((4 * hidden, hidden), uniform_init(rng, hidden, 4 * hidden * hidden)).expect("shape"),
                    bias: Array1::from(uniform_init(rng, hidden, 4 * hidden)),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(input: usize, hidden: usize, layers: usize) -> Self {
        let layers = (0..layers)
            .map(|i| {
                let d_in = if i == 0 { input } else { hidden };
                LstmLayer {
                    w_ih: Array2::zeros((4 * hidden, d_in)),
                    w_hh: Array2::zeros((4 * hidden, hidden)),
                    bias: Array1::zeros(4 * hidden),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].w_hh.ncols()
    }

    pub fn input(&self) -> usize {
        self.layers[0].w_ih.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w_ih.len() + l.w_hh.len() + l.bias.len()).sum()
    }

    /// Runs `S` sequences of `[T, input]` (as `[S, T, input]`) and hands the
    /// top-layer state `[S, H]` of every step to `emit(t, h)`.
    pub fn run(&self, x: &Array3<f64>, mut emit: impl FnMut(usize, &Array2<f64>)) {
        let (s_count, t_count, _) = x.dim();
        let h_dim = self.hidden();
        let mut h: Vec<Array2<f64>> = vec![Array2::zeros((s_count, h_dim)); self.layers.len()];
        let mut c: Vec<Array2<f64>> = vec![Array2::zeros((s_count, h_dim)); self.layers.len()];
        let mut gates = Array2::<f64>::zeros((s_count, 4 * h_dim));
        for t in 0..t_count {
            for (li, layer) in self.layers.iter().enumerate() {
                gates.assign(&layer.bias);
                if li == 0 {
                    general_mat_mul(1.0, &x.slice(s![.., t, ..]), &layer.w_ih.t(), 1.0, &mut gates);
                } else {
                    let (below, _) = h.split_at(li);
                    general_mat_mul(1.0, &below[li - 1], &layer.w_ih.t(), 1.0, &mut gates);
                }
                general_mat_mul(1.0, &h[li], &layer.w_hh.t(), 1.0, &mut gates);
                let (hl, cl) = (&mut h[li], &mut c[li]);
                for ((g, mut hrow), mut crow) in gates.rows().into_iter().zip(hl.rows_mut()).zip(cl.rows_mut()) {
                    for k in 0..h_dim {
                        let i = sigmoid(g[k]);
                        let f = sigmoid(g[h_dim + k]);
                        let cell = g[2 * h_dim + k].tanh();
                        let o = sigmoid(g[3 * h_dim + k]);
                        let cv = f * crow[k] + i * cell;
                        crow[k] = cv;
                        hrow[k] = o * cv.tanh();
                    }
                }
            }
            emit(t, &h[self.layers.len() - 1]);
        }
    }

    fn visit(&self, name: &str, sink: &mut ParamSink<'_>) {
        for (i, l) in self.layers.iter().enumerate() {
            sink(&format!("{name}.layer{i}.w_ih"), l.w_ih.shape(), l.w_ih.as_slice().expect("contiguous"), true);
            sink(&format!("{name}.layer{i}.w_hh"), l.w_hh.shape(), l.w_hh.as_slice().expect("contiguous"), true);
            sink(&format!("{name}.layer{i}.bias"), l.bias.shape(), l.bias.as_slice().expect("contiguous"), true);
        }
    }

    fn visit_mut(&mut self, name: &str, sink: &mut ParamSinkMut<'_>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            let shape = l.w_ih.shape().to_vec();
            sink(&format!("{name}.layer{i}.w_ih"), &shape, l.w_ih.as_slice_mut().expect("contiguous"), true);
            let shape = l.w_hh.shape().to_vec();
            sink(&format!("{name}.layer{i}.w_hh"), &shape, l.w_hh.as_slice_mut().expect("contiguous"), true);
            let shape = l.bias.shape().to_vec();
            sink(&format!("{name}.layer{i}.bias"), &shape, l.bias.as_slice_mut().expect("contiguous"), true);
        }
    }
}

/// Linear map from the recurrent state to `2M` values (real parts, then
/// imaginary parts), optionally compressed as `K tanh(.)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskHead {
    pub linear: Linear,
    pub compression: Option<f64>,
}

impl MaskHead {
    pub fn num_mics(&self) -> usize {
        self.linear.bias.len() / 2
    }

    /// Rows of `[R, H]` states to `[R, 2M]` mask components.
    pub fn forward(&self, h: &Array2<f64>) -> Array2<f64> {
        let mut y = self.linear.forward(h);
        if let Some(k) = self.compression {
            y.mapv_inplace(|v| k * v.tanh());
        }
        y
    }
}

/// Gradients of the head-plus-mask tail.
#[derive(Debug, Clone, PartialEq)]
pub struct CirmTailGrads {
    /// `[F, T, H]`
    pub hidden: Array3<f64>,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    /// `dL/dRe + j dL/dIm` of the noisy bins.
    pub noisy: Array3<Complex64>,
}

fn tail_mask(head: &MaskHead, hidden: &Array3<f64>, m: usize) -> (Array2<f64>, Array3<Complex64>) {
    let (f, t, h) = hidden.dim();
    let rows = hidden.to_shape((f * t, h)).expect("contiguous").to_owned();
    let pre = head.linear.forward(&rows);
    let mut out = pre.clone();
    if let Some(k) = head.compression {
        out.mapv_inplace(|v| k * v.tanh());
    }
    let mask = Array3::from_shape_fn((m, f, t), |(mi, fi, ti)| {
        let r = fi * t + ti;
        Complex64::new(out[[r, mi]], out[[r, m + mi]])
    });
    (pre, mask)
}

/// Head then mask application, for hidden states `[F, T, H]` and noisy bins `[M, F, T]`.
pub fn cirm_tail_forward(head: &MaskHead, hidden: &Array3<f64>, noisy: &Array3<Complex64>) -> Result<Array3<Complex64>> {
    let (m, f, t) = noisy.dim();
    if m != head.num_mics() || (f, t) != (hidden.dim().0, hidden.dim().1) {
        return Err(Error::ShapeMismatch(format!(
            "hidden {:?} / head for {} mics vs noisy {:?}",
            hidden.dim(),
            head.num_mics(),
            noisy.dim()
        )));
    }
    let (_, mask) = tail_mask(head, hidden, m);
    Ok(mask * noisy)
}

/// Backward of [`cirm_tail_forward`]; `g` packs `dL/dRe + j dL/dIm` of the output.
pub fn cirm_tail_backward(head: &MaskHead, hidden: &Array3<f64>, noisy: &Array3<Complex64>, g: &Array3<Complex64>) -> CirmTailGrads {
    let (m, f, t) = noisy.dim();
    let hd = hidden.dim().2;
    let (pre, mask) = tail_mask(head, hidden, m);
    // For S = mask * Y: dL/dmask = g conj(Y), dL/dY = g conj(mask).
    let d_mask = g * &noisy.mapv(|v| v.conj());
    let d_noisy = g * &mask.mapv(|v| v.conj());
    let mut d_out = Array2::<f64>::zeros((f * t, 2 * m));
    for ((mi, fi, ti), v) in d_mask.indexed_iter() {
        let r = fi * t + ti;
        d_out[[r, mi]] = v.re;
        d_out[[r, m + mi]] = v.im;
    }
    if let Some(k) = head.compression {
        ndarray::Zip::from(&mut d_out).and(&pre).for_each(|d, &p| {
            let th = p.tanh();
            *d *= k * (1.0 - th * th);
        });
    }
    let rows = hidden.to_shape((f * t, hd)).expect("contiguous").to_owned();
    let weight = d_out.t().dot(&rows);
    let bias = d_out.sum_axis(Axis(0));
    let d_hidden = d_out.dot(&head.linear.weight).into_shape_with_order((f, t, hd)).expect("shape");
    CirmTailGrads {
        hidden: d_hidden,
        weight,
        bias,
        noisy: d_noisy,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskGenerator {
    pub lstm: Lstm,
    pub head: MaskHead,
}

impl MaskGenerator {
    /// `channels` decoder channels over the stacked `2F` axis; the LSTM sees
    /// `2 * channels` features per frequency bin.
    pub fn new(channels: usize, hidden: usize, layers: usize, num_mics: usize, compression: Option<f64>, rng: &mut ChaCha8Rng) -> Self {
        Self {
            lstm: Lstm::new(2 * channels, hidden, layers, rng),
            head: MaskHead {
                linear: Linear::new(hidden, 2 * num_mics, rng),
                compression,
            },
        }
    }

    pub fn num_params(&self) -> usize {
        self.lstm.num_params() + self.head.linear.num_params()
    }

    /// `[B, C, 2F, T]` decoder output to one mask per batch entry.
    pub fn forward(&self, x: &FeatureTensor) -> Result<Vec<ComplexMask>> {
        let (b, c, two_f, t) = x.dim();
        if two_f % 2 != 0 || 2 * c != self.lstm.input() {
            return Err(Error::ShapeMismatch(format!(
                "mask generator expects [B, {}, 2F, T], got {:?}",
                self.lstm.input() / 2,
                x.dim()
            )));
        }
        let f = two_f / 2;
        let m = self.head.num_mics();
        // Sequence (b, f) at step t sees [real-half channels, imaginary-half channels].
        let mut seq = Array3::<f64>::zeros((b * f, t, 2 * c));
        for bi in 0..b {
            for ci in 0..c {
                for fi in 0..f {
                    seq.slice_mut(s![bi * f + fi, .., ci]).assign(&x.slice(s![bi, ci, fi, ..]));
                    seq.slice_mut(s![bi * f + fi, .., c + ci]).assign(&x.slice(s![bi, ci, f + fi, ..]));
                }
            }
        }
        let mut masks = vec![Array3::<Complex64>::zeros((m, f, t)); b];
        self.lstm.run(&seq, |ti, h| {
            let out = self.head.forward(h);
            for (row, vals) in out.rows().into_iter().enumerate() {
                let (bi, fi) = (row / f, row % f);
                for mi in 0..m {
                    masks[bi][[mi, fi, ti]] = Complex64::new(vals[mi], vals[m + mi]);
                }
            }
        });
        Ok(masks.into_iter().map(|mask| ComplexMask { mask }).collect())
    }

    pub(crate) fn visit(&self, name: &str, sink: &mut ParamSink<'_>) {
        self.lstm.visit(&format!("{name}.lstm"), sink);
        self.head.linear.visit(&format!("{name}.head"), sink);
    }

    pub(crate) fn visit_mut(&mut self, name: &str, sink: &mut ParamSinkMut<'_>) {
        self.lstm.visit_mut(&format!("{name}.lstm"), sink);
        self.head.linear.visit_mut(&format!("{name}.head"), sink);
    }
}
