//! Encoder and decoder stages: (transposed) conv, batch norm, dropout, PReLU,
//! then a wavelet convolution.

use rand_chacha::ChaCha8Rng;

use super::ops::{BatchNorm, Conv2d, ConvTranspose2d, PRelu};
use super::wtconv::WtConv;
use super::{FeatureTensor, ForwardCtx, ParamSink, ParamSinkMut};
use crate::error::{Error, Result};

/// Static geometry of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pad: usize,
    pub wt_kernel: usize,
    pub wt_levels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WtBlock {
    pub conv: Conv2d,
    pub norm: BatchNorm,
    pub act: PRelu,
    pub wtconv: WtConv,
    pub dropout: f64,
}

impl WtBlock {
    pub fn new(spec: StageSpec, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new(
                spec.c_in,
                spec.c_out,
                spec.kernel,
                spec.stride,
                (spec.pad, spec.pad),
                (spec.kernel.1 - 1, 0),
                rng,
            ),
            norm: BatchNorm::new(spec.c_out),
            act: PRelu::new(spec.c_out),
            wtconv: WtConv::new(spec.c_out, spec.wt_kernel, spec.wt_levels, rng),
            dropout,
        }
    }

    pub fn out_freq(&self, freq: usize) -> Option<usize> {
        self.conv.out_hw(freq, 1).map(|(h, _)| h)
    }

    pub fn forward(&self, x: &FeatureTensor, ctx: &mut ForwardCtx) -> Result<FeatureTensor> {
        let c_in = self.conv.weight.dim().1;
        if x.dim().1 != c_in {
            return Err(Error::ShapeMismatch(format!("expected {c_in} input channels, got {}", x.dim().1)));
        }
        if self.conv.out_hw(x.dim().2, x.dim().3).is_none() {
            return Err(Error::ShapeMismatch(format!("input {:?} smaller than the kernel", x.dim())));
        }
        let mut y = self.conv.forward(x);
        self.norm.forward4(&mut y, ctx.train);
        ctx.dropout(y.as_slice_mut().expect("contiguous"), self.dropout);
        self.act.forward(&mut y);
        self.wtconv.forward(&y)
    }

    pub fn num_params(&self) -> usize {
        self.conv.num_params() + self.norm.num_params() + self.act.num_params() + self.wtconv.num_params()
    }

    pub(crate) fn visit(&self, name: &str, sink: &mut ParamSink<'_>) {
        self.conv.visit(&format!("{name}.conv"), sink);
        self.norm.visit(&format!("{name}.norm"), sink);
        self.act.visit(&format!("{name}.act"), sink);
        self.wtconv.visit(&format!("{name}.wtconv"), sink);
    }

    pub(crate) fn visit_mut(&mut self, name: &str, sink: &mut ParamSinkMut<'_>) {
        self.conv.visit_mut(&format!("{name}.conv"), sink);
        self.norm.visit_mut(&format!("{name}.norm"), sink);
        self.act.visit_mut(&format!("{name}.act"), sink);
        self.wtconv.visit_mut(&format!("{name}.wtconv"), sink);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransWtBlock {
    pub conv: ConvTranspose2d,
    pub norm: BatchNorm,
    pub act: PRelu,
    pub wtconv: WtConv,
    pub dropout: f64,
}

impl TransWtBlock {
    /// Picks the output padding that maps `in_freq` to `out_freq`; fails when
    /// no value below the stride does.
    pub fn new(stage: &str, spec: StageSpec, in_freq: usize, out_freq: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let base = ((in_freq.max(1) - 1) * spec.stride + spec.kernel.0) as isize - 2 * spec.pad as isize;
        let op = out_freq as isize - base;
        if op < 0 || op >= spec.stride as isize {
            return Err(Error::Stage {
                stage: stage.to_string(),
                reason: format!(
                    "kernel {} stride {} pad {} cannot map {in_freq} bins to {out_freq} (output padding {op})",
                    spec.kernel.0, spec.stride, spec.pad
                ),
            });
        }
        Ok(Self {
            conv: ConvTranspose2d::new(spec.c_in, spec.c_out, spec.kernel, spec.stride, spec.pad, op as usize, rng),
            norm: BatchNorm::new(spec.c_out),
            act: PRelu::new(spec.c_out),
            wtconv: WtConv::new(spec.c_out, spec.wt_kernel, spec.wt_levels, rng),
            dropout,
        })
    }

    pub fn out_freq(&self, freq: usize) -> usize {
        self.conv.out_h(freq)
    }

    pub fn forward(&self, x: &FeatureTensor, ctx: &mut ForwardCtx) -> Result<FeatureTensor> {
        let c_in = self.conv.weight.dim().0;
        if x.dim().1 != c_in {
            return Err(Error::ShapeMismatch(format!("expected {c_in} input channels, got {}", x.dim().1)));
        }
        let mut y = self.conv.forward(x);
        self.norm.forward4(&mut y, ctx.train);
        ctx.dropout(y.as_slice_mut().expect("contiguous"), self.dropout);
        self.act.forward(&mut y);
        self.wtconv.forward(&y)
    }

    pub fn num_params(&self) -> usize {
        self.conv.num_params() + self.norm.num_params() + self.act.num_params() + self.wtconv.num_params()
    }

    pub(crate) fn visit(&self, name: &str, sink: &mut ParamSink<'_>) {
        self.conv.visit(&format!("{name}.conv"), sink);
        self.norm.visit(&format!("{name}.norm"), sink);
        self.act.visit(&format!("{name}.act"), sink);
        self.wtconv.visit(&format!("{name}.wtconv"), sink);
    }

    pub(crate) fn visit_mut(&mut self, name: &str, sink: &mut ParamSinkMut<'_>) {
        self.conv.visit_mut(&format!("{name}.conv"), sink);
        self.norm.visit_mut(&format!("{name}.norm"), sink);
        self.act.visit_mut(&format!("{name}.act"), sink);
        self.wtconv.visit_mut(&format!("{name}.wtconv"), sink);
    }
}
