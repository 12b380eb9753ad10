//! Orthonormal 2-D Haar analysis and synthesis over the last two axes of a
//! `[B, C, H, W]` tensor. Odd extents are reflect-padded by one row/column
//! before analysis and cropped after synthesis.

use ndarray::{s, Array4, Zip};

use super::FeatureTensor;
use crate::error::{Error, Result};

/// Four subbands of one analysis level plus the pre-padding extent.
#[derive(Debug, Clone, PartialEq)]
pub struct Subbands {
    pub ll: FeatureTensor,
    pub lh: FeatureTensor,
    pub hl: FeatureTensor,
    pub hh: FeatureTensor,
    /// `(H, W)` of the analysed input before reflect padding.
    pub orig: (usize, usize),
}

impl Subbands {
    pub fn zeros_like(&self) -> Self {
        let z = Array4::zeros(self.ll.dim());
        Self {
            ll: z.clone(),
            lh: z.clone(),
            hl: z.clone(),
            hh: z,
            orig: self.orig,
        }
    }

    pub fn energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh]
            .iter()
            .map(|b| b.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

/// Extends odd `H`/`W` by reflecting the second-to-last row/column
/// (repeating it when the size is 1).
pub(crate) fn reflect_pad_even(x: &FeatureTensor) -> FeatureTensor {
    let (b, c, h, w) = x.dim();
    let (hp, wp) = (h + h % 2, w + w % 2);
    if (hp, wp) == (h, w) {
        return x.clone();
    }
    let mut out = Array4::zeros((b, c, hp, wp));
    out.slice_mut(s![.., .., ..h, ..w]).assign(x);
    if hp > h {
        let src = x.slice(s![.., .., h.saturating_sub(2), ..]).to_owned();
        out.slice_mut(s![.., .., h, ..w]).assign(&src);
    }
    if wp > w {
        let src = out.slice(s![.., .., .., w.saturating_sub(2)]).to_owned();
        out.slice_mut(s![.., .., .., w]).assign(&src);
    }
    out
}

/// Adjoint of [`reflect_pad_even`]: folds the padded row/column back.
pub(crate) fn reflect_pad_adjoint(g: &FeatureTensor, (h, w): (usize, usize)) -> FeatureTensor {
    let mut g = g.clone();
    let (_, _, hp, wp) = g.dim();
    if wp > w {
        let col = g.slice(s![.., .., .., w]).to_owned();
        let mut dst = g.slice_mut(s![.., .., .., w.saturating_sub(2)]);
        dst += &col;
    }
    if hp > h {
        let row = g.slice(s![.., .., h, ..]).to_owned();
        let mut dst = g.slice_mut(s![.., .., h.saturating_sub(2), ..]);
        dst += &row;
    }
    g.slice(s![.., .., ..h, ..w]).to_owned()
}

fn analyse_even(x: &FeatureTensor) -> (FeatureTensor, FeatureTensor, FeatureTensor, FeatureTensor) {
    let (b, c, h, w) = x.dim();
    let shape = (b, c, h / 2, w / 2);
    let (mut ll, mut lh, mut hl, mut hh) =
        (Array4::zeros(shape), Array4::zeros(shape), Array4::zeros(shape), Array4::zeros(shape));
    let a = x.slice(s![.., .., 0..;2, 0..;2]);
    let bb = x.slice(s![.., .., 0..;2, 1..;2]);
    let cc = x.slice(s![.., .., 1..;2, 0..;2]);
    let d = x.slice(s![.., .., 1..;2, 1..;2]);
    Zip::from(&mut ll)
        .and(&mut lh)
        .and(&mut hl)
        .and(&mut hh)
        .and(&a)
        .and(&bb)
        .for_each(|ll, lh, hl, hh, &a, &b| {
            *ll = a + b;
            *lh = a - b;
            *hl = a + b;
            *hh = a - b;
        });
    Zip::from(&mut ll)
        .and(&mut lh)
        .and(&mut hl)
        .and(&mut hh)
        .and(&cc)
        .and(&d)
        .for_each(|ll, lh, hl, hh, &c, &d| {
            *ll = 0.5 * (*ll + c + d);
            *lh = 0.5 * (*lh + c - d);
            *hl = 0.5 * (*hl - c - d);
            *hh = 0.5 * (*hh - c + d);
        });
    (ll, lh, hl, hh)
}

fn synthesise_even(sb: &Subbands) -> FeatureTensor {
    let (b, c, h, w) = sb.ll.dim();
    let mut out = Array4::zeros((b, c, 2 * h, 2 * w));
    let blocks = [(0, 0, 1.0, 1.0, 1.0), (0, 1, -1.0, 1.0, -1.0), (1, 0, 1.0, -1.0, -1.0), (1, 1, -1.0, -1.0, 1.0)];
    for (di, dj, slh, shl, shh) in blocks {
        let mut dst = out.slice_mut(s![.., .., di..;2, dj..;2]);
        Zip::from(&mut dst)
            .and(&sb.ll)
            .and(&sb.lh)
            .and(&sb.hl)
            .and(&sb.hh)
            .for_each(|o, &ll, &lh, &hl, &hh| *o = 0.5 * (ll + slh * lh + shl * hl + shh * hh));
    }
    out
}

/// One level of 2-D Haar analysis.
pub fn haar_dwt2(x: &FeatureTensor) -> Subbands {
    let (_, _, h, w) = x.dim();
    let (ll, lh, hl, hh) = analyse_even(&reflect_pad_even(x));
    Subbands {
        ll,
        lh,
        hl,
        hh,
        orig: (h, w),
    }
}

/// Exact inverse of [`haar_dwt2`], cropping any analysis padding.
pub fn haar_idwt2(sb: &Subbands) -> Result<FeatureTensor> {
    let dim = sb.ll.dim();
    if sb.lh.dim() != dim || sb.hl.dim() != dim || sb.hh.dim() != dim {
        return Err(Error::ShapeMismatch(format!(
            "subbands {:?} {:?} {:?} {:?}",
            dim,
            sb.lh.dim(),
            sb.hl.dim(),
            sb.hh.dim()
        )));
    }
    let (h, w) = sb.orig;
    if h.div_ceil(2) != dim.2 || w.div_ceil(2) != dim.3 {
        return Err(Error::ShapeMismatch(format!(
            "subbands of {}x{} cannot rebuild a {h}x{w} plane",
            dim.2, dim.3
        )));
    }
    Ok(synthesise_even(sb).slice(s![.., .., ..h, ..w]).to_owned())
}

/// Gradient of a loss through [`haar_dwt2`]: subband gradients to input gradient.
pub(crate) fn haar_dwt2_backward(g: &Subbands) -> FeatureTensor {
    let (_, _, h, w) = g.ll.dim();
    // Analysis is orthonormal, so its adjoint is synthesis on the padded grid.
    let full = synthesise_even(&Subbands {
        orig: (2 * h, 2 * w),
        ..g.clone()
    });
    reflect_pad_adjoint(&full, g.orig)
}

/// Gradient through [`haar_idwt2`]: output gradient to subband gradients.
pub(crate) fn haar_idwt2_backward(g: &FeatureTensor, like: &Subbands) -> Subbands {
    let (b, c, h, w) = like.ll.dim();
    let mut padded = Array4::zeros((b, c, 2 * h, 2 * w));
    let (oh, ow) = like.orig;
    padded.slice_mut(s![.., .., ..oh, ..ow]).assign(g);
    let (ll, lh, hl, hh) = analyse_even(&padded);
    Subbands {
        ll,
        lh,
        hl,
        hh,
        orig: like.orig,
    }
}
