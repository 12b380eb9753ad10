//! Central finite-difference verification of the hand-written backward passes.
//!
//! Each block is reduced to a scalar probe `L(theta)` over the flattened input
//! and parameters. The analytic gradient is compared coordinate-wise with
//! `(L(theta + h e_i) - L(theta - h e_i)) / 2h`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, Array4};
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::loss::{l_total, l_total_grad, LossWeights};
use crate::net::{cirm_tail_backward, cirm_tail_forward, DepthwiseConv2d, Linear, Mca, MaskHead, WtConv};
use crate::spatial::{si_snr, si_snr_with_grad};

pub const FD_STEP: f64 = 1e-4;
/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Tighter threshold for blocks that are linear in every coordinate.
pub const LINEAR_TOLERANCE: f64 = 1e-6;
pub const MIN_COORDINATES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradBlock {
    WtConv,
    Mca,
    /// Mask head followed by complex mask application.
    CirmTail,
    SiSnr,
    /// Plain depthwise convolution; linear, so held to the tight threshold.
    Depthwise,
    /// `l_total` with respect to the log-sigmas, both formula variants.
    LossSigma,
}

impl GradBlock {
    pub const ALL: [GradBlock; 6] = [
        GradBlock::WtConv,
        GradBlock::Mca,
        GradBlock::CirmTail,
        GradBlock::SiSnr,
        GradBlock::Depthwise,
        GradBlock::LossSigma,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GradBlock::WtConv => "wtconv",
            GradBlock::Mca => "mca",
            GradBlock::CirmTail => "cirm-tail",
            GradBlock::SiSnr => "si-snr",
            GradBlock::Depthwise => "depthwise",
            GradBlock::LossSigma => "loss-sigma",
        }
    }

    /// Shape used when none is given. For `cirm-tail` it reads
    /// `(mics, bins, frames, hidden)`; for `si-snr` only the last entry counts.
    pub fn default_shape(self) -> (usize, usize, usize, usize) {
        match self {
            GradBlock::WtConv => (1, 4, 16, 16),
            GradBlock::Mca => (1, 8, 10, 12),
            GradBlock::CirmTail => (2, 6, 5, 8),
            GradBlock::SiSnr => (1, 1, 1, 512),
            GradBlock::Depthwise => (1, 3, 9, 11),
            GradBlock::LossSigma => (1, 1, 1, 2),
        }
    }

    pub fn tolerance(self) -> f64 {
        match self {
            GradBlock::Depthwise => LINEAR_TOLERANCE,
            _ => TOLERANCE,
        }
    }
}

impl fmt::Display for GradBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GradBlock {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradBlock::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown gradcheck block {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub block: GradBlock,
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Label of the coordinate with the largest error.
    pub worst: String,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Flattened problem: named segments of `theta`, the probe, and its gradient.
struct Problem<'a> {
    segments: Vec<(String, usize)>,
    theta: Vec<f64>,
    grad: Vec<f64>,
    probe: Box<dyn Fn(&[f64]) -> Result<f64> + 'a>,
}

impl Problem<'_> {
    fn label(&self, mut i: usize) -> String {
        for (name, len) in &self.segments {
            if i < *len {
                return format!("{name}[{i}]");
            }
            i -= len;
        }
        format!("theta[{i}]")
    }

    /// Up to `per_segment` random coordinates from each segment, topped up to
    /// `MIN_COORDINATES` (or everything, if smaller).
    fn coordinates(&self, rng: &mut ChaCha8Rng, per_segment: usize) -> Vec<usize> {
        let mut picked = Vec::new();
        let mut off = 0;
        for (_, len) in &self.segments {
            let take = (*len).min(per_segment);
            picked.extend(sample(rng, *len, take).into_iter().map(|i| off + i));
            off += len;
        }
        let total = self.theta.len();
        let want = MIN_COORDINATES.min(total);
        if picked.len() < want {
            let mut chosen = vec![false; total];
            picked.iter().for_each(|&i| chosen[i] = true);
            let rest: Vec<usize> = (0..total).filter(|&i| !chosen[i]).collect();
            let extra = sample(rng, rest.len(), want - picked.len());
            picked.extend(extra.into_iter().map(|k| rest[k]));
        }
        picked.sort_unstable();
        picked
    }

    fn run(&self, block: GradBlock, seed: u64) -> Result<GradCheckReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        let mut worst = (0.0, String::from("-"));
        let coords = self.coordinates(&mut rng, 40);
        let mut theta = self.theta.clone();
        for &i in &coords {
            let a = self.grad[i];
            if !a.is_finite() {
                return Err(Error::GradientCheck(format!("{block}: non-finite analytic gradient at {}", self.label(i))));
            }
            let orig = theta[i];
            theta[i] = orig + FD_STEP;
            let up = (self.probe)(&theta)?;
            theta[i] = orig - FD_STEP;
            let down = (self.probe)(&theta)?;
            theta[i] = orig;
            let n = (up - down) / (2.0 * FD_STEP);
            if !n.is_finite() {
                return Err(Error::GradientCheck(format!("{block}: non-finite difference at {}", self.label(i))));
            }
            let e = rel_error(a, n);
            if e > worst.0 {
                worst = (e, self.label(i));
            }
        }
        let tolerance = block.tolerance();
        Ok(GradCheckReport {
            block,
            max_rel_error: worst.0,
            coordinates: coords.len(),
            worst: worst.1,
            tolerance,
            passed: worst.0 < tolerance,
        })
    }
}

fn random4(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Array4<f64> {
    Array4::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Collects `(name, values)` of every tensor a visitor reports.
fn flatten(visit: impl FnOnce(&mut dyn FnMut(&str, &[usize], &[f64], bool))) -> (Vec<(String, usize)>, Vec<f64>) {
    let mut segs = Vec::new();
    let mut vals = Vec::new();
    visit(&mut |name, _, data, _| {
        segs.push((name.to_string(), data.len()));
        vals.extend_from_slice(data);
    });
    (segs, vals)
}

/// Writes `vals` back through a mutable visitor, in visit order.
fn scatter(vals: &[f64], visit: impl FnOnce(&mut dyn FnMut(&str, &[usize], &mut [f64], bool))) {
    let mut off = 0;
    visit(&mut |_, _, data, _| {
        data.copy_from_slice(&vals[off..off + data.len()]);
        off += data.len();
    });
}

fn wtconv_problem(shape: (usize, usize, usize, usize), seed: u64) -> Result<Problem<'static>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = 2;
    let mut conv = WtConv::new(shape.1, 5, levels, &mut rng);
    // Move the gains off their initial values so every path is exercised.
    for g in conv.wavelet_scales.iter_mut().chain([&mut conv.base_scale]) {
        g.mapv_inplace(|_| rng.gen_range(0.3..1.2));
    }
    conv.check_extent("wtconv", shape.2, shape.3)?;
    let x = random4(&mut rng, shape);
    let probe_w = random4(&mut rng, shape);
    let (_, cache) = conv.forward_cached(&x)?;
    let grads = conv.backward(&cache, &probe_w);

    let (psegs, pvals) = flatten(|s| conv.visit("wtconv", s));
    let mut segments = vec![("input".to_string(), x.len())];
    segments.extend(psegs);
    let mut theta = x.iter().copied().collect::<Vec<_>>();
    theta.extend(pvals);
    let mut grad: Vec<f64> = grads.input.iter().copied().collect();
    grad.extend(grads.base.weight.iter());
    grad.extend(grads.base.bias.as_ref().expect("base bias").iter());
    grad.extend(grads.base_scale.iter());
    for (dc, dg) in grads.level_convs.iter().zip(&grads.wavelet_scales) {
        grad.extend(dc.weight.iter());
        grad.extend(dg.iter());
    }
    let n_in = x.len();
    let probe = Box::new(move |t: &[f64]| -> Result<f64> {
        let mut c = conv.clone();
        scatter(&t[n_in..], |s| c.visit_mut("wtconv", s));
        let xi = Array4::from_shape_vec(shape, t[..n_in].to_vec()).expect("shape");
        let out = c.forward(&xi)?;
        Ok(dot(out.as_slice().expect("contiguous"), probe_w.as_slice().expect("contiguous")))
    });
    Ok(Problem { segments, theta, grad, probe })
}

fn mca_problem(shape: (usize, usize, usize, usize), seed: u64) -> Result<Problem<'static>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mca = Mca::new(shape.1, shape.2, shape.3, &mut rng);
    let x = random4(&mut rng, shape);
    let probe_w = random4(&mut rng, shape);
    let (_, cache) = mca.forward_cached(&x);
    let grads = mca.backward(&cache, &probe_w);
    let (psegs, pvals) = flatten(|s| mca.visit("mca", s));
    let mut segments = vec![("input".to_string(), x.len())];
    segments.extend(psegs);
    let mut theta: Vec<f64> = x.iter().copied().collect();
    theta.extend(pvals);
    let mut grad: Vec<f64> = grads.input.iter().copied().collect();
    for (w, b) in &grads.branches {
        grad.extend(w.iter());
        grad.extend(b.iter());
    }
    let n_in = x.len();
    let probe = Box::new(move |t: &[f64]| -> Result<f64> {
        let mut m = mca.clone();
        scatter(&t[n_in..], |s| m.visit_mut("mca", s));
        let xi = Array4::from_shape_vec(shape, t[..n_in].to_vec()).expect("shape");
        let out = m.forward(&xi);
        Ok(dot(out.as_slice().expect("contiguous"), probe_w.as_slice().expect("contiguous")))
    });
    Ok(Problem { segments, theta, grad, probe })
}

fn cirm_problem((m, f, t, h): (usize, usize, usize, usize), seed: u64) -> Result<Problem<'static>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head = MaskHead {
        linear: Linear::new(h, 2 * m, &mut rng),
        compression: None,
    };
    let hidden = Array3::from_shape_simple_fn((f, t, h), || rng.gen_range(-1.0..1.0));
    let cplx = |rng: &mut ChaCha8Rng| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let noisy = Array3::from_shape_simple_fn((m, f, t), || cplx(&mut rng));
    let probe_w = Array3::from_shape_simple_fn((m, f, t), || cplx(&mut rng));
    let grads = cirm_tail_backward(&head, &hidden, &noisy, &probe_w);

    let n_h = hidden.len();
    let n_w = head.linear.weight.len();
    let n_b = head.linear.bias.len();
    let n_y = noisy.len();
    let segments = vec![
        ("hidden".to_string(), n_h),
        ("head.weight".to_string(), n_w),
        ("head.bias".to_string(), n_b),
        ("noisy.re".to_string(), n_y),
        ("noisy.im".to_string(), n_y),
    ];
    let mut theta: Vec<f64> = hidden.iter().copied().collect();
    theta.extend(head.linear.weight.iter());
    theta.extend(head.linear.bias.iter());
    theta.extend(noisy.iter().map(|v| v.re));
    theta.extend(noisy.iter().map(|v| v.im));
    let mut grad: Vec<f64> = grads.hidden.iter().copied().collect();
    grad.extend(grads.weight.iter());
    grad.extend(grads.bias.iter());
    grad.extend(grads.noisy.iter().map(|v| v.re));
    grad.extend(grads.noisy.iter().map(|v| v.im));
    let probe = Box::new(move |th: &[f64]| -> Result<f64> {
        let mut off = 0;
        let mut take = |n: usize| {
            let s = &th[off..off + n];
            off += n;
            s.to_vec()
        };
        let hid = Array3::from_shape_vec((f, t, h), take(n_h)).expect("shape");
        let head = MaskHead {
            linear: Linear {
                weight: Array2::from_shape_vec((2 * m, h), take(n_w)).expect("shape"),
                bias: take(n_b).into(),
            },
            compression: head.compression,
        };
        let re = take(n_y);
        let im = take(n_y);
        let y = Array3::from_shape_vec((m, f, t), re.iter().zip(&im).map(|(&a, &b)| Complex64::new(a, b)).collect()).expect("shape");
        let out = cirm_tail_forward(&head, &hid, &y)?;
        Ok(out.iter().zip(probe_w.iter()).map(|(o, w)| o.re * w.re + o.im * w.im).sum())
    });
    Ok(Problem { segments, theta, grad, probe })
}

fn si_snr_problem(len: usize, seed: u64) -> Result<Problem<'static>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let est: Vec<f64> = reference.iter().map(|r| 0.7 * r + 0.4 * rng.gen_range(-1.0..1.0)).collect();
    let (_, grad) = si_snr_with_grad(&est, &reference)?;
    let probe = Box::new(move |t: &[f64]| si_snr(t, &reference));
    Ok(Problem {
        segments: vec![("estimate".to_string(), len)],
        theta: est,
        grad,
        probe,
    })
}

fn depthwise_problem(shape: (usize, usize, usize, usize), seed: u64) -> Result<Problem<'static>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv = DepthwiseConv2d::new(shape.1, 5, true, &mut rng);
    let x = random4(&mut rng, shape);
    let probe_w = random4(&mut rng, shape);
    let (dx, dp) = conv.backward(&x, &probe_w);
    let (psegs, pvals) = flatten(|s| conv.visit("depthwise", s));
    let mut segments = vec![("input".to_string(), x.len())];
    segments.extend(psegs);
    let mut theta: Vec<f64> = x.iter().copied().collect();
    theta.extend(pvals);
    let mut grad: Vec<f64> = dx.iter().copied().collect();
    grad.extend(dp.weight.iter());
    grad.extend(dp.bias.as_ref().expect("bias").iter());
    let n_in = x.len();
    let probe = Box::new(move |t: &[f64]| -> Result<f64> {
        let mut c = conv.clone();
        scatter(&t[n_in..], |s| c.visit_mut("depthwise", s));
        let xi = Array4::from_shape_vec(shape, t[..n_in].to_vec()).expect("shape");
        let out = c.forward(&xi);
        Ok(dot(out.as_slice().expect("contiguous"), probe_w.as_slice().expect("contiguous")))
    });
    Ok(Problem { segments, theta, grad, probe })
}

fn loss_sigma_report(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0, String::from("-"));
    let mut count = 0;
    for literal in [false, true] {
        let lns = rng.gen_range(-15.0..5.0);
        let lps = rng.gen_range(0.01..2.0);
        let w = LossWeights {
            log_sigma1: rng.gen_range(-1.0..1.0),
            log_sigma2: rng.gen_range(-1.0..1.0),
            shared_sigma: literal,
        };
        let g = l_total_grad(lns, lps, &w);
        for k in 0..2 {
            let shift = |d: f64| {
                let mut v = w;
                if k == 0 {
                    v.log_sigma1 += d;
                } else {
                    v.log_sigma2 += d;
                }
                l_total(lns, lps, &v)
            };
            let n = (shift(FD_STEP) - shift(-FD_STEP)) / (2.0 * FD_STEP);
            let e = rel_error(g[k], n);
            count += 1;
            if e > worst.0 {
                worst = (e, format!("{}log_sigma{}", if literal { "literal." } else { "" }, k + 1));
            }
        }
    }
    Ok(GradCheckReport {
        block: GradBlock::LossSigma,
        max_rel_error: worst.0,
        coordinates: count,
        worst: worst.1,
        tolerance: TOLERANCE,
        passed: worst.0 < TOLERANCE,
    })
}

/// Runs one block. `shape` defaults to [`GradBlock::default_shape`].
pub fn grad_check(block: GradBlock, shape: Option<(usize, usize, usize, usize)>, seed: u64) -> Result<GradCheckReport> {
    let shape = shape.unwrap_or_else(|| block.default_shape());
    if [shape.0, shape.1, shape.2, shape.3].contains(&0) {
        return Err(Error::InvalidConfig(format!("gradcheck shape {shape:?} has an empty axis")));
    }
    let problem = match block {
        GradBlock::WtConv => wtconv_problem(shape, seed)?,
        GradBlock::Mca => mca_problem(shape, seed)?,
        GradBlock::CirmTail => cirm_problem(shape, seed)?,
        GradBlock::SiSnr => si_snr_problem(shape.3, seed)?,
        GradBlock::Depthwise => depthwise_problem(shape, seed)?,
        GradBlock::LossSigma => return loss_sigma_report(seed),
    };
    problem.run(block, seed)
}

/// Every registered block at its default shape.
pub fn grad_check_all(seed: u64) -> Result<Vec<GradCheckReport>> {
    GradBlock::ALL.iter().map(|&b| grad_check(b, None, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for b in GradBlock::ALL {
            assert_eq!(b.as_str().parse::<GradBlock>().unwrap(), b);
        }
        assert!("conv".parse::<GradBlock>().is_err());
    }

    #[test]
    fn every_block_passes_at_default_shape() {
        for r in grad_check_all(0).unwrap() {
            assert!(r.passed, "{r:?}");
            let expected = if r.block == GradBlock::LossSigma { 4 } else { MIN_COORDINATES };
            assert!(r.coordinates >= expected, "{r:?}");
        }
    }

    #[test]
    fn depthwise_is_exact_to_rounding() {
        let r = grad_check(GradBlock::Depthwise, None, 3).unwrap();
        assert!(r.max_rel_error < LINEAR_TOLERANCE, "{r:?}");
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let mut p = si_snr_problem(64, 1).unwrap();
        p.grad[5] *= 1.01;
        let r = p.run(GradBlock::SiSnr, 1).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst, "estimate[5]");
    }
}
