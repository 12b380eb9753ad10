//! Training objectives: negative SI-SNR over channels, MUSIC spectrum MSE,
//! and the uncertainty-weighted combination of the two.

use std::io::Write;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::signal::MultichannelWaveform;
use crate::spatial::{music_spectrum, si_snr, si_snr_with_grad, spatial_mse, MusicConfig};

/// Weight of the noise-suppression task relative to the spatial task.
pub const NS_WEIGHT: f64 = 10.0;

/// Learnable task uncertainties, kept as logs so both stay positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossWeights {
    pub log_sigma1: f64,
    pub log_sigma2: f64,
    /// Use sigma1 under both loss terms, as the combined formula is printed.
    pub shared_sigma: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            log_sigma1: 0.0,
            log_sigma2: 0.0,
            shared_sigma: false,
        }
    }
}

impl LossWeights {
    pub fn from_sigmas(sigma1: f64, sigma2: f64, shared_sigma: bool) -> Result<Self> {
        if !(sigma1 > 0.0 && sigma2 > 0.0 && sigma1.is_finite() && sigma2.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigmas must be positive, got {sigma1}, {sigma2}")));
        }
        Ok(Self {
            log_sigma1: sigma1.ln(),
            log_sigma2: sigma2.ln(),
            shared_sigma,
        })
    }

    pub fn sigma1(&self) -> f64 {
        self.log_sigma1.exp()
    }

    pub fn sigma2(&self) -> f64 {
        self.log_sigma2.exp()
    }
}

fn check_pair(a: &MultichannelWaveform, b: &MultichannelWaveform) -> Result<()> {
    if a.samples().dim() != b.samples().dim() {
        return Err(Error::ShapeMismatch(format!(
            "waveforms {:?} vs {:?}",
            a.samples().dim(),
            b.samples().dim()
        )));
    }
    Ok(())
}

/// Negative mean SI-SNR over channels.
pub fn l_ns(enhanced: &MultichannelWaveform, target: &MultichannelWaveform) -> Result<f64> {
    check_pair(enhanced, target)?;
    let m = enhanced.num_channels();
    let mut total = 0.0;
    for c in 0..m {
        let e = enhanced.channel(c).to_vec();
        let t = target.channel(c).to_vec();
        total += si_snr(&e, &t).map_err(|err| match err {
            Error::Silent(_) => Error::Silent(format!("target channel {c} has zero energy")),
            other => other,
        })?;
    }
    Ok(-total / m as f64)
}

/// [`l_ns`] and its gradient with respect to the enhanced samples.
pub fn l_ns_with_grad(enhanced: &MultichannelWaveform, target: &MultichannelWaveform) -> Result<(f64, Array2<f64>)> {
    check_pair(enhanced, target)?;
    let (m, n) = enhanced.samples().dim();
    let mut grad = Array2::zeros((m, n));
    let mut total = 0.0;
    for c in 0..m {
        let (v, g) = si_snr_with_grad(&enhanced.channel(c).to_vec(), &target.channel(c).to_vec())?;
        total += v;
        for (dst, gv) in grad.row_mut(c).iter_mut().zip(g) {
            *dst = -gv / m as f64;
        }
    }
    Ok((-total / m as f64, grad))
}

/// MSE between the MUSIC spectra of the two signals.
pub fn l_ps(enhanced: &MultichannelWaveform, reference: &MultichannelWaveform, config: &MusicConfig) -> Result<f64> {
    check_pair(enhanced, reference)?;
    spatial_mse(&music_spectrum(enhanced, config)?, &music_spectrum(reference, config)?)
}

fn coefficients(w: &LossWeights) -> (f64, f64) {
    let inv1 = (-2.0 * w.log_sigma1).exp();
    let inv2 = if w.shared_sigma { inv1 } else { (-2.0 * w.log_sigma2).exp() };
    (NS_WEIGHT / 2.0 * inv1, 0.5 * inv2)
}

/// `(10 / 2 s1^2) L_ns + (1 / 2 s2^2) L_ps + log(s1 s2)`, with `s2` replaced
/// by `s1` in the second denominator under `shared_sigma`.
pub fn l_total(lns: f64, lps: f64, w: &LossWeights) -> f64 {
    let (a, b) = coefficients(w);
    a * lns + b * lps + w.log_sigma1 + w.log_sigma2
}

/// Partial derivatives of [`l_total`] with respect to `(log s1, log s2)`.
pub fn l_total_grad(lns: f64, lps: f64, w: &LossWeights) -> [f64; 2] {
    let (a, b) = coefficients(w);
    if w.shared_sigma {
        [-2.0 * (a * lns + b * lps) + 1.0, 1.0]
    } else {
        [-2.0 * a * lns + 1.0, -2.0 * b * lps + 1.0]
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: u64,
    pub l_ns: f64,
    pub l_ps: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub l_total: f64,
}

impl LossRecord {
    pub fn new(step: u64, lns: f64, lps: f64, w: &LossWeights) -> Self {
        Self {
            step,
            l_ns: lns,
            l_ps: lps,
            sigma1: w.sigma1(),
            sigma2: w.sigma2(),
            l_total: l_total(lns, lps, w),
        }
    }
}

pub const LOSS_CSV_HEADER: &str = "step,l_ns,l_ps,sigma1,sigma2,l_total";

/// Header plus one line per record.
pub fn write_loss_csv(mut out: impl Write, records: &[LossRecord]) -> std::io::Result<()> {
    writeln!(out, "{LOSS_CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{},{},{},{},{},{}", r.step, r.l_ns, r.l_ps, r.sigma1, r.sigma2, r.l_total)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn wave(m: usize, n: usize, seed: u64) -> MultichannelWaveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MultichannelWaveform::new(Array2::from_shape_simple_fn((m, n), || rng.gen_range(-1.0..1.0)), 16_000).unwrap()
    }

    #[test]
    fn combined_loss_worked_values() {
        let unit = LossWeights::default();
        assert_eq!(l_total(2.0, 4.0, &unit), 12.0);
        assert_eq!(l_total(0.0, 0.0, &unit), 0.0);
        let literal = LossWeights::from_sigmas(1.0, std::f64::consts::E, true).unwrap();
        assert!((l_total(0.0, 0.0, &literal) - 1.0).abs() < 1e-15);
        // Literal form ignores sigma2 in the spatial term.
        let lit = LossWeights::from_sigmas(1.0, 3.0, true).unwrap();
        assert!((l_total(0.0, 4.0, &lit) - (2.0 + 3.0f64.ln())).abs() < 1e-12);
        let std = LossWeights { shared_sigma: false, ..lit };
        assert!((l_total(0.0, 4.0, &std) - (4.0 / 18.0 + 3.0f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn equal_sigmas_weigh_tasks_ten_to_one() {
        for s in [0.3, 1.0, 2.5] {
            let w = LossWeights::from_sigmas(s, s, false).unwrap();
            let a = l_total(1.0, 0.0, &w) - l_total(0.0, 0.0, &w);
            let b = l_total(0.0, 1.0, &w) - l_total(0.0, 0.0, &w);
            assert!((a / b - 10.0).abs() < 1e-12);
        }
        assert!(LossWeights::from_sigmas(0.0, 1.0, false).is_err());
    }

    #[test]
    fn sigma_gradients_match_central_differences() {
        let h = 1e-5;
        for literal in [false, true] {
            for (lns, lps, s1, s2) in [(2.0, 4.0, 0.0, 0.0), (-3.0, 0.7, 0.4, -1.2), (0.1, 9.0, -2.0, 1.5)] {
                let w = LossWeights {
                    log_sigma1: s1,
                    log_sigma2: s2,
                    shared_sigma: literal,
                };
                let g = l_total_grad(lns, lps, &w);
                for (k, gk) in g.iter().enumerate() {
                    let (mut up, mut down) = (w, w);
                    if k == 0 {
                        up.log_sigma1 += h;
                        down.log_sigma1 -= h;
                    } else {
                        up.log_sigma2 += h;
                        down.log_sigma2 -= h;
                    }
                    let fd = (l_total(lns, lps, &up) - l_total(lns, lps, &down)) / (2.0 * h);
                    assert!((fd - gk).abs() < 1e-8 * gk.abs().max(1.0), "{literal} {k}: {fd} vs {gk}");
                }
            }
        }
    }

    #[test]
    fn sigma_scan_has_an_interior_minimum() {
        let (lns, lps) = (0.8, 2.0);
        let grid: Vec<f64> = (0..=600).map(|i| -3.0 + i as f64 * 0.01).collect();
        for k in 0..2 {
            let vals: Vec<f64> = grid
                .iter()
                .map(|&s| {
                    let w = if k == 0 {
                        LossWeights { log_sigma1: s, ..LossWeights::default() }
                    } else {
                        LossWeights { log_sigma2: s, ..LossWeights::default() }
                    };
                    l_total(lns, lps, &w)
                })
                .collect();
            let best = vals.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert!(best > 0 && best < grid.len() - 1);
            assert!(vals[0] > vals[best] && vals[grid.len() - 1] > vals[best]);
        }
    }

    #[test]
    fn identical_signals_give_epsilon_capped_loss() {
        let t = wave(3, 2000, 1);
        assert!(l_ns(&t, &t).unwrap() <= -80.0);
        let mut z = t.samples().clone();
        z.row_mut(1).fill(0.0);
        let silent = MultichannelWaveform::new(z, 16_000).unwrap();
        assert!(matches!(l_ns(&t, &silent), Err(Error::Silent(_))));
    }

    #[test]
    fn ns_gradient_matches_finite_differences() {
        let t = wave(2, 64, 2);
        let e = MultichannelWaveform::new(t.samples() * 0.8 + wave(2, 64, 3).samples() * 0.3, 16_000).unwrap();
        let (_, g) = l_ns_with_grad(&e, &t).unwrap();
        let h = 1e-6;
        for (c, i) in [(0, 3), (1, 40), (1, 63)] {
            let mut up = e.samples().clone();
            up[[c, i]] += h;
            let mut down = e.samples().clone();
            down[[c, i]] -= h;
            let fd = (l_ns(&MultichannelWaveform::new(up, 16_000).unwrap(), &t).unwrap()
                - l_ns(&MultichannelWaveform::new(down, 16_000).unwrap(), &t).unwrap())
                / (2.0 * h);
            assert!((fd - g[[c, i]]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn loss_csv_has_header_and_rows() {
        let mut buf = Vec::new();
        write_loss_csv(&mut buf, &[LossRecord::new(0, 2.0, 4.0, &LossWeights::default())]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "step,l_ns,l_ps,sigma1,sigma2,l_total\n0,2,4,1,1,12\n");
    }
}
