use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::signal::Spectrogram;

/// Per-frequency spatial covariance matrices `[F][M x M]`.
#[derive(Debug, Clone)]
pub struct CovarianceSet {
    pub matrices: Vec<CMatrix>,
    pub frame_count: usize,
    /// Bins whose mask summed to zero and fell back to the unmasked average.
    pub fallback_bins: Vec<usize>,
}

impl CovarianceSet {
    pub fn num_bins(&self) -> usize {
        self.matrices.len()
    }

    pub fn num_mics(&self) -> usize {
        self.matrices.first().map_or(0, |r| r.nrows())
    }
}

fn accumulate(spec: &Spectrogram, f: usize, weight: impl Fn(usize) -> f64) -> (CMatrix, f64) {
    let m = spec.num_channels();
    let mut r = CMatrix::zeros((m, m));
    let mut total = 0.0;
    for t in 0..spec.num_frames() {
        let w = weight(t);
        if w == 0.0 {
            continue;
        }
        total += w;
        for i in 0..m {
            let yi = spec.bins[[i, f, t]] * w;
            for j in i..m {
                r[[i, j]] += yi * spec.bins[[j, f, t]].conj();
            }
        }
    }
    for i in 0..m {
        r[[i, i]].im = 0.0;
        for j in 0..i {
            r[[i, j]] = r[[j, i]].conj();
        }
    }
    (r, total)
}

/// `R_f = sum_t m_ft y_ft y_ft^H / sum_t m_ft`, exactly Hermitian.
/// Without a mask every frame has weight 1.
pub fn estimate_covariance(spec: &Spectrogram, mask: Option<&Array2<f64>>) -> Result<CovarianceSet> {
    let (_, bins, frames) = spec.shape();
    if let Some(mask) = mask {
        if mask.dim() != (bins, frames) {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} for a spectrogram with {bins} bins and {frames} frames",
                mask.dim()
            )));
        }
        if let Some(v) = mask.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidConfig(format!("mask value {v} outside [0, 1]")));
        }
    }
    let mut matrices = Vec::with_capacity(bins);
    let mut fallback_bins = Vec::new();
    for f in 0..bins {
        let (mut r, mut total) = match mask {
            Some(mask) => accumulate(spec, f, |t| mask[[f, t]]),
            None => accumulate(spec, f, |_| 1.0),
        };
        if total == 0.0 {
            fallback_bins.push(f);
            (r, total) = accumulate(spec, f, |_| 1.0);
        }
        r.mapv_inplace(|z| z / total);
        matrices.push(r);
    }
    Ok(CovarianceSet {
        matrices,
        frame_count: frames,
        fallback_bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::StftParams;
    use ndarray::Array3;
    use num_complex::Complex64;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_spec(m: usize, bins: usize, frames: usize, seed: u64) -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let data = Array3::from_shape_simple_fn((m, bins, frames), || {
            Complex64::new(rng.sample::<f64, _>(StandardNormal) * s, rng.sample::<f64, _>(StandardNormal) * s)
        });
        // Shape checks only need consistent framing; reuse 320/160 framing.
        let params = StftParams::default();
        let len = (frames - 1) * params.hop;
        let mut full = Array3::zeros((m, params.num_bins(), frames));
        full.slice_mut(ndarray::s![.., ..bins, ..]).assign(&data);
        Spectrogram::new(full, params, len).unwrap()
    }

    #[test]
    fn single_frame_gives_outer_product() {
        let spec = random_spec(4, 3, 1, 1);
        let cov = estimate_covariance(&spec, None).unwrap();
        let r = &cov.matrices[2];
        for i in 0..4 {
            for j in 0..4 {
                let expect = spec.bins[[i, 2, 0]] * spec.bins[[j, 2, 0]].conj();
                assert!((r[[i, j]] - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn white_noise_covariance_tends_to_identity() {
        let frames = 4000;
        let spec = random_spec(4, 2, frames, 2);
        let cov = estimate_covariance(&spec, None).unwrap();
        let tol = 5.0 / (frames as f64).sqrt();
        for r in &cov.matrices[..2] {
            for i in 0..4 {
                for j in 0..4 {
                    let target = if i == j { 1.0 } else { 0.0 };
                    assert!((r[[i, j]] - target).norm() < tol, "{}", r[[i, j]]);
                }
            }
        }
    }

    #[test]
    fn constant_mask_cancels_and_matrices_are_hermitian() {
        let spec = random_spec(3, 161, 20, 3);
        let plain = estimate_covariance(&spec, None).unwrap();
        let half = Array2::from_elem((161, 20), 0.5);
        let masked = estimate_covariance(&spec, Some(&half)).unwrap();
        for (a, b) in plain.matrices.iter().zip(&masked.matrices) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).norm() < 1e-12));
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(a[[i, j]], a[[j, i]].conj());
                }
            }
        }
    }

    #[test]
    fn zero_mask_falls_back_and_flags() {
        let spec = random_spec(3, 161, 10, 4);
        let mut mask = Array2::from_elem((161, 10), 1.0);
        mask.row_mut(7).fill(0.0);
        let cov = estimate_covariance(&spec, Some(&mask)).unwrap();
        assert_eq!(cov.fallback_bins, vec![7]);
        let bad = Array2::from_elem((161, 10), 1.5);
        assert!(estimate_covariance(&spec, Some(&bad)).is_err());
    }
}
