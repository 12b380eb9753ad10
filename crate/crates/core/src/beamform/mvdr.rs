use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{estimate_covariance, ula_steering, CovarianceSet};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, inner, power_iteration, CMatrix, CVector};
use crate::scene::ArrayGeometry;
use crate::signal::{Spectrogram, SAMPLE_RATE};

pub const DIAGONAL_LOADING: f64 = 1e-6;
pub const REFERENCE_MIC: usize = 0;
const POWER_ITERATIONS: usize = 50;
const POWER_TOL: f64 = 1e-10;

/// Filter-and-sum weights `[F, M]`.
#[derive(Debug, Clone)]
pub struct BeamformerWeights {
    pub weights: Array2<Complex64>,
    pub reference_mic: usize,
}

/// Steering matrix `[F, M]` for a far-field source at `theta_deg`.
pub fn geometric_steering(geometry: &ArrayGeometry, theta_deg: f64, num_bins: usize, fft_size: usize) -> Array2<Complex64> {
    let df = f64::from(SAMPLE_RATE) / fft_size as f64;
    let mut out = Array2::zeros((num_bins, geometry.num_mics));
    for f in 0..num_bins {
        out.row_mut(f)
            .assign(&ula_steering(geometry.num_mics, geometry.spacing, theta_deg, f as f64 * df));
    }
    out
}

fn loaded(r: &CMatrix) -> CMatrix {
    let m = r.nrows();
    let trace: f64 = (0..m).map(|i| r[[i, i]].re).sum();
    let mut out = r.clone();
    let load = DIAGONAL_LOADING * trace / m as f64;
    for i in 0..m {
        out[[i, i]] += load;
    }
    out
}

/// `w_f = R_f^-1 a_f / (a_f^H R_f^-1 a_f)` with diagonal loading.
pub fn mvdr_weights(noise_cov: &CovarianceSet, steer: &Array2<Complex64>) -> Result<BeamformerWeights> {
    let (bins, m) = steer.dim();
    if bins != noise_cov.num_bins() || m != noise_cov.num_mics() {
        return Err(Error::ShapeMismatch(format!(
            "steering {bins}x{m} against {} covariances of size {}",
            noise_cov.num_bins(),
            noise_cov.num_mics()
        )));
    }
    let mut weights = Array2::zeros((bins, m));
    for f in 0..bins {
        let l = cholesky(&loaded(&noise_cov.matrices[f])).ok_or(Error::SingularCovariance { bin: f })?;
        let a: CVector = steer.row(f).to_owned();
        let z = cholesky_solve(&l, &a);
        let denom = inner(&a, &z);
        if !(denom.norm() > 0.0 && denom.norm().is_finite()) {
            return Err(Error::SingularCovariance { bin: f });
        }
        weights.row_mut(f).assign(&z.mapv(|v| v / denom.conj()));
    }
    Ok(BeamformerWeights {
        weights,
        reference_mic: REFERENCE_MIC,
    })
}

/// `out_ft = w_f^H y_ft`, a one-channel spectrogram.
pub fn apply_beamformer(w: &BeamformerWeights, spec: &Spectrogram) -> Result<Spectrogram> {
    let (m, bins, frames) = spec.shape();
    if w.weights.dim() != (bins, m) {
        return Err(Error::ShapeMismatch(format!(
            "weights {:?} for a {m}-channel spectrogram with {bins} bins",
            w.weights.dim()
        )));
    }
    let mut out = Array3::zeros((1, bins, frames));
    for f in 0..bins {
        for t in 0..frames {
            out[[0, f, t]] = (0..m).map(|c| w.weights[[f, c]].conj() * spec.bins[[c, f, t]]).sum();
        }
    }
    Spectrogram::new(out, spec.params, spec.signal_len)
}

/// Relative transfer functions: principal eigenvector of each speech
/// covariance, scaled so the reference entry is 1.
pub fn rtf_steering(speech_cov: &CovarianceSet) -> Array2<Complex64> {
    let m = speech_cov.num_mics();
    let mut out = Array2::zeros((speech_cov.num_bins(), m));
    for (f, r) in speech_cov.matrices.iter().enumerate() {
        let v = match power_iteration(r, POWER_ITERATIONS, POWER_TOL) {
            Some((_, v)) if v[REFERENCE_MIC].norm() > 1e-8 => {
                let r0 = v[REFERENCE_MIC];
                v.mapv(|z| z / r0)
            }
            // Silent bin or vanishing reference: fall back to broadside.
            _ => CVector::from_elem(m, Complex64::new(1.0, 0.0)),
        };
        out.row_mut(f).assign(&v);
    }
    out
}

/// Rebuilds `M` channels from a beamformer output by re-applying the RTFs.
pub fn restack(single: &Spectrogram, rtf: &Array2<Complex64>) -> Result<Spectrogram> {
    let (c, bins, frames) = single.shape();
    let m = rtf.ncols();
    if c != 1 || rtf.nrows() != bins {
        return Err(Error::ShapeMismatch(format!(
            "restack needs a 1-channel spectrogram with {} bins, got {c}x{bins}",
            rtf.nrows()
        )));
    }
    let out = Array3::from_shape_fn((m, bins, frames), |(ch, f, t)| rtf[[f, ch]] * single.bins[[0, f, t]]);
    Spectrogram::new(out, single.params, single.signal_len)
}

/// Oracle ratio mask `|S|^2 / (|S|^2 + |N|^2)` at the reference mic. With
/// uncorrelated `S` and `N`, `mask * |Y|^2` keeps the target power.
pub fn oracle_mask(target: &Spectrogram, noise: &Spectrogram) -> Array2<f64> {
    let (_, bins, frames) = target.shape();
    Array2::from_shape_fn((bins, frames), |(f, t)| {
        let s = target.bins[[REFERENCE_MIC, f, t]].norm_sqr();
        let n = noise.bins[[REFERENCE_MIC, f, t]].norm_sqr();
        if s + n > 0.0 {
            s / (s + n)
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone)]
pub struct BeamformOutput {
    pub enhanced: Spectrogram,
    pub weights: BeamformerWeights,
    pub steering: Array2<Complex64>,
    /// Speech and noise covariances coincide in every bin: the masks carried
    /// no information and the output is only the loaded MVDR of the mixture.
    pub degenerate: bool,
}

fn check_pair(mixture: &Spectrogram, target: &Spectrogram) -> Result<()> {
    if mixture.shape() != target.shape() || mixture.params != target.params {
        return Err(Error::ShapeMismatch(format!(
            "mixture {:?} vs target {:?}",
            mixture.shape(),
            target.shape()
        )));
    }
    Ok(())
}

fn noise_spec(mixture: &Spectrogram, target: &Spectrogram) -> Result<Spectrogram> {
    mixture.with_bins(&mixture.bins - &target.bins)
}

/// Mask-based MVDR from explicit speech and noise masks.
pub fn mb_mvdr_with_masks(mixture: &Spectrogram, speech_mask: &Array2<f64>, noise_mask: &Array2<f64>) -> Result<BeamformOutput> {
    let phi_s = estimate_covariance(mixture, Some(speech_mask))?;
    let phi_n = estimate_covariance(mixture, Some(noise_mask))?;
    let degenerate = phi_s
        .matrices
        .iter()
        .zip(&phi_n.matrices)
        .all(|(a, b)| a.iter().zip(b.iter()).all(|(x, y)| (x - y).norm() <= 1e-12 * x.norm().max(1e-300)));
    let steering = rtf_steering(&phi_s);
    let weights = mvdr_weights(&phi_n, &steering)?;
    Ok(BeamformOutput {
        enhanced: apply_beamformer(&weights, mixture)?,
        weights,
        steering,
        degenerate,
    })
}

/// Mask-based MVDR with oracle masks derived from the known target.
pub fn mb_mvdr(mixture: &Spectrogram, target: &Spectrogram) -> Result<BeamformOutput> {
    check_pair(mixture, target)?;
    let noise = noise_spec(mixture, target)?;
    let mask = oracle_mask(target, &noise);
    let noise_mask = mask.mapv(|v| 1.0 - v);
    mb_mvdr_with_masks(mixture, &mask, &noise_mask)
}

/// Steering source for the time-invariant MVDR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TiSteering {
    /// RTF from the covariance of the known target.
    OracleRtf,
    /// Far-field plane wave toward `theta_deg` for a ULA.
    Geometric { theta_deg: f64, num_mics: usize, spacing: f64 },
}

/// Time-invariant MVDR: one noise covariance from the whole utterance,
/// noise being everything in the mixture that is not the target.
pub fn ti_mvdr(mixture: &Spectrogram, target: &Spectrogram, steering: TiSteering) -> Result<BeamformOutput> {
    check_pair(mixture, target)?;
    let noise = noise_spec(mixture, target)?;
    let phi_n = estimate_covariance(&noise, None)?;
    let steer = match steering {
        TiSteering::OracleRtf => rtf_steering(&estimate_covariance(target, None)?),
        TiSteering::Geometric {
            theta_deg,
            num_mics,
            spacing,
        } => {
            let geometry = ArrayGeometry::new(num_mics, spacing, Default::default(), [0.0; 3]);
            geometric_steering(&geometry, theta_deg, mixture.num_bins(), mixture.params.fft_size)
        }
    };
    let weights = mvdr_weights(&phi_n, &steer)?;
    Ok(BeamformOutput {
        enhanced: apply_beamformer(&weights, mixture)?,
        weights,
        steering: steer,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::mat_vec;
    use crate::signal::StftParams;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cov_set(matrices: Vec<CMatrix>) -> CovarianceSet {
        CovarianceSet {
            frame_count: 1,
            fallback_bins: vec![],
            matrices,
        }
    }

    fn random_psd(m: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        let a = CMatrix::from_shape_fn((m, 2 * m), |_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let mut r = CMatrix::zeros((m, m));
        for i in 0..m {
            for j in 0..m {
                r[[i, j]] = (0..2 * m).map(|k| a[[i, k]] * a[[j, k]].conj()).sum();
            }
        }
        r
    }

    fn quad(r: &CMatrix, w: &CVector) -> f64 {
        inner(w, &mat_vec(r, w)).re
    }

    #[test]
    fn identity_covariance_gives_scaled_steering() {
        let a = ula_steering(8, 0.04, 40.0, 1000.0);
        let steer = a.clone().into_shape_with_order((1, 8)).unwrap();
        let w = mvdr_weights(&cov_set(vec![CMatrix::eye(8)]), &steer).unwrap();
        for m in 0..8 {
            assert!((w.weights[[0, m]] - a[m] / 8.0).norm() < 1e-6);
        }
    }

    #[test]
    fn distortionless_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mats: Vec<CMatrix> = (0..20).map(|_| random_psd(8, &mut rng)).collect();
        let steer = Array2::from_shape_fn((20, 8), |_| Complex64::from_polar(1.0, rng.gen_range(-3.0..3.0)));
        let w = mvdr_weights(&cov_set(mats), &steer).unwrap();
        for f in 0..20 {
            let g: Complex64 = (0..8).map(|m| w.weights[[f, m]].conj() * steer[[f, m]]).sum();
            assert!((g - 1.0).norm() < 1e-8);
        }
    }

    #[test]
    fn interferer_is_nulled() {
        let (target, interferer, freq) = (60.0, 120.0, 2000.0);
        let ai = ula_steering(8, 0.04, interferer, freq);
        let mut r = CMatrix::eye(8);
        for i in 0..8 {
            for j in 0..8 {
                r[[i, j]] += ai[i] * ai[j].conj() * 1e4;
            }
        }
        let steer = ula_steering(8, 0.04, target, freq).into_shape_with_order((1, 8)).unwrap();
        let w = mvdr_weights(&cov_set(vec![r]), &steer).unwrap();
        let gain = |theta: f64| {
            let a = ula_steering(8, 0.04, theta, freq);
            (0..8).map(|m| w.weights[[0, m]].conj() * a[m]).sum::<Complex64>().norm()
        };
        let pattern: Vec<f64> = (0..=180).map(|d| gain(d as f64)).collect();
        assert!((pattern[60] - 1.0).abs() < 1e-9);
        assert!(20.0 * (pattern[60] / pattern[120]).log10() >= 20.0);
    }

    #[test]
    fn mvdr_minimizes_output_power_under_the_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let r = random_psd(4, &mut rng);
            let a = CVector::from_shape_fn(4, |_| Complex64::from_polar(1.0, rng.gen_range(-3.0..3.0)));
            let w = mvdr_weights(&cov_set(vec![r.clone()]), &a.clone().into_shape_with_order((1, 4)).unwrap()).unwrap();
            let w: CVector = w.weights.row(0).to_owned();
            let loaded_r = loaded(&r);
            let best = quad(&loaded_r, &w);
            for _ in 0..200 {
                // Perturbation in the null space of a^H keeps w^H a = 1.
                let d = CVector::from_shape_fn(4, |_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
                let proj = inner(&a, &d) / inner(&a, &a);
                let d = &d - &a.mapv(|v| v * proj);
                let scale = rng.gen_range(1e-3..1.0);
                let cand = &w + &d.mapv(|v| v * scale);
                assert!(quad(&loaded_r, &cand) >= best - 1e-9 * best);
            }
        }
    }

    #[test]
    fn singular_covariance_names_the_bin() {
        let mats = vec![CMatrix::eye(2), CMatrix::zeros((2, 2))];
        let steer = Array2::from_elem((2, 2), Complex64::new(1.0, 0.0));
        assert!(matches!(
            mvdr_weights(&cov_set(mats), &steer),
            Err(Error::SingularCovariance { bin: 1 })
        ));
    }

    fn spec_from(data: Array3<Complex64>) -> Spectrogram {
        let params = StftParams::default();
        let frames = data.dim().2;
        Spectrogram::new(data, params, (frames - 1) * params.hop).unwrap()
    }

    #[test]
    fn one_hot_weights_select_a_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = spec_from(Array3::from_shape_fn((4, 161, 5), |_| Complex64::new(rng.gen(), rng.gen())));
        let mut weights = Array2::zeros((161, 4));
        weights.column_mut(2).fill(Complex64::new(1.0, 0.0));
        let out = apply_beamformer(&BeamformerWeights { weights, reference_mic: 2 }, &spec).unwrap();
        assert_eq!(out.bins.index_axis(ndarray::Axis(0), 0), spec.bins.index_axis(ndarray::Axis(0), 2));
    }

    #[test]
    fn all_ones_masks_are_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = spec_from(Array3::from_shape_fn((4, 161, 30), |_| Complex64::new(rng.gen(), rng.gen())));
        let ones = Array2::from_elem((161, 30), 1.0);
        let out = mb_mvdr_with_masks(&spec, &ones, &ones).unwrap();
        assert!(out.degenerate);
    }

    #[test]
    fn restack_reproduces_rank_one_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rtf = Array2::from_shape_fn((161, 4), |(_, m)| {
            if m == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(rng.gen(), rng.gen())
            }
        });
        let src = spec_from(Array3::from_shape_fn((1, 161, 6), |_| Complex64::new(rng.gen(), rng.gen())));
        let field = restack(&src, &rtf).unwrap();
        let out = mb_mvdr_with_masks(
            &field,
            &Array2::from_elem((161, 6), 1.0),
            &Array2::from_elem((161, 6), 1.0),
        )
        .unwrap();
        for f in 1..161 {
            for t in 0..6 {
                assert!((out.enhanced.bins[[0, f, t]] - src.bins[[0, f, t]]).norm() < 1e-6 * src.bins[[0, f, t]].norm().max(1.0));
            }
        }
    }
}
