//! Classical single-output baselines: covariance estimation, MVDR weights,
//! mask-based MVDR with oracle masks and the time-invariant MVDR.

mod covariance;
mod mvdr;

pub use covariance::{estimate_covariance, CovarianceSet};
pub use mvdr::{
    apply_beamformer, geometric_steering, mb_mvdr, mb_mvdr_with_masks, mvdr_weights, oracle_mask, restack,
    rtf_steering, ti_mvdr, BeamformOutput, BeamformerWeights, TiSteering, DIAGONAL_LOADING, REFERENCE_MIC,
};

use num_complex::Complex64;

use crate::linalg::CVector;
use crate::scene::{ArrayGeometry, SPEED_OF_SOUND};

/// Far-field ULA response `a_m = exp(-j 2 pi f m d cos(theta) / c)`.
pub fn ula_steering(num_mics: usize, spacing: f64, theta_deg: f64, freq_hz: f64) -> CVector {
    let phase = -2.0 * std::f64::consts::PI * freq_hz * spacing * theta_deg.to_radians().cos() / SPEED_OF_SOUND;
    CVector::from_shape_fn(num_mics, |m| Complex64::from_polar(1.0, phase * m as f64))
}

pub fn steering_vector(geometry: &ArrayGeometry, theta_deg: f64, freq_hz: f64) -> CVector {
    ula_steering(geometry.num_mics, geometry.spacing, theta_deg, freq_hz)
}
