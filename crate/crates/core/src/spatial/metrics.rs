use crate::error::{Error, Result};

/// Added to the error energy so a perfect estimate stays finite.
pub const SI_SNR_EPS: f64 = 1e-8;

fn check(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    let rr: f64 = reference.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return Err(Error::Silent("SI-SNR reference has zero energy".into()));
    }
    Ok(rr)
}

/// Scale-invariant SNR in dB: the estimate is projected onto the reference
/// and the residual counts as error.
pub fn si_snr(est: &[f64], reference: &[f64]) -> Result<f64> {
    si_snr_with_grad(est, reference).map(|(v, _)| v)
}

/// SI-SNR and its gradient with respect to `est`.
pub fn si_snr_with_grad(est: &[f64], reference: &[f64]) -> Result<(f64, Vec<f64>)> {
    let rr = check(est, reference)?;
    let er: f64 = est.iter().zip(reference).map(|(e, r)| e * r).sum();
    let alpha = er / rr;
    let target: Vec<f64> = reference.iter().map(|r| alpha * r).collect();
    let noise: Vec<f64> = est.iter().zip(&target).map(|(e, s)| e - s).collect();
    let ss: f64 = target.iter().map(|v| v * v).sum();
    let nn: f64 = noise.iter().map(|v| v * v).sum();
    let value = 10.0 * (ss / (nn + SI_SNR_EPS)).log10();

    // ss = er^2 / rr; nn = ee - er^2 / rr.
    // d ss / d est = 2 alpha r; d nn / d est = 2 est - 2 alpha r = 2 noise.
    let k = 10.0 / std::f64::consts::LN_10;
    let grad = reference
        .iter()
        .zip(&noise)
        .map(|(r, n)| {
            let dss = 2.0 * alpha * r;
            let dnn = 2.0 * n;
            k * (if ss > 0.0 { dss / ss } else { 0.0 } - dnn / (nn + SI_SNR_EPS))
        })
        .collect();
    Ok((value, grad))
}
