use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::beamform::ula_steering;
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, CMatrix};
use crate::signal::{hann_window, MultichannelWaveform, SAMPLE_RATE};

/// Analysis settings for the wideband MUSIC spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MusicConfig {
    pub fft_size: usize,
    pub hop: usize,
    /// Bands are FFT bins `1..=num_bands` (DC skipped).
    pub num_bands: usize,
    pub num_angles: usize,
    pub n_sources: usize,
    pub mic_spacing: f64,
}

impl Default for MusicConfig {
    fn default() -> Self {
        Self {
            fft_size: 600,
            hop: 300,
            num_bands: 300,
            num_angles: 181,
            n_sources: 1,
            mic_spacing: 0.04,
        }
    }
}

impl MusicConfig {
    fn validate(&self, num_mics: usize) -> Result<()> {
        if self.n_sources == 0 || self.n_sources >= num_mics {
            return Err(Error::InvalidConfig(format!(
                "n_sources = {} needs 1 <= n_sources < {num_mics}",
                self.n_sources
            )));
        }
        if self.num_bands == 0 || self.num_bands > self.fft_size / 2 || self.hop == 0 || self.num_angles < 2 {
            return Err(Error::InvalidConfig(format!(
                "{} bands from a {}-point FFT with hop {} and {} angles",
                self.num_bands, self.fft_size, self.hop, self.num_angles
            )));
        }
        Ok(())
    }

    pub fn angles_deg(&self) -> Vec<f64> {
        let step = 180.0 / (self.num_angles - 1) as f64;
        (0..self.num_angles).map(|a| a as f64 * step).collect()
    }

    pub fn band_freqs(&self) -> Vec<f64> {
        let df = f64::from(SAMPLE_RATE) / self.fft_size as f64;
        (1..=self.num_bands).map(|b| b as f64 * df).collect()
    }
}

/// MUSIC pseudo-spectrum, `[bands, angles]`, each band peak-normalized to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialSpectrum {
    pub values: Array2<f64>,
    pub band_freqs: Vec<f64>,
    pub angles_deg: Vec<f64>,
    /// Bands whose covariance was degenerate; emitted as uniform rows.
    pub degenerate: Vec<bool>,
}

impl SpatialSpectrum {
    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Mean over bands.
    pub fn wideband(&self) -> Vec<f64> {
        self.values.mean_axis(Axis(0)).map(|v| v.to_vec()).unwrap_or_default()
    }

    pub fn peak_angle_deg(&self) -> f64 {
        let w = self.wideband();
        self.angles_deg[argmax(&w)]
    }

    pub fn band_peak_deg(&self, band: usize) -> f64 {
        let row = self.values.row(band).to_vec();
        self.angles_deg[argmax(&row)]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("freq_hz");
        for a in &self.angles_deg {
            out.push_str(&format!(",deg_{a}"));
        }
        out.push('\n');
        for (b, row) in self.values.outer_iter().enumerate() {
            out.push_str(&format!("{:.4}", self.band_freqs[b]));
            for v in row {
                out.push_str(&format!(",{v:.6e}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Binary 8-bit PGM: one column per angle, lowest band on the bottom row.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let (bands, angles) = self.shape();
        let mut bytes = format!("P5\n{angles} {bands}\n255\n").into_bytes();
        for row in self.values.outer_iter().rev() {
            bytes.extend(row.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Per-band spatial covariance from Hann-windowed, unpadded analysis frames.
/// Returns `[bands]` matrices of size `M x M`.
pub fn band_covariances(wave: &MultichannelWaveform, config: &MusicConfig) -> Result<Vec<CMatrix>> {
    let m = wave.num_channels();
    let n = wave.len();
    if n < config.fft_size {
        return Err(Error::SignalTooShort {
            len: n,
            frame_len: config.fft_size,
        });
    }
    let frames = (n - config.fft_size) / config.hop + 1;
    let window = hann_window(config.fft_size);
    let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
    // snapshots[band][frame * m + mic]
    let mut snaps = vec![vec![Complex64::default(); frames * m]; config.num_bands];
    let mut buf = vec![Complex64::default(); config.fft_size];
    for mic in 0..m {
        let x = wave.channel(mic);
        for t in 0..frames {
            let start = t * config.hop;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(x[start + k] * window[k], 0.0);
            }
            fft.process(&mut buf);
            for (band, s) in snaps.iter_mut().enumerate() {
                s[t * m + mic] = buf[band + 1];
            }
        }
    }
    Ok(snaps
        .iter()
        .map(|s| {
            let mut r = CMatrix::zeros((m, m));
            for y in s.chunks_exact(m) {
                for i in 0..m {
                    for j in i..m {
                        r[[i, j]] += y[i] * y[j].conj();
                    }
                }
            }
            for i in 0..m {
                for j in 0..i {
                    r[[i, j]] = r[[j, i]].conj();
                }
            }
            r.mapv_inplace(|z| z / frames as f64);
            r
        })
        .collect())
}

/// MUSIC pseudo-spectrum from precomputed band covariances.
pub fn music_from_covariances(covs: &[CMatrix], config: &MusicConfig) -> Result<SpatialSpectrum> {
    let m = covs.first().map_or(0, |r| r.nrows());
    config.validate(m)?;
    if covs.len() != config.num_bands {
        return Err(Error::ShapeMismatch(format!(
            "{} covariances for {} bands",
            covs.len(),
            config.num_bands
        )));
    }
    let angles = config.angles_deg();
    let freqs = config.band_freqs();
    let max_trace = covs
        .iter()
        .map(|r| (0..m).map(|i| r[[i, i]].re).sum::<f64>())
        .fold(0.0, f64::max);
    let mut values = Array2::<f64>::zeros((config.num_bands, angles.len()));
    let mut degenerate = vec![false; config.num_bands];
    let noise_dim = m - config.n_sources;
    for (b, r) in covs.iter().enumerate() {
        let trace: f64 = (0..m).map(|i| r[[i, i]].re).sum();
        if !(trace > 1e-14 * max_trace && trace > 1e-30) {
            degenerate[b] = true;
            values.row_mut(b).fill(1.0);
            continue;
        }
        let eig = hermitian_eigen(r);
        let en = eig.vectors.slice(ndarray::s![.., ..noise_dim]);
        let mut row: Vec<f64> = angles
            .iter()
            .map(|&theta| {
                let a = ula_steering(m, config.mic_spacing, theta, freqs[b]);
                let proj: f64 = en
                    .columns()
                    .into_iter()
                    .map(|e| e.iter().zip(a.iter()).map(|(ei, ai)| ei.conj() * ai).sum::<Complex64>().norm_sqr())
                    .sum();
                1.0 / proj.max(1e-300)
            })
            .collect();
        let peak = row.iter().copied().fold(0.0, f64::max);
        row.iter_mut().for_each(|v| *v /= peak);
        values.row_mut(b).assign(&ndarray::Array1::from(row));
    }
    Ok(SpatialSpectrum {
        values,
        band_freqs: freqs,
        angles_deg: angles,
        degenerate,
    })
}

/// Wideband MUSIC spatial spectrum of a multichannel recording.
pub fn music_spectrum(wave: &MultichannelWaveform, config: &MusicConfig) -> Result<SpatialSpectrum> {
    config.validate(wave.num_channels())?;
    let covs = band_covariances(wave, config)?;
    music_from_covariances(&covs, config)
}

/// Mean squared difference over all cells.
pub fn spatial_mse(p: &SpatialSpectrum, q: &SpatialSpectrum) -> Result<f64> {
    if p.shape() != q.shape() {
        return Err(Error::ShapeMismatch(format!(
            "spatial spectra {:?} vs {:?}",
            p.shape(),
            q.shape()
        )));
    }
    let n = p.values.len() as f64;
    Ok(p.values.iter().zip(q.values.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hermitian_eigen;
    use crate::scene::synth;
    use std::f64::consts::PI;

    const C: f64 = 343.0;

    /// Plane wave: mic m receives the signal delayed by m * d * cos(theta) / c.
    /// Built from sinusoids at exact band-center frequencies, excited only on
    /// bins divisible by 3, so every band covariance is exactly rank 1.
    fn plane_wave(theta_deg: f64, len: usize, seed: u64) -> MultichannelWaveform {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let tau = 0.04 * theta_deg.to_radians().cos() / C;
        let fs = 16_000.0;
        let comps: Vec<(f64, f64)> = (3..=300)
            .step_by(3)
            .map(|k| (k as f64 * fs / 600.0, rng.gen_range(0.0..2.0 * PI)))
            .collect();
        let samples = Array2::from_shape_fn((8, len), |(m, n)| {
            let t = n as f64 / fs - m as f64 * tau;
            comps.iter().map(|&(f, ph)| (2.0 * PI * f * t + ph).cos()).sum()
        });
        MultichannelWaveform::new(samples, 16_000).unwrap()
    }

    #[test]
    fn shape_is_bands_by_angles() {
        let wave = MultichannelWaveform::new(
            Array2::from_shape_fn((8, 64_000), |(m, n)| ((n * 7 + m * 3) % 11) as f64 - 5.0),
            16_000,
        )
        .unwrap();
        let s = music_spectrum(&wave, &MusicConfig::default()).unwrap();
        assert_eq!(s.shape(), (300, 181));
        assert!(s.values.iter().all(|v| v.is_finite() && *v >= 0.0 && *v <= 1.0 + 1e-12));
    }

    #[test]
    fn identical_channels_peak_at_broadside() {
        let x = synth::white_noise(4, 64_000);
        let wave = MultichannelWaveform::new(Array2::from_shape_fn((8, 64_000), |(_, n)| x[n]), 16_000).unwrap();
        let s = music_spectrum(&wave, &MusicConfig::default()).unwrap();
        assert_eq!(s.peak_angle_deg(), 90.0);
    }

    #[test]
    fn noise_subspace_is_orthogonal_to_true_steering() {
        let theta = 63.0;
        let wave = plane_wave(theta, 64_000, 1);
        let cfg = MusicConfig::default();
        let covs = band_covariances(&wave, &cfg).unwrap();
        let freqs = cfg.band_freqs();
        let mut checked = 0;
        for (b, r) in covs.iter().enumerate() {
            if (b + 1) % 3 != 0 || freqs[b] <= 500.0 || b + 1 == cfg.fft_size / 2 {
                continue;
            }
            let eig = hermitian_eigen(r);
            let a = ula_steering(8, 0.04, theta, freqs[b]);
            let resid: f64 = (0..7)
                .map(|k| {
                    eig.vectors
                        .column(k)
                        .iter()
                        .zip(a.iter())
                        .map(|(e, ai)| e.conj() * ai)
                        .sum::<Complex64>()
                        .norm_sqr()
                })
                .sum::<f64>()
                .sqrt();
            assert!(resid < 1e-3, "band {b}: {resid}");
            checked += 1;
        }
        assert!(checked > 90);
    }

    #[test]
    fn per_band_peaks_follow_the_source() {
        // Near broadside the array is alias-free at every band below Nyquist.
        for theta in [87.0, 90.0, 93.0] {
            let s = music_spectrum(&plane_wave(theta, 64_000, 2), &MusicConfig::default()).unwrap();
            for b in (2..299).step_by(3) {
                assert!((s.band_peak_deg(b) - theta).abs() <= 1.0, "band {b}");
            }
        }
    }

    #[test]
    fn invariant_to_global_scale() {
        let wave = plane_wave(40.0, 32_000, 3);
        let base = music_spectrum(&wave, &MusicConfig::default()).unwrap();
        let scaled = music_spectrum(&wave.scaled(3.0), &MusicConfig::default()).unwrap();
        let diff = base
            .values
            .iter()
            .zip(scaled.values.iter())
            .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn silence_gives_flagged_uniform_bands() {
        let wave = MultichannelWaveform::zeros(8, 16_000, 16_000);
        let s = music_spectrum(&wave, &MusicConfig::default()).unwrap();
        assert!(s.degenerate.iter().all(|&d| d));
        assert!(s.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mse_is_zero_on_self_and_symmetric() {
        let p = music_spectrum(&plane_wave(30.0, 16_000, 5), &MusicConfig::default()).unwrap();
        let q = music_spectrum(&plane_wave(120.0, 16_000, 6), &MusicConfig::default()).unwrap();
        assert_eq!(spatial_mse(&p, &p).unwrap(), 0.0);
        assert_eq!(spatial_mse(&p, &q).unwrap(), spatial_mse(&q, &p).unwrap());
        assert!(spatial_mse(&p, &q).unwrap() > 0.0);
    }

    #[test]
    fn rejects_bad_source_count() {
        let wave = plane_wave(30.0, 16_000, 5);
        let cfg = MusicConfig {
            n_sources: 8,
            ..MusicConfig::default()
        };
        assert!(matches!(music_spectrum(&wave, &cfg), Err(Error::InvalidConfig(_))));
    }
}
