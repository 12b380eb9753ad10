use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{s, Array2, Array3, Array4};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{MultichannelWaveform, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Framing of the analysis front-end. Defaults are 20 ms Hann frames at
/// 16 kHz with 50% overlap, giving 161 one-sided bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftParams {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            frame_len: 320,
            hop: 160,
            fft_size: 320,
        }
    }
}

impl StftParams {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 || self.frame_len % 2 != 0 {
            return Err(Error::InvalidStftParams(format!(
                "frame_len must be even and >= 2, got {}",
                self.frame_len
            )));
        }
        if self.hop * 2 != self.frame_len {
            return Err(Error::InvalidStftParams(format!(
                "hop {} must be half of frame_len {}",
                self.hop, self.frame_len
            )));
        }
        if self.fft_size != self.frame_len {
            return Err(Error::InvalidStftParams(format!(
                "fft_size {} must equal frame_len {}",
                self.fft_size, self.frame_len
            )));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames produced for a signal of `len` samples under center padding.
    pub fn num_frames(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    fn center_pad(&self) -> usize {
        self.frame_len / 2
    }
}

/// Periodic Hann window; it overlap-adds to exactly 1 at 50% overlap.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Complex one-sided STFT of every channel: `bins[m, f, t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: Array3<Complex64>,
    pub params: StftParams,
    /// Length of the time signal the frames were taken from.
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn new(bins: Array3<Complex64>, params: StftParams, signal_len: usize) -> Result<Self> {
        params.validate()?;
        let (_, f, t) = bins.dim();
        if f != params.num_bins() {
            return Err(Error::InvalidStftParams(format!(
                "{f} bins do not match fft_size {}",
                params.fft_size
            )));
        }
        if t != params.num_frames(signal_len) {
            return Err(Error::InvalidStftParams(format!(
                "{t} frames do not match a {signal_len}-sample signal at hop {}",
                params.hop
            )));
        }
        Ok(Self {
            bins,
            params,
            signal_len,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.bins.dim().0
    }

    pub fn num_bins(&self) -> usize {
        self.bins.dim().1
    }

    pub fn num_frames(&self) -> usize {
        self.bins.dim().2
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.bins.dim()
    }

    /// Copy with the same framing but different bin values.
    pub fn with_bins(&self, bins: Array3<Complex64>) -> Result<Self> {
        Self::new(bins, self.params, self.signal_len)
    }

    pub fn select_channel(&self, m: usize) -> Self {
        let bins = self.bins.slice(s![m..m + 1, .., ..]).to_owned();
        Self {
            bins,
            params: self.params,
            signal_len: self.signal_len,
        }
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(size: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans {
        forward: planner.plan_fft_forward(size),
        inverse: planner.plan_fft_inverse(size),
    }
}

/// Reflect-pads `x` by `left` samples before and `right` after (edge sample excluded).
fn reflect_pad(x: &[f64], left: usize, right: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + left + right);
    for i in (1..=left).rev() {
        out.push(x[reflect_index(i as isize, n)]);
    }
    out.extend_from_slice(x);
    for i in 0..right {
        out.push(x[reflect_index(n as isize + i as isize, n)]);
    }
    out
}

fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Forward STFT with reflect center padding (`T = N / hop + 1`).
pub fn stft(wave: &MultichannelWaveform, params: &StftParams) -> Result<Spectrogram> {
    params.validate()?;
    if wave.sample_rate() != SAMPLE_RATE {
        return Err(Error::UnsupportedSampleRate {
            found: wave.sample_rate(),
            expected: SAMPLE_RATE,
        });
    }
    let len = wave.len();
    if len < params.frame_len {
        return Err(Error::SignalTooShort {
            len,
            frame_len: params.frame_len,
        });
    }
    let frames = params.num_frames(len);
    let bins = params.num_bins();
    let pad = params.center_pad();
    let padded_len = (frames - 1) * params.hop + params.frame_len;
    let right = padded_len - len - pad;
    let window = hann_window(params.frame_len);
    let fft = plans(params.fft_size).forward;

    let channels = wave.num_channels();
    let mut out = Array3::<Complex64>::zeros((channels, bins, frames));
    let mut buf = vec![Complex64::default(); params.fft_size];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    for m in 0..channels {
        let row = wave.channel(m).to_vec();
        let padded = reflect_pad(&row, pad, right);
        for t in 0..frames {
            let start = t * params.hop;
            for (n, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(padded[start + n] * window[n], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for f in 0..bins {
                out[[m, f, t]] = buf[f];
            }
        }
    }
    Spectrogram::new(out, *params, len)
}

/// Inverse STFT: windowed overlap-add divided by the accumulated squared window.
pub fn istft(spec: &Spectrogram) -> Result<MultichannelWaveform> {
    let params = spec.params;
    params.validate()?;
    let (channels, bins, frames) = spec.shape();
    if bins != params.num_bins() || frames != params.num_frames(spec.signal_len) {
        return Err(Error::InvalidStftParams(format!(
            "spectrogram {bins}x{frames} inconsistent with framing of a {}-sample signal",
            spec.signal_len
        )));
    }
    let n_fft = params.fft_size;
    let pad = params.center_pad();
    let padded_len = (frames - 1) * params.hop + params.frame_len;
    let window = hann_window(params.frame_len);
    let ifft = plans(n_fft).inverse;

    let mut norm = vec![0.0; padded_len];
    for t in 0..frames {
        for (n, w) in window.iter().enumerate() {
            norm[t * params.hop + n] += w * w;
        }
    }

    let mut out = Array2::<f64>::zeros((channels, spec.signal_len));
    let mut buf = vec![Complex64::default(); n_fft];
    let mut scratch = vec![Complex64::default(); ifft.get_inplace_scratch_len()];
    let mut acc = vec![0.0; padded_len];
    for m in 0..channels {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..frames {
            for f in 0..bins {
                buf[f] = spec.bins[[m, f, t]];
            }
            // Mirror everything strictly between DC and Nyquist.
            for f in 1..n_fft - bins + 1 {
                buf[n_fft - f] = spec.bins[[m, f, t]].conj();
            }
            ifft.process_with_scratch(&mut buf, &mut scratch);
            let start = t * params.hop;
            for n in 0..params.frame_len {
                acc[start + n] += buf[n].re / n_fft as f64 * window[n];
            }
        }
        for i in 0..spec.signal_len {
            let w = norm[i + pad];
            out[[m, i]] = if w > 1e-12 { acc[i + pad] / w } else { 0.0 };
        }
    }
    MultichannelWaveform::new(out, SAMPLE_RATE)
}

/// Stacks real parts over imaginary parts along frequency: `[1, M, 2F, T]`.
pub fn pack_ri(spec: &Spectrogram) -> Array4<f64> {
    let (m, f, t) = spec.shape();
    let mut out = Array4::<f64>::zeros((1, m, 2 * f, t));
    for ((c, k, n), v) in spec.bins.indexed_iter() {
        out[[0, c, k, n]] = v.re;
        out[[0, c, f + k, n]] = v.im;
    }
    out
}

/// Inverse of [`pack_ri`] for batch entry 0.
pub fn unpack_ri(packed: &Array4<f64>, params: StftParams, signal_len: usize) -> Result<Spectrogram> {
    let (b, m, two_f, t) = packed.dim();
    if b != 1 || two_f % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "expected [1, M, 2F, T] packed tensor, got {:?}",
            packed.dim()
        )));
    }
    let f = two_f / 2;
    let bins = Array3::from_shape_fn((m, f, t), |(c, k, n)| {
        Complex64::new(packed[[0, c, k, n]], packed[[0, c, f + k, n]])
    });
    Spectrogram::new(bins, params, signal_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(channels: usize, len: usize, seed: u64) -> MultichannelWaveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = Array2::from_shape_fn((channels, len), |_| rng.gen_range(-1.0..1.0));
        MultichannelWaveform::new(samples, SAMPLE_RATE).unwrap()
    }

    fn rel_l2(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn four_second_input_has_paper_shape() {
        let spec = stft(&noise(8, 64_000, 1), &StftParams::default()).unwrap();
        assert_eq!(spec.shape(), (8, 161, 401));
    }

    #[test]
    fn zero_input_gives_zero_spectrogram() {
        let wave = MultichannelWaveform::zeros(8, 64_000, SAMPLE_RATE);
        let spec = stft(&wave, &StftParams::default()).unwrap();
        assert_eq!(spec.shape(), (8, 161, 401));
        assert!(spec.bins.iter().all(|v| v.norm() == 0.0));
        let back = istft(&spec).unwrap();
        assert!(back.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let x: Vec<f64> = (0..16_000)
            .map(|n| (2.0 * PI * 1000.0 * n as f64 / 16_000.0).sin())
            .collect();
        let spec = stft(&MultichannelWaveform::mono(x, SAMPLE_RATE).unwrap(), &StftParams::default()).unwrap();
        let t = spec.num_frames() / 2;
        let peak = (0..spec.num_bins())
            .max_by(|&a, &b| {
                spec.bins[[0, a, t]]
                    .norm()
                    .partial_cmp(&spec.bins[[0, b, t]].norm())
                    .unwrap()
            })
            .unwrap();
        assert_eq!(peak, 20);
    }

    #[test]
    fn short_signal_is_rejected() {
        let err = stft(&noise(1, 100, 0), &StftParams::default()).unwrap_err();
        assert!(matches!(err, Error::SignalTooShort { len: 100, frame_len: 320 }));
        assert!(err.to_string().contains("shorter than one frame"));
    }

    #[test]
    fn mismatched_hop_is_rejected() {
        let params = StftParams {
            hop: 100,
            ..StftParams::default()
        };
        assert!(stft(&noise(1, 1000, 0), &params).is_err());
        let mut spec = stft(&noise(1, 1000, 0), &StftParams::default()).unwrap();
        spec.params.hop = 100;
        assert!(matches!(istft(&spec), Err(Error::InvalidStftParams(_))));
    }

    #[test]
    fn white_noise_round_trip() {
        let x = noise(2, 64_000, 3);
        let y = istft(&stft(&x, &StftParams::default()).unwrap()).unwrap();
        assert!(rel_l2(y.samples(), x.samples()) < 1e-6);
    }

    #[test]
    fn chirp_round_trip() {
        // Speech-shaped: rising chirp with a syllabic envelope.
        let x: Vec<f64> = (0..64_000)
            .map(|n| {
                let t = n as f64 / 16_000.0;
                let env = 0.5 + 0.5 * (2.0 * PI * 4.0 * t).sin();
                env * (2.0 * PI * (100.0 * t + 400.0 * t * t)).sin()
            })
            .collect();
        let x = MultichannelWaveform::mono(x, SAMPLE_RATE).unwrap();
        let y = istft(&stft(&x, &StftParams::default()).unwrap()).unwrap();
        assert!(rel_l2(y.samples(), x.samples()) < 1e-6);
    }

    #[test]
    fn odd_lengths_round_trip() {
        for len in [320, 321, 479, 1001] {
            let x = noise(1, len, len as u64);
            let spec = stft(&x, &StftParams::default()).unwrap();
            assert_eq!(spec.num_frames(), len / 160 + 1);
            let y = istft(&spec).unwrap();
            assert_eq!(y.len(), len);
            assert!(rel_l2(y.samples(), x.samples()) < 1e-9, "len {len}");
        }
    }

    #[test]
    fn hann_overlap_adds_to_one_and_squared_sum_stays_positive() {
        let w = hann_window(320);
        for n in 0..160 {
            assert!((w[n] + w[n + 160] - 1.0).abs() < 1e-12);
            let sq = w[n] * w[n] + w[n + 160] * w[n + 160];
            assert!((0.5 - 1e-12..=1.0 + 1e-12).contains(&sq));
        }
    }

    #[test]
    fn parseval_against_window_weighted_energy() {
        // Sum over frames of one-sided spectral energy equals the padded signal
        // energy weighted by the accumulated squared window.
        let params = StftParams::default();
        let x = noise(1, 8_000, 11);
        let spec = stft(&x, &params).unwrap();
        let n_fft = params.fft_size as f64;
        let mut spectral = 0.0;
        for t in 0..spec.num_frames() {
            for f in 0..spec.num_bins() {
                let weight = if f == 0 || f == params.fft_size / 2 { 1.0 } else { 2.0 };
                spectral += weight * spec.bins[[0, f, t]].norm_sqr() / n_fft;
            }
        }
        let row = x.channel(0).to_vec();
        let frames = spec.num_frames();
        let padded_len = (frames - 1) * params.hop + params.frame_len;
        let padded = reflect_pad(&row, 160, padded_len - row.len() - 160);
        let w = hann_window(params.frame_len);
        let mut weighted = 0.0;
        for t in 0..frames {
            for n in 0..params.frame_len {
                weighted += (w[n] * padded[t * params.hop + n]).powi(2);
            }
        }
        assert!(((spectral - weighted) / weighted).abs() < 1e-6);
    }

    #[test]
    fn stft_is_linear() {
        let params = StftParams::default();
        let x = noise(2, 4_000, 5);
        let y = noise(2, 4_000, 6);
        let (a, b) = (0.7, -1.3);
        let combo = MultichannelWaveform::new(x.samples() * a + y.samples() * b, SAMPLE_RATE).unwrap();
        let sx = stft(&x, &params).unwrap();
        let sy = stft(&y, &params).unwrap();
        let sc = stft(&combo, &params).unwrap();
        for ((u, v), w) in sx.bins.iter().zip(sy.bins.iter()).zip(sc.bins.iter()) {
            assert!((u * a + v * b - w).norm() < 1e-9);
        }
    }

    #[test]
    fn pack_layout_and_exact_inverse() {
        let spec = stft(&noise(8, 64_000, 9), &StftParams::default()).unwrap();
        let packed = pack_ri(&spec);
        assert_eq!(packed.dim(), (1, 8, 322, 401));
        assert_eq!(packed[[0, 3, 10, 7]], spec.bins[[3, 10, 7]].re);
        assert_eq!(packed[[0, 3, 171, 7]], spec.bins[[3, 10, 7]].im);
        let back = unpack_ri(&packed, spec.params, spec.signal_len).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn real_spectrogram_packs_zero_imaginary_rows() {
        let spec = stft(&noise(2, 1_600, 2), &StftParams::default()).unwrap();
        let real = spec.with_bins(spec.bins.mapv(|v| Complex64::new(v.re, 0.0))).unwrap();
        let packed = pack_ri(&real);
        let f = real.num_bins();
        assert!(packed.slice(s![.., .., f.., ..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reflect_index_matches_numpy_reflect() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(reflect_pad(&x, 2, 2), vec![3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]);
    }
}
