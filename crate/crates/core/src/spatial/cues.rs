use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{hann_window, stft, MultichannelWaveform, StftParams, SAMPLE_RATE};

/// Microphone pairs compared for the cue metrics (0-based).
pub const CUE_PAIRS: [(usize, usize); 4] = [(0, 4), (1, 5), (2, 6), (3, 7)];
/// GCC-PHAT search window.
pub const MAX_ITD_SECONDS: f64 = 1e-3;
/// Frames and bins within this many dB of the clean maximum count as active.
pub const ACTIVITY_RANGE_DB: f64 = 40.0;

const ITD_FRAME: usize = 1024;
const ITD_HOP: usize = 512;
const ITD_FFT: usize = 2048;
const TINY: f64 = 1e-20;

fn max_lag_samples() -> usize {
    (MAX_ITD_SECONDS * f64::from(SAMPLE_RATE)).round() as usize
}

/// Lag (in samples) of the PHAT-weighted cross-correlation peak within
/// `±max_lag`, refined by a parabola through the peak and its neighbours.
/// Positive when `y` lags `x`. `None` when either input is silent.
pub fn gcc_phat_lag(x: &[f64], y: &[f64], n_fft: usize, max_lag: usize) -> Option<f64> {
    let ex: f64 = x.iter().map(|v| v * v).sum();
    let ey: f64 = y.iter().map(|v| v * v).sum();
    if ex <= TINY || ey <= TINY {
        return None;
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);
    let spectrum = |s: &[f64]| {
        let mut buf: Vec<Complex64> = s.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(n_fft, Complex64::default());
        fwd.process(&mut buf);
        buf
    };
    let xs = spectrum(x);
    let ys = spectrum(y);
    let mut g: Vec<Complex64> = xs.iter().zip(&ys).map(|(a, b)| a.conj() * b).collect();
    let peak_mag = g.iter().map(|z| z.norm()).fold(0.0, f64::max);
    for z in g.iter_mut() {
        let mag = z.norm();
        *z = if mag > 1e-12 * peak_mag { *z / mag } else { Complex64::default() };
    }
    inv.process(&mut g);
    let at = |lag: isize| g[lag.rem_euclid(n_fft as isize) as usize].re;
    let max_lag = max_lag.min(n_fft / 2 - 1) as isize;
    let best = (-max_lag..=max_lag).fold(-max_lag, |b, l| if at(l) > at(b) { l } else { b });
    let mut offset = 0.0;
    if best > -max_lag && best < max_lag {
        let (ym, y0, yp) = (at(best - 1), at(best), at(best + 1));
        let denom = ym - 2.0 * y0 + yp;
        if denom < 0.0 {
            offset = 0.5 * (ym - yp) / denom;
        }
    }
    Some(best as f64 + offset)
}

/// Inter-channel time difference of two whole signals, in seconds.
pub fn gcc_phat_itd(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "GCC-PHAT inputs of {} and {} samples",
            x.len(),
            y.len()
        )));
    }
    let n_fft = (2 * x.len()).next_power_of_two();
    Ok(gcc_phat_lag(x, y, n_fft, max_lag_samples()).map(|l| l / f64::from(SAMPLE_RATE)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCues {
    pub pair: (usize, usize),
    pub delta_itd_us: f64,
    pub delta_ipd_rad: f64,
    pub delta_ild_db: f64,
    pub itd_frames: usize,
    pub tf_bins: usize,
    pub ild_frames: usize,
}

/// Cue errors of an enhanced recording against the clean target, averaged
/// over [`CUE_PAIRS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueReport {
    pub delta_itd_us: f64,
    pub delta_ipd_rad: f64,
    pub delta_ild_db: f64,
    pub per_pair: Vec<PairCues>,
}

fn wrap(phase: f64) -> f64 {
    let w = (phase + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn frame_energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn itd_delta(enh: &MultichannelWaveform, clean: &MultichannelWaveform, (i, j): (usize, usize)) -> (f64, usize) {
    let len = clean.len();
    if len < ITD_FRAME {
        return (0.0, 0);
    }
    let frames = (len - ITD_FRAME) / ITD_HOP + 1;
    let window = hann_window(ITD_FRAME);
    let cut = |w: &MultichannelWaveform, m: usize, t: usize| -> Vec<f64> {
        let row = w.channel(m);
        (0..ITD_FRAME).map(|k| row[t * ITD_HOP + k] * window[k]).collect()
    };
    let energies: Vec<f64> = (0..frames)
        .map(|t| frame_energy(&cut(clean, i, t)) + frame_energy(&cut(clean, j, t)))
        .collect();
    let floor = energies.iter().copied().fold(0.0, f64::max) * 10f64.powf(-ACTIVITY_RANGE_DB / 10.0);
    let (mut sum, mut count) = (0.0, 0);
    for t in 0..frames {
        if energies[t] <= TINY || energies[t] < floor {
            continue;
        }
        let c = gcc_phat_lag(&cut(clean, i, t), &cut(clean, j, t), ITD_FFT, max_lag_samples());
        let e = gcc_phat_lag(&cut(enh, i, t), &cut(enh, j, t), ITD_FFT, max_lag_samples());
        if let (Some(c), Some(e)) = (c, e) {
            sum += (e - c).abs();
            count += 1;
        }
    }
    (mean(sum, count) / f64::from(SAMPLE_RATE) * 1e6, count)
}

/// ΔITD, ΔIPD and ΔILD between enhanced and clean multichannel signals.
pub fn cue_deltas(enh: &MultichannelWaveform, clean: &MultichannelWaveform) -> Result<CueReport> {
    let need = CUE_PAIRS.iter().map(|&(_, j)| j).max().unwrap_or(0) + 1;
    if enh.samples().dim() != clean.samples().dim() || clean.num_channels() < need {
        return Err(Error::ShapeMismatch(format!(
            "cue metrics need two {need}-channel signals of equal shape, got {:?} and {:?}",
            enh.samples().dim(),
            clean.samples().dim()
        )));
    }
    let params = StftParams::default();
    let es = stft(enh, &params)?;
    let cs = stft(clean, &params)?;
    let (_, bins, frames) = cs.shape();

    let mut per_pair = Vec::with_capacity(CUE_PAIRS.len());
    for &(i, j) in &CUE_PAIRS {
        let (delta_itd_us, itd_frames) = itd_delta(enh, clean, (i, j));

        let bin_energy = |f: usize, t: usize| cs.bins[[i, f, t]].norm_sqr() + cs.bins[[j, f, t]].norm_sqr();
        let max_bin = (0..bins)
            .flat_map(|f| (0..frames).map(move |t| (f, t)))
            .map(|(f, t)| bin_energy(f, t))
            .fold(0.0, f64::max);
        let bin_floor = max_bin * 10f64.powf(-ACTIVITY_RANGE_DB / 10.0);
        let (mut ipd_sum, mut tf_bins) = (0.0, 0);
        for f in 0..bins {
            for t in 0..frames {
                let energy = bin_energy(f, t);
                if energy <= TINY || energy < bin_floor {
                    continue;
                }
                let c = (cs.bins[[i, f, t]] * cs.bins[[j, f, t]].conj()).arg();
                let e = (es.bins[[i, f, t]] * es.bins[[j, f, t]].conj()).arg();
                ipd_sum += wrap(e - c).abs();
                tf_bins += 1;
            }
        }

        let power = |s: &crate::signal::Spectrogram, m: usize, t: usize| -> f64 {
            (0..bins).map(|f| s.bins[[m, f, t]].norm_sqr()).sum()
        };
        let frame_e: Vec<f64> = (0..frames).map(|t| power(&cs, i, t) + power(&cs, j, t)).collect();
        let frame_floor = frame_e.iter().copied().fold(0.0, f64::max) * 10f64.powf(-ACTIVITY_RANGE_DB / 10.0);
        let (mut ild_sum, mut ild_frames) = (0.0, 0);
        for t in 0..frames {
            if frame_e[t] <= TINY || frame_e[t] < frame_floor {
                continue;
            }
            let ild = |s| 10.0 * ((power(s, i, t) + TINY) / (power(s, j, t) + TINY)).log10();
            ild_sum += (ild(&es) - ild(&cs)).abs();
            ild_frames += 1;
        }

        per_pair.push(PairCues {
            pair: (i, j),
            delta_itd_us,
            delta_ipd_rad: mean(ipd_sum, tf_bins),
            delta_ild_db: mean(ild_sum, ild_frames),
            itd_frames,
            tf_bins,
            ild_frames,
        });
    }
    let avg = |f: fn(&PairCues) -> f64| per_pair.iter().map(f).sum::<f64>() / per_pair.len() as f64;
    Ok(CueReport {
        delta_itd_us: avg(|p| p.delta_itd_us),
        delta_ipd_rad: avg(|p| p.delta_ipd_rad),
        delta_ild_db: avg(|p| p.delta_ild_db),
        per_pair,
    })
}
