#![allow(dead_code)]

use std::path::Path;

use ndarray::{s, Array2};
use num_complex::Complex64;
use rustfft::FftPlanner;
use wtformer_lab::net::WtConv;
use wtformer_lab::scene::synth::{self, NoiseKind};
use wtformer_lab::scene::{simulate_synthetic, MixtureExample, RirOptions, SceneConfig};
use wtformer_lab::signal::{write_wav, MultichannelWaveform, SAMPLE_RATE};

/// Scene `i` of the desk test set: default reverberant rooms, noise type
/// cycling white, pink, babble.
pub fn desk_scene(i: usize, snr_db: [f64; 2]) -> MixtureExample {
    let config = SceneConfig {
        snr_db,
        ..SceneConfig::default()
    };
    simulate_synthetic(20_000 + i as u64, &config, NoiseKind::ALL[i % 3], &RirOptions::default()).expect("desk scene renders")
}

/// Band-limited fractional delay by a linear phase ramp on a zero-padded FFT.
pub fn fractional_delay(x: &[f64], delay: f64) -> Vec<f64> {
    let n = (2 * x.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::default());
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        // Signed frequency index; the Nyquist bin is kept real.
        let kf = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        if k == n / 2 {
            *v *= (std::f64::consts::PI * delay).cos();
        } else {
            *v *= Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * kf * delay / n as f64);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().take(x.len()).map(|v| v.re / n as f64).collect()
}

/// Eight channels: a speech-like source reaching each mic `m` with `m % 4`
/// samples of delay, so every cue pair has a clear non-zero lag.
pub fn eight_channel_speech(seed: u64, len: usize) -> MultichannelWaveform {
    let s = synth::speech(seed, len + 8);
    MultichannelWaveform::new(Array2::from_shape_fn((8, len), |(m, t)| s[t + 8 - m % 4]), SAMPLE_RATE).unwrap()
}

/// Writes `n` mono utterances of 3.5 to 5 s.
pub fn write_corpus(dir: &Path, n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let len = 56_000 + (i * 1_237) % 24_000;
        let wave = MultichannelWaveform::mono(synth::speech(500 + i as u64, len), SAMPLE_RATE).unwrap();
        write_wav(dir.join(format!("spk{:02}_utt.wav", i)), &wave).unwrap();
    }
}

// Dense-operator oracle for a two-level wavelet convolution on one channel
// plane, built straight from the Haar and convolution definitions.

pub fn haar_matrix(n: usize) -> Array2<f64> {
    let m = n / 2;
    let mut d = Array2::zeros((4 * m * m, n * n));
    let signs = [[1.0, 1.0, 1.0, 1.0], [1.0, -1.0, 1.0, -1.0], [1.0, 1.0, -1.0, -1.0], [1.0, -1.0, -1.0, 1.0]];
    for (k, sg) in signs.iter().enumerate() {
        for i in 0..m {
            for j in 0..m {
                let row = k * m * m + i * m + j;
                let taps = [(2 * i, 2 * j), (2 * i, 2 * j + 1), (2 * i + 1, 2 * j), (2 * i + 1, 2 * j + 1)];
                for (t, &(p, q)) in taps.iter().enumerate() {
                    d[[row, p * n + q]] = 0.5 * sg[t];
                }
            }
        }
    }
    d
}

/// Same-padded 2-D cross-correlation as an `n^2 x n^2` matrix.
pub fn conv_matrix(kernel: ndarray::ArrayView2<'_, f64>, n: usize) -> Array2<f64> {
    let k = kernel.nrows() as isize;
    let half = k / 2;
    let n_i = n as isize;
    let mut a = Array2::zeros((n * n, n * n));
    for i in 0..n_i {
        for j in 0..n_i {
            for p in 0..k {
                for q in 0..k {
                    let (si, sj) = (i + p - half, j + q - half);
                    if (0..n_i).contains(&si) && (0..n_i).contains(&sj) {
                        a[[(i * n_i + j) as usize, (si * n_i + sj) as usize]] += kernel[[p as usize, q as usize]];
                    }
                }
            }
        }
    }
    a
}

fn block_diag(blocks: &[Array2<f64>]) -> Array2<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Array2::zeros((n, n));
    let mut off = 0;
    for b in blocks {
        let k = b.nrows();
        out.slice_mut(s![off..off + k, off..off + k]).assign(b);
        off += k;
    }
    out
}

fn level_operator(conv: &WtConv, level: usize, ch: usize, n: usize) -> Array2<f64> {
    let blocks: Vec<Array2<f64>> = (0..4)
        .map(|k| {
            let idx = 4 * ch + k;
            conv_matrix(conv.level_convs[level].weight.slice(s![idx, .., ..]), n / 2) * conv.wavelet_scales[level][idx]
        })
        .collect();
    block_diag(&blocks)
}

/// Linear part of a two-level `WtConv` on channel `ch` of an `n x n` plane,
/// and the constant offset from the base bias.
pub fn dense_wtconv(conv: &WtConv, ch: usize, n: usize) -> (Array2<f64>, f64) {
    let (d1, d2) = (haar_matrix(n), haar_matrix(n / 2));
    let q = (n / 2) * (n / 2);
    let a1 = level_operator(conv, 0, ch, n);
    let a2 = level_operator(conv, 1, ch, n / 2);
    let deep = d2.t().dot(&a2).dot(&d2);
    let mut select_ll = Array2::zeros((q, 4 * q));
    let mut lift = Array2::zeros((4 * q, q));
    for i in 0..q {
        select_ll[[i, i]] = 1.0;
        lift[[i, i]] = 1.0;
    }
    let wavelet = d1.t().dot(&(&a1 + &lift.dot(&deep).dot(&select_ll))).dot(&d1);
    let base = conv_matrix(conv.base.weight.slice(s![ch, .., ..]), n) * conv.base_scale[ch];
    let bias = conv.base.bias.as_ref().map_or(0.0, |b| b[ch]) * conv.base_scale[ch];
    (&base + &wavelet, bias)
}
