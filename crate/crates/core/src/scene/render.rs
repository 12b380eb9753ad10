use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{simulate_rir, split_early_late, RirOptions, RirSet, RoomScene};
use crate::error::{Error, Result};
use crate::signal::{MultichannelWaveform, SAMPLE_RATE};

/// Reference microphone for SNR and scaling decisions.
pub const REFERENCE_MIC: usize = 0;

/// A rendered training pair.
#[derive(Debug, Clone)]
pub struct MixtureExample {
    pub mixture: MultichannelWaveform,
    pub target_early: MultichannelWaveform,
    pub scene: RoomScene,
}

/// Unscaled ingredients of a mixture, with the noise already at the scene SNR.
#[derive(Debug, Clone)]
pub struct MixtureComponents {
    pub reverberant_speech: Array2<f64>,
    pub early_speech: Array2<f64>,
    pub noise: Array2<f64>,
    pub noise_gain: f64,
}

impl MixtureComponents {
    pub fn mixture(&self) -> Array2<f64> {
        &self.reverberant_speech + &self.noise
    }
}

/// Linear convolution of `x` with each kernel, truncated to `out_len`.
pub fn fft_convolve(x: &[f64], kernels: &[Vec<f64>], out_len: usize) -> Vec<Vec<f64>> {
    let max_k = kernels.iter().map(Vec::len).max().unwrap_or(1);
    let size = (x.len() + max_k - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut xs: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    xs.resize(size, Complex64::default());
    fwd.process(&mut xs);
    kernels
        .iter()
        .map(|h| {
            let mut hs: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            hs.resize(size, Complex64::default());
            fwd.process(&mut hs);
            for (a, b) in hs.iter_mut().zip(&xs) {
                *a *= b;
            }
            inv.process(&mut hs);
            hs.iter().take(out_len).map(|v| v.re / size as f64).collect::<Vec<f64>>()
        })
        .map(|mut v| {
            v.resize(out_len, 0.0);
            v
        })
        .collect()
}

fn energy(row: ndarray::ArrayView1<'_, f64>) -> f64 {
    row.iter().map(|v| v * v).sum()
}

fn check_source(name: &str, x: &[f64], chunk_len: usize) -> Result<()> {
    if x.len() < chunk_len {
        return Err(Error::InvalidWaveform(format!(
            "{name} has {} samples, needs at least {chunk_len}",
            x.len()
        )));
    }
    Ok(())
}

/// Convolves the sources with precomputed responses and sets the noise gain
/// so the reference-mic early-speech to noise energy ratio equals the scene SNR.
pub fn render_with_rirs(
    scene: &RoomScene,
    rirs: &RirSet,
    speech: &[f64],
    noises: &[&[f64]],
    chunk_len: usize,
) -> Result<MixtureComponents> {
    check_source("speech", speech, chunk_len)?;
    if noises.len() + 1 != rirs.num_sources() {
        return Err(Error::ShapeMismatch(format!(
            "{} noise signals for {} noise sources",
            noises.len(),
            rirs.num_sources() - 1
        )));
    }
    for n in noises {
        check_source("noise", n, chunk_len)?;
    }
    let speech = &speech[..chunk_len];
    if speech.iter().all(|&v| v == 0.0) {
        return Err(Error::Silent("speech has zero energy; SNR is undefined".into()));
    }
    let mics = rirs.num_mics();
    let (early, _) = split_early_late(rirs, scene.early_ms);

    let mut kernels: Vec<Vec<f64>> = (0..mics).map(|m| rirs.response(m, 0)).collect();
    kernels.extend((0..mics).map(|m| early.response(m, 0)));
    let conv = fft_convolve(speech, &kernels, chunk_len);
    let to_matrix = |rows: &[Vec<f64>]| Array2::from_shape_fn((mics, chunk_len), |(m, n)| rows[m][n]);
    let reverberant_speech = to_matrix(&conv[..mics]);
    let early_speech = to_matrix(&conv[mics..]);

    let mut noise = Array2::<f64>::zeros((mics, chunk_len));
    for (k, n) in noises.iter().enumerate() {
        let kernels: Vec<Vec<f64>> = (0..mics).map(|m| rirs.response(m, k + 1)).collect();
        let conv = fft_convolve(&n[..chunk_len], &kernels, chunk_len);
        noise += &to_matrix(&conv);
    }
    let speech_energy = energy(early_speech.row(REFERENCE_MIC));
    let noise_energy = energy(noise.row(REFERENCE_MIC));
    if speech_energy == 0.0 {
        return Err(Error::Silent("early speech image is silent at the reference mic".into()));
    }
    let noise_gain = if noise_energy > 0.0 {
        (speech_energy / (noise_energy * 10f64.powf(scene.snr_db / 10.0))).sqrt()
    } else {
        0.0
    };
    noise *= noise_gain;
    Ok(MixtureComponents {
        reverberant_speech,
        early_speech,
        noise,
        noise_gain,
    })
}

/// Full pipeline for one scene: image-method responses, SNR mixing, 4 s
/// chunking and one shared gain putting the mixture peak at `scene.target_peak`.
pub fn render_mixture(
    scene: &RoomScene,
    speech: &[f64],
    noises: &[&[f64]],
    chunk_len: usize,
    rir_options: &RirOptions,
) -> Result<MixtureExample> {
    let rirs = simulate_rir(scene, rir_options);
    let parts = render_with_rirs(scene, &rirs, speech, noises, chunk_len)?;
    let mixture = parts.mixture();
    let peak = mixture.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let gain = if peak > 0.0 { scene.target_peak / peak } else { 1.0 };
    Ok(MixtureExample {
        mixture: MultichannelWaveform::new(mixture * gain, SAMPLE_RATE)?,
        target_early: MultichannelWaveform::new(parts.early_speech * gain, SAMPLE_RATE)?,
        scene: scene.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{sample_scene, synth, SceneConfig};
    use crate::spatial::si_snr;

    fn direct_convolve(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
        (0..out_len)
            .map(|n| {
                (0..h.len())
                    .filter(|&k| k <= n && n - k < x.len())
                    .map(|k| h[k] * x[n - k])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn fft_convolution_matches_direct_sum() {
        let x: Vec<f64> = (0..300).map(|i| ((i * 7 % 13) as f64 - 6.0) / 6.0).collect();
        let h: Vec<f64> = (0..41).map(|i| (i as f64 * 0.3).cos() / (1.0 + i as f64)).collect();
        let fast = fft_convolve(&x, &[h.clone()], 300);
        let slow = direct_convolve(&x, &h, 300);
        for (a, b) in fast[0].iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn scene_and_sources(seed: u64, snr: f64) -> (RoomScene, Vec<f64>, Vec<f64>) {
        let mut scene = sample_scene(seed, &SceneConfig::default()).unwrap();
        scene.snr_db = snr;
        let speech = synth::speech(seed, 64_000);
        let noise = synth::white_noise(seed + 100, 64_000);
        (scene, speech, noise)
    }

    #[test]
    fn noise_gain_hits_requested_snr() {
        let (scene, speech, noise) = scene_and_sources(1, 0.0);
        let rirs = simulate_rir(&scene, &RirOptions::default());
        let parts = render_with_rirs(&scene, &rirs, &speech, &[&noise], 64_000).unwrap();
        let ratio = energy(parts.early_speech.row(0)) / energy(parts.noise.row(0));
        assert!((ratio - 1.0).abs() < 1e-6);
        let mix = parts.mixture();
        let sum = &parts.reverberant_speech + &parts.noise;
        assert!(mix.iter().zip(sum.iter()).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn anechoic_without_noise_is_scaled_delayed_speech() {
        let (scene, speech, _) = scene_and_sources(2, 10.0);
        let zeros = vec![0.0; 64_000];
        let opts = RirOptions {
            highpass: false,
            ..RirOptions::anechoic()
        };
        let ex = render_mixture(&scene, &speech, &[&zeros], 64_000, &opts).unwrap();
        let rirs = simulate_rir(&scene, &opts);
        let delayed = fft_convolve(&speech[..64_000], &[rirs.response(0, 0)], 64_000);
        let scale = ex.mixture.samples()[[0, 20_000]] / delayed[0][20_000];
        for n in 0..64_000 {
            assert!((ex.mixture.samples()[[0, n]] - scale * delayed[0][n]).abs() < 1e-9);
        }
        assert_eq!(ex.mixture.samples(), ex.target_early.samples());
    }

    #[test]
    fn silent_speech_is_rejected() {
        let (scene, _, noise) = scene_and_sources(3, 0.0);
        let silent = vec![0.0; 64_000];
        let err = render_mixture(&scene, &silent, &[&noise], 64_000, &RirOptions::anechoic()).unwrap_err();
        assert!(matches!(err, Error::Silent(_)));
    }

    #[test]
    fn minus_five_db_mixture_has_negative_si_snr() {
        let (scene, speech, noise) = scene_and_sources(0, -5.0);
        let ex = render_mixture(&scene, &speech, &[&noise], 64_000, &RirOptions::default()).unwrap();
        assert_eq!(ex.mixture.samples().dim(), (8, 64_000));
        let peak = ex.mixture.peak();
        assert!((peak - scene.target_peak).abs() < 1e-12);
        for m in 0..8 {
            let v = si_snr(
                ex.mixture.channel(m).as_slice().unwrap(),
                ex.target_early.channel(m).as_slice().unwrap(),
            )
            .unwrap();
            assert!(v < 0.0, "mic {m}: {v} dB");
        }
    }
}
