use ndarray::{Array2, Array4};
use proptest::prelude::*;

use wtformer_lab::loss::{l_total, l_total_grad, LossWeights};
use wtformer_lab::net::{haar_dwt2, haar_idwt2};
use wtformer_lab::scene::{sample_scene, SceneConfig};
use wtformer_lab::signal::{istft, stft, MultichannelWaveform, StftParams, SAMPLE_RATE};
use wtformer_lab::spatial::si_snr;

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stft_inverts(channels in 1usize..4, frames in 4usize..40, seed in values(1)) {
        let len = frames * 160;
        let x = Array2::from_shape_fn((channels, len), |(m, t)| ((t as f64 * 0.013 + m as f64) * (1.0 + seed[0])).sin() + 0.1 * ((t * 7919 + m) % 101) as f64 / 101.0);
        let wave = MultichannelWaveform::new(x, SAMPLE_RATE).unwrap();
        let back = istft(&stft(&wave, &StftParams::default()).unwrap()).unwrap();
        prop_assert_eq!(back.samples().dim(), wave.samples().dim());
        let err = (back.samples() - wave.samples()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(err < 1e-9, "max error {err}");
    }

    #[test]
    fn haar_round_trip_and_energy(h in 1usize..9, w in 1usize..9, data in values(2 * 3 * 16 * 16)) {
        let (h, w) = (2 * h, 2 * w);
        let x = Array4::from_shape_fn((2, 3, h, w), |(b, c, i, j)| data[((b * 3 + c) * 16 + i) * 16 + j]);
        let sb = haar_dwt2(&x);
        let back = haar_idwt2(&sb).unwrap();
        prop_assert!((&back - &x).iter().all(|v| v.abs() < 1e-12));
        let ex = x.mapv(|v| v * v).sum();
        prop_assert!((sb.energy() - ex).abs() <= 1e-12 * ex.max(1.0));
    }

    #[test]
    fn haar_round_trip_odd_sizes(h in 1usize..12, w in 1usize..12, data in values(11 * 11)) {
        let x = Array4::from_shape_fn((1, 1, h, w), |(_, _, i, j)| data[i * 11 + j]);
        let back = haar_idwt2(&haar_dwt2(&x)).unwrap();
        prop_assert_eq!(back.dim(), x.dim());
        prop_assert!((&back - &x).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn weighted_loss_algebra(lns in -30.0f64..30.0, lps in 0.0f64..5.0, s1 in -2.0f64..2.0, s2 in -2.0f64..2.0) {
        let w = LossWeights { log_sigma1: s1, log_sigma2: s2, shared_sigma: false };
        let expected = 5.0 * (-2.0 * s1).exp() * lns + 0.5 * (-2.0 * s2).exp() * lps + s1 + s2;
        prop_assert!((l_total(lns, lps, &w) - expected).abs() <= 1e-9 * expected.abs().max(1.0));

        let lit = LossWeights { shared_sigma: true, ..w };
        let expected = 5.0 * (-2.0 * s1).exp() * lns + 0.5 * (-2.0 * s1).exp() * lps + s1 + s2;
        prop_assert!((l_total(lns, lps, &lit) - expected).abs() <= 1e-9 * expected.abs().max(1.0));

        for w in [w, lit] {
            let g = l_total_grad(lns, lps, &w);
            let h = 1e-6;
            let fd1 = (l_total(lns, lps, &LossWeights { log_sigma1: s1 + h, ..w }) - l_total(lns, lps, &LossWeights { log_sigma1: s1 - h, ..w })) / (2.0 * h);
            let fd2 = (l_total(lns, lps, &LossWeights { log_sigma2: s2 + h, ..w }) - l_total(lns, lps, &LossWeights { log_sigma2: s2 - h, ..w })) / (2.0 * h);
            prop_assert!((g[0] - fd1).abs() <= 1e-5 * fd1.abs().max(1.0));
            prop_assert!((g[1] - fd2).abs() <= 1e-5 * fd2.abs().max(1.0));
        }
    }

    #[test]
    fn si_snr_ignores_scale(x in values(400), noise in values(400), gain in 0.01f64..100.0) {
        let r: Vec<f64> = x.iter().map(|v| v + 0.05).collect();
        let e: Vec<f64> = r.iter().zip(&noise).map(|(a, b)| a + 0.3 * b).collect();
        let scaled: Vec<f64> = e.iter().map(|v| v * gain).collect();
        let (a, b) = (si_snr(&e, &r).unwrap(), si_snr(&scaled, &r).unwrap());
        prop_assert!((a - b).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_scenes_obey_the_placement_rules(seed in any::<u64>()) {
        let cfg = SceneConfig::default();
        let scene = sample_scene(seed, &cfg).unwrap();
        prop_assert_eq!(&scene, &sample_scene(seed, &cfg).unwrap());
        let d = scene.room_dims;
        prop_assert!(cfg.room_length[0] <= d.x && d.x <= cfg.room_length[1]);
        prop_assert!(cfg.room_width[0] <= d.y && d.y <= cfg.room_width[1]);
        prop_assert!(cfg.room_height[0] <= d.z && d.z <= cfg.room_height[1]);
        prop_assert_eq!(scene.array.element_positions.len(), cfg.num_mics);
        for p in &scene.array.element_positions {
            prop_assert!(p.wall_clearance(d) >= cfg.array_wall_margin - 1e-9);
        }
        for (a, b) in scene.array.element_positions.iter().zip(&scene.array.element_positions[1..]) {
            prop_assert!((a.distance(*b) - cfg.mic_spacing).abs() < 1e-9);
        }
        prop_assert_eq!(scene.noise_pos.len(), cfg.num_noise_sources);
        for p in scene.source_positions() {
            let r = p.distance(scene.array.center);
            prop_assert!(cfg.source_distance[0] - 1e-9 <= r && r <= cfg.source_distance[1] + 1e-9, "distance {r}");
            prop_assert!(p.wall_clearance(d) >= cfg.source_wall_margin - 1e-9);
        }
        prop_assert!(cfg.rt60[0] <= scene.rt60 && scene.rt60 <= cfg.rt60[1]);
        prop_assert!(cfg.snr_db[0] <= scene.snr_db && scene.snr_db <= cfg.snr_db[1]);
        prop_assert!(cfg.peak[0] <= scene.target_peak && scene.target_peak <= cfg.peak[1]);
        let doa = scene.speech_doa_deg();
        prop_assert!((0.0..=180.0).contains(&doa));
    }
}
