//! Deterministic synthetic sources so scenes can be rendered without an
//! external corpus: a formant-filtered pulse-train "speech", white and pink
//! noise, and babble built from several synthetic talkers.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::signal::SAMPLE_RATE;

const TARGET_RMS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Pink,
    Babble,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble];

    pub fn generate(self, seed: u64, len: usize) -> Vec<f64> {
        match self {
            NoiseKind::White => white_noise(seed, len),
            NoiseKind::Pink => pink_noise(seed, len),
            NoiseKind::Babble => babble(seed, len, 4),
        }
    }
}

fn normalize(mut x: Vec<f64>) -> Vec<f64> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        let g = TARGET_RMS / rms;
        x.iter_mut().for_each(|v| *v *= g);
    }
    x
}

/// Two-pole resonator with unit peak gain at `freq`.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64) -> Self {
        let fs = f64::from(SAMPLE_RATE);
        let r = (-PI * bandwidth / fs).exp();
        let theta = 2.0 * PI * freq / fs;
        Self {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            gain: 1.0 - r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn envelope(n: usize, len: usize) -> f64 {
    let ramp = (0.02 * f64::from(SAMPLE_RATE)) as usize;
    let ramp = ramp.min(len / 2).max(1);
    let edge = n.min(len - 1 - n);
    if edge >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
    }
}

/// Speech-like signal: voiced syllables, fricatives and pauses.
pub fn speech(seed: u64, len: usize) -> Vec<f64> {
    let fs = f64::from(SAMPLE_RATE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eec);
    let mut out = Vec::with_capacity(len + 8000);
    let speaker_f0: f64 = rng.gen_range(90.0..220.0);
    while out.len() < len {
        let kind: f64 = rng.gen();
        if kind < 0.6 {
            let dur = (rng.gen_range(0.12..0.35) * fs) as usize;
            let f0_start = speaker_f0 * rng.gen_range(0.85..1.15);
            let f0_end = f0_start * rng.gen_range(0.8..1.2);
            let formants = [
                (rng.gen_range(300.0..900.0), 80.0),
                (rng.gen_range(900.0..2500.0), 120.0),
                (rng.gen_range(2200.0..3500.0), 180.0),
                (rng.gen_range(3500.0..4800.0), 250.0),
            ];
            let mut filters: Vec<Resonator> = formants.iter().map(|&(f, b)| Resonator::new(f, b)).collect();
            let mut phase = 0.0;
            for n in 0..dur {
                let f0 = f0_start + (f0_end - f0_start) * n as f64 / dur as f64;
                phase += f0 / fs;
                let pulse = if phase >= 1.0 {
                    phase -= 1.0;
                    1.0
                } else {
                    0.0
                };
                let breath: f64 = rng.sample::<f64, _>(StandardNormal) * 0.02;
                let mut y = pulse + breath;
                let mut acc = 0.0;
                for (i, f) in filters.iter_mut().enumerate() {
                    y = f.process(y);
                    acc += y * [1.0, 0.7, 0.4, 0.25][i];
                    y = pulse + breath;
                }
                out.push(acc * envelope(n, dur));
            }
        } else if kind < 0.75 {
            let dur = (rng.gen_range(0.06..0.15) * fs) as usize;
            let mut f = Resonator::new(rng.gen_range(2500.0..6000.0), 1500.0);
            let level = rng.gen_range(0.05..0.15);
            for n in 0..dur {
                let w: f64 = rng.sample(StandardNormal);
                out.push(f.process(w) * level * envelope(n, dur));
            }
        } else {
            let dur = (rng.gen_range(0.04..0.2) * fs) as usize;
            for _ in 0..dur {
                let w: f64 = rng.sample(StandardNormal);
                out.push(w * 1e-4);
            }
        }
    }
    out.truncate(len);
    normalize(out)
}

pub fn white_noise(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0ddba11);
    normalize((0..len).map(|_| rng.sample(StandardNormal)).collect())
}

/// Pink noise via Paul Kellet's economy filter.
pub fn pink_noise(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    let out = (0..len)
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect();
    normalize(out)
}

pub fn babble(seed: u64, len: usize, talkers: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for k in 0..talkers.max(1) {
        for (a, v) in acc.iter_mut().zip(speech(seed.wrapping_mul(31).wrapping_add(k as u64 + 1), len)) {
            *a += v;
        }
    }
    normalize(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn generators_are_deterministic_and_normalized() {
        for kind in NoiseKind::ALL {
            let a = kind.generate(5, 16_000);
            assert_eq!(a, kind.generate(5, 16_000));
            assert_ne!(a, kind.generate(6, 16_000));
            assert!((rms(&a) - TARGET_RMS).abs() < 1e-12);
        }
        let s = speech(1, 64_000);
        assert_eq!(s.len(), 64_000);
        assert!((rms(&s) - TARGET_RMS).abs() < 1e-12);
        assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn speech_has_pauses_and_high_band_energy() {
        let s = speech(2, 64_000);
        let frame_rms: Vec<f64> = s.chunks(320).map(rms).collect();
        let max = frame_rms.iter().copied().fold(0.0, f64::max);
        assert!(frame_rms.iter().any(|&r| r < max * 1e-2), "expected silent gaps");
        // First difference emphasizes high frequencies; it must not vanish.
        let diff: Vec<f64> = s.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(rms(&diff) > 0.05 * rms(&s));
    }
}
