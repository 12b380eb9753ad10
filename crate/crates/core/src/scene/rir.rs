//! Allen-Berkley image method for shoebox rooms with windowed-sinc
//! fractional delays.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};

use super::{RoomScene, Vec3, SPEED_OF_SOUND};
use crate::signal::SAMPLE_RATE;

/// Taps of the fractional-delay interpolator (odd, centered on the arrival).
pub const SINC_TAPS: usize = 81;
const HALF_TAPS: usize = SINC_TAPS / 2;
const HIGHPASS_HZ: f64 = 80.0;

/// Wall reflection model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Absorption {
    /// Uniform absorption inverted from the scene RT60 with Sabine's formula.
    FromRt60,
    /// No reflections at all.
    Anechoic,
    /// Fixed pressure reflection coefficient for every wall.
    Reflection(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RirOptions {
    pub absorption: Absorption,
    /// Allen-Berkley 80 Hz high-pass on the final response.
    pub highpass: bool,
    /// Response length in samples; defaults to 1.25 x RT60.
    pub length: Option<usize>,
}

impl Default for RirOptions {
    fn default() -> Self {
        Self {
            absorption: Absorption::FromRt60,
            highpass: true,
            length: None,
        }
    }
}

impl RirOptions {
    pub fn anechoic() -> Self {
        Self {
            absorption: Absorption::Anechoic,
            ..Self::default()
        }
    }
}

/// Impulse responses `[mic, source, sample]`; source 0 is the speech source.
#[derive(Debug, Clone, PartialEq)]
pub struct RirSet {
    pub responses: Array3<f64>,
    pub sample_rate: u32,
    /// Direct-path arrival `[mic, source]` in samples.
    pub direct_path_index: Array2<usize>,
}

impl RirSet {
    pub fn num_mics(&self) -> usize {
        self.responses.dim().0
    }

    pub fn num_sources(&self) -> usize {
        self.responses.dim().1
    }

    pub fn len(&self) -> usize {
        self.responses.dim().2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn response(&self, mic: usize, source: usize) -> Vec<f64> {
        self.responses.slice(ndarray::s![mic, source, ..]).to_vec()
    }
}

/// Wall reflection coefficient giving `rt60` in the room (Sabine).
pub fn sabine_reflection(room: Vec3, rt60: f64) -> f64 {
    let volume = room.x * room.y * room.z;
    let surface = 2.0 * (room.x * room.y + room.x * room.z + room.y * room.z);
    let alpha = (24.0 * std::f64::consts::LN_10 * volume / (SPEED_OF_SOUND * surface * rt60)).min(1.0);
    (1.0 - alpha).sqrt()
}

/// Image positions along one axis: (offset from the receiver, reflection count).
fn axis_images(source: f64, receiver: f64, extent: f64, reach: f64) -> Vec<(f64, i32)> {
    let n = (reach / (2.0 * extent)).ceil() as i32 + 1;
    let mut out = Vec::with_capacity((4 * n + 2) as usize);
    for m in -n..=n {
        for q in 0..=1 {
            let image = (1 - 2 * q) as f64 * source + 2.0 * m as f64 * extent;
            let offset = image - receiver;
            if offset.abs() <= reach {
                out.push((offset, (m - q).abs() + m.abs()));
            }
        }
    }
    out
}

/// Adds a windowed-sinc impulse of `amplitude` arriving at fractional sample `tau`.
fn add_fractional_impulse(out: &mut [f64], tau: f64, amplitude: f64) {
    let base = tau.floor();
    let frac = tau - base;
    let base = base as isize;
    // sin(pi (k - frac)) = -(-1)^k sin(pi frac)
    let sin_frac = (PI * frac).sin();
    let width = (HALF_TAPS + 1) as f64;
    let step = PI / width;
    let start = -(HALF_TAPS as f64) - frac;
    let (mut c, mut s) = ((start * step).cos(), (start * step).sin());
    let (dc, ds) = (step.cos(), step.sin());
    for k in -(HALF_TAPS as isize)..=HALF_TAPS as isize {
        let idx = base + k;
        let u = k as f64 - frac;
        if idx >= 0 && (idx as usize) < out.len() {
            let sinc = if u.abs() < 1e-12 {
                1.0
            } else {
                let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
                sign * sin_frac / (PI * u)
            };
            let window = 0.5 * (1.0 + c);
            out[idx as usize] += amplitude * window * sinc;
        }
        let nc = c * dc - s * ds;
        s = s * dc + c * ds;
        c = nc;
    }
}

fn highpass(x: &mut [f64]) {
    let w = 2.0 * PI * HIGHPASS_HZ / f64::from(SAMPLE_RATE);
    let r1 = (-w).exp();
    let b1 = 2.0 * r1 * w.cos();
    let b2 = -r1 * r1;
    let a1 = -(1.0 + r1);
    let mut y = [0.0; 3];
    for v in x.iter_mut() {
        y[2] = y[1];
        y[1] = y[0];
        y[0] = b1 * y[1] + b2 * y[2] + *v;
        *v = y[0] + a1 * y[1] + r1 * y[2];
    }
}

/// Point-to-point response from `source` to `receiver`.
pub fn image_method_response(
    room: Vec3,
    source: Vec3,
    receiver: Vec3,
    beta: f64,
    len: usize,
    apply_highpass: bool,
) -> Vec<f64> {
    let fs = f64::from(SAMPLE_RATE);
    let mut out = vec![0.0; len];
    let reach = (len + HALF_TAPS) as f64 * SPEED_OF_SOUND / fs;
    let (xs, ys, zs) = if beta == 0.0 {
        (
            vec![(source.x - receiver.x, 0)],
            vec![(source.y - receiver.y, 0)],
            vec![(source.z - receiver.z, 0)],
        )
    } else {
        (
            axis_images(source.x, receiver.x, room.x, reach),
            axis_images(source.y, receiver.y, room.y, reach),
            axis_images(source.z, receiver.z, room.z, reach),
        )
    };
    let max_order = xs.iter().chain(&ys).chain(&zs).map(|p| p.1).max().unwrap_or(0) * 3;
    let beta_pow: Vec<f64> = (0..=max_order).map(|k| beta.powi(k)).collect();
    let reach2 = reach * reach;
    let samples_per_meter = fs / SPEED_OF_SOUND;
    for &(dx, nx) in &xs {
        for &(dy, ny) in &ys {
            let dxy2 = dx * dx + dy * dy;
            if dxy2 > reach2 {
                continue;
            }
            for &(dz, nz) in &zs {
                let d2 = dxy2 + dz * dz;
                if d2 > reach2 {
                    continue;
                }
                let gain = beta_pow[(nx + ny + nz) as usize];
                if gain == 0.0 {
                    continue;
                }
                let d = d2.sqrt();
                add_fractional_impulse(&mut out, d * samples_per_meter, gain / (4.0 * PI * d));
            }
        }
    }
    if apply_highpass {
        highpass(&mut out);
    }
    out
}

/// Responses from every source of `scene` to every array element.
pub fn simulate_rir(scene: &RoomScene, options: &RirOptions) -> RirSet {
    let fs = f64::from(SAMPLE_RATE);
    let mics = &scene.array.element_positions;
    let sources = scene.source_positions();
    let beta = match options.absorption {
        Absorption::FromRt60 => sabine_reflection(scene.room_dims, scene.rt60),
        Absorption::Anechoic => 0.0,
        Absorption::Reflection(b) => b.clamp(0.0, 1.0),
    };
    let direct = Array2::from_shape_fn((mics.len(), sources.len()), |(m, s)| {
        (mics[m].distance(sources[s]) / SPEED_OF_SOUND * fs).round() as usize
    });
    let max_direct = direct.iter().copied().max().unwrap_or(0);
    let len = options.length.unwrap_or_else(|| {
        let tail = if beta == 0.0 { 0 } else { (1.25 * scene.rt60 * fs).ceil() as usize };
        tail.max(max_direct + 2 * SINC_TAPS)
    });

    let mut responses = Array3::zeros((mics.len(), sources.len(), len));
    for (m, &mic) in mics.iter().enumerate() {
        for (s, &src) in sources.iter().enumerate() {
            let h = image_method_response(scene.room_dims, src, mic, beta, len, options.highpass);
            responses
                .slice_mut(ndarray::s![m, s, ..])
                .assign(&ndarray::ArrayView1::from(&h));
        }
    }
    RirSet {
        responses,
        sample_rate: SAMPLE_RATE,
        direct_path_index: direct,
    }
}

/// Splits each response at `boundary_ms` after its direct arrival. The early
/// part keeps the full interpolation kernel of the direct path, so it starts
/// `SINC_TAPS / 2 + 1` samples before the rounded arrival.
pub fn split_early_late(rir: &RirSet, boundary_ms: f64) -> (RirSet, RirSet) {
    let boundary = (boundary_ms * 1e-3 * f64::from(rir.sample_rate)).round() as usize;
    let mut early = rir.clone();
    let mut late = rir.clone();
    let (mics, sources, len) = rir.responses.dim();
    for m in 0..mics {
        for s in 0..sources {
            let d = rir.direct_path_index[[m, s]];
            let start = d.saturating_sub(HALF_TAPS + 1);
            let end = (d + boundary).min(len);
            for n in 0..len {
                if n >= start && n < end {
                    late.responses[[m, s, n]] = 0.0;
                } else {
                    early.responses[[m, s, n]] = 0.0;
                }
            }
        }
    }
    (early, late)
}

/// Schroeder energy decay curve in dB relative to total energy.
pub fn schroeder_decay_db(h: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = h
        .iter()
        .rev()
        .map(|v| {
            acc += v * v;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    edc.iter().map(|e| 10.0 * (e / total).max(1e-300).log10()).collect()
}
