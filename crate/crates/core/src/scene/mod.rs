//! Acoustic scene simulation: shoebox rooms with a rotated 8-element uniform
//! linear array, image-method room impulse responses, and rendering of
//! reverberant-noisy mixtures together with their early-reverberation targets.

mod geometry;
mod manifest;
mod render;
mod rir;
mod sample;
pub mod synth;

pub use geometry::{ArrayGeometry, Vec3};
pub use manifest::{
    build_manifest, collect_corpus, read_manifest, write_manifest, DatasetConfig, ManifestRow, Split,
};
pub use render::{fft_convolve, render_mixture, render_with_rirs, MixtureComponents, MixtureExample, REFERENCE_MIC};
pub use rir::{schroeder_decay_db, simulate_rir, split_early_late, Absorption, RirOptions, RirSet};
pub use sample::sample_scene;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Ranges and constants for scene sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub room_length: [f64; 2],
    pub room_width: [f64; 2],
    pub room_height: [f64; 2],
    /// Minimum distance from every microphone to every wall (m).
    pub array_wall_margin: f64,
    pub num_mics: usize,
    pub mic_spacing: f64,
    pub rotate_array: bool,
    pub source_distance: [f64; 2],
    pub source_wall_margin: f64,
    pub num_noise_sources: usize,
    pub rt60: [f64; 2],
    pub snr_db: [f64; 2],
    /// Range of the mixture peak after the final shared gain.
    pub peak: [f64; 2],
    pub early_ms: f64,
    pub chunk_seconds: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            room_length: [5.0, 10.0],
            room_width: [5.0, 10.0],
            room_height: [3.0, 4.0],
            array_wall_margin: 1.0,
            num_mics: 8,
            mic_spacing: 0.04,
            rotate_array: true,
            source_distance: [0.75, 2.0],
            source_wall_margin: 0.5,
            num_noise_sources: 1,
            rt60: [0.3, 0.7],
            snr_db: [-5.0, 20.0],
            peak: [0.2, 0.9],
            early_ms: 50.0,
            chunk_seconds: 4.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("room_length", self.room_length),
            ("room_width", self.room_width),
            ("room_height", self.room_height),
            ("source_distance", self.source_distance),
            ("rt60", self.rt60),
            ("snr_db", self.snr_db),
            ("peak", self.peak),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidConfig(format!("{name} range [{lo}, {hi}] is degenerate")));
            }
        }
        if self.num_mics < 2 || self.mic_spacing <= 0.0 {
            return Err(Error::InvalidConfig("array needs >= 2 mics and positive spacing".into()));
        }
        if self.rt60[0] <= 0.0 || self.source_distance[0] <= 0.0 || self.peak[0] <= 0.0 {
            return Err(Error::InvalidConfig(
                "rt60, source distance and peak ranges must be positive".into(),
            ));
        }
        if self.early_ms <= 0.0 || self.chunk_seconds <= 0.0 {
            return Err(Error::InvalidConfig("early_ms and chunk_seconds must be positive".into()));
        }
        Ok(())
    }

    pub fn chunk_len(&self) -> usize {
        (self.chunk_seconds * f64::from(crate::signal::SAMPLE_RATE)).round() as usize
    }

    fn half_aperture(&self) -> f64 {
        0.5 * (self.num_mics - 1) as f64 * self.mic_spacing
    }
}

/// Samples scene `seed` and renders it with synthetic speech and `noise`.
pub fn simulate_synthetic(seed: u64, config: &SceneConfig, noise: synth::NoiseKind, rir: &RirOptions) -> Result<MixtureExample> {
    config.validate()?;
    let scene = sample_scene(seed, config)?;
    let len = config.chunk_len();
    let speech = synth::speech(seed, len);
    let noises: Vec<Vec<f64>> = (0..scene.noise_pos.len())
        .map(|k| noise.generate(seed.wrapping_mul(31).wrapping_add(1 + k as u64), len))
        .collect();
    let refs: Vec<&[f64]> = noises.iter().map(Vec::as_slice).collect();
    render_mixture(&scene, &speech, &refs, len, rir)
}

/// One sampled acoustic configuration; everything needed to regenerate a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomScene {
    pub seed: u64,
    pub room_dims: Vec3,
    pub array: ArrayGeometry,
    pub speech_pos: Vec3,
    pub noise_pos: Vec<Vec3>,
    pub rt60: f64,
    pub snr_db: f64,
    /// Mixture peak after scaling, drawn from `SceneConfig::peak`.
    pub target_peak: f64,
    pub early_ms: f64,
}

impl RoomScene {
    /// Broadside-referenced direction of arrival of the speech source (degrees).
    pub fn speech_doa_deg(&self) -> f64 {
        self.array.doa_deg(self.speech_pos)
    }

    /// Speech source first, then noise sources: the order used by [`RirSet`].
    pub fn source_positions(&self) -> Vec<Vec3> {
        std::iter::once(self.speech_pos)
            .chain(self.noise_pos.iter().copied())
            .collect()
    }
}
