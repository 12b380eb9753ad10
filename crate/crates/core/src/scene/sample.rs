use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ArrayGeometry, RoomScene, SceneConfig, Vec3};
use crate::error::{Error, Result};

const MAX_PLACEMENT_TRIES: usize = 10_000;

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Draws a room, a randomly placed and rotated array, and speech/noise
/// sources obeying the distance and wall-clearance rules. Deterministic in `seed`.
pub fn sample_scene(seed: u64, config: &SceneConfig) -> Result<RoomScene> {
    config.validate()?;
    let array_margin = config.array_wall_margin + config.half_aperture();
    // Worst case: the smallest room must still leave room for the array center.
    for (name, [lo, _]) in [
        ("length", config.room_length),
        ("width", config.room_width),
        ("height", config.room_height),
    ] {
        if lo <= 2.0 * array_margin {
            return Err(Error::InfeasibleScene(format!(
                "room {name} {lo} m cannot keep every microphone {} m from both walls",
                config.array_wall_margin
            )));
        }
    }
    if config.source_wall_margin * 2.0 >= config.room_height[0] {
        return Err(Error::InfeasibleScene(format!(
            "room height {} m cannot keep sources {} m from floor and ceiling",
            config.room_height[0], config.source_wall_margin
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let room = Vec3::new(
        uniform(&mut rng, config.room_length),
        uniform(&mut rng, config.room_width),
        uniform(&mut rng, config.room_height),
    );
    let center = Vec3::new(
        uniform(&mut rng, [array_margin, room.x - array_margin]),
        uniform(&mut rng, [array_margin, room.y - array_margin]),
        uniform(&mut rng, [array_margin, room.z - array_margin]),
    );
    let rotation = if config.rotate_array {
        [
            rng.gen_range(-PI..PI),
            rng.gen_range(-PI..PI),
            rng.gen_range(-PI..PI),
        ]
    } else {
        [0.0; 3]
    };
    let array = ArrayGeometry::new(config.num_mics, config.mic_spacing, center, rotation);

    let place = |rng: &mut ChaCha8Rng, what: &str| -> Result<Vec3> {
        for _ in 0..MAX_PLACEMENT_TRIES {
            let r = uniform(rng, config.source_distance);
            let p = center + unit_vector(rng) * r;
            if p.wall_clearance(room) >= config.source_wall_margin {
                return Ok(p);
            }
        }
        Err(Error::InfeasibleScene(format!(
            "could not place the {what} source {:?} m from the array and {} m from the walls",
            config.source_distance, config.source_wall_margin
        )))
    };
    let speech_pos = place(&mut rng, "speech")?;
    let noise_pos = (0..config.num_noise_sources)
        .map(|_| place(&mut rng, "noise"))
        .collect::<Result<Vec<_>>>()?;

    Ok(RoomScene {
        seed,
        room_dims: room,
        array,
        speech_pos,
        noise_pos,
        rt60: uniform(&mut rng, config.rt60),
        snr_db: uniform(&mut rng, config.snr_db),
        target_peak: uniform(&mut rng, config.peak),
        early_ms: config.early_ms,
    })
}
