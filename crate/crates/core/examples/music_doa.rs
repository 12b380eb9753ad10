//! Wideband MUSIC on an anechoic single-source scene; writes the spectrum as
//! CSV and a PGM heatmap.

use wtformer_lab::scene::synth::NoiseKind;
use wtformer_lab::scene::{simulate_synthetic, RirOptions, SceneConfig};
use wtformer_lab::spatial::{music_spectrum, MusicConfig};

fn main() -> wtformer_lab::Result<()> {
    let config = SceneConfig {
        snr_db: [20.0, 20.0],
        ..SceneConfig::default()
    };
    let ex = simulate_synthetic(3, &config, NoiseKind::White, &RirOptions::anechoic())?;
    let spectrum = music_spectrum(&ex.target_early, &MusicConfig::default())?;
    println!("spectrum {:?} (bands x angles)", spectrum.shape());
    println!("true doa {:.2} deg, peak {:.1} deg", ex.scene.speech_doa_deg(), spectrum.peak_angle_deg());

    let dir = std::env::temp_dir();
    spectrum.write_csv(&dir.join("music.csv"))?;
    spectrum.write_pgm(&dir.join("music.pgm"))?;
    println!("wrote {}", dir.join("music.pgm").display());
    Ok(())
}
