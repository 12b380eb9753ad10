//! Time-invariant and mask-based MVDR with oracle statistics on one scene.

use wtformer_lab::beamform::{mb_mvdr, ti_mvdr, TiSteering};
use wtformer_lab::scene::synth::NoiseKind;
use wtformer_lab::scene::{simulate_synthetic, RirOptions, SceneConfig};
use wtformer_lab::signal::{istft, stft, StftParams};
use wtformer_lab::spatial::si_snr;

fn main() -> wtformer_lab::Result<()> {
    let config = SceneConfig {
        snr_db: [0.0, 0.0],
        ..SceneConfig::default()
    };
    let ex = simulate_synthetic(11, &config, NoiseKind::Babble, &RirOptions::default())?;
    let params = StftParams::default();
    let mix = stft(&ex.mixture, &params)?;
    let tgt = stft(&ex.target_early, &params)?;
    let reference = ex.target_early.channel(0).to_vec();
    println!("noisy   {:6.2} dB", si_snr(&ex.mixture.channel(0).to_vec(), &reference)?);

    for (name, out) in [
        ("ti-mvdr", ti_mvdr(&mix, &tgt, TiSteering::OracleRtf)?),
        ("mb-mvdr", mb_mvdr(&mix, &tgt)?),
    ] {
        let y = istft(&out.enhanced)?;
        // Distortionless response toward the steering vector.
        let worst = (0..out.weights.weights.nrows())
            .map(|f| {
                let w = out.weights.weights.row(f);
                let a = out.steering.row(f);
                (w.iter().zip(a).map(|(w, a)| w.conj() * a).sum::<num_complex::Complex64>() - 1.0).norm()
            })
            .fold(0.0, f64::max);
        println!("{name} {:6.2} dB   max |w^H a - 1| = {worst:.1e}", si_snr(&y.channel(0).to_vec(), &reference)?);
    }
    Ok(())
}
