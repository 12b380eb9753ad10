//! Interaural cue errors for a few controlled distortions of a target.

use wtformer_lab::scene::synth::NoiseKind;
use wtformer_lab::scene::{simulate_synthetic, RirOptions, SceneConfig};
use wtformer_lab::signal::MultichannelWaveform;
use wtformer_lab::spatial::cue_deltas;

fn main() -> wtformer_lab::Result<()> {
    let ex = simulate_synthetic(5, &SceneConfig::default(), NoiseKind::Pink, &RirOptions::default())?;
    let clean = &ex.target_early;

    let mut louder_left = clean.samples().clone();
    for m in 0..4 {
        louder_left.row_mut(m).mapv_inplace(|v| 2.0 * v);
    }
    let mut delayed = clean.samples().clone();
    for m in 4..8 {
        let row: Vec<f64> = clean.channel(m).to_vec();
        for (n, v) in delayed.row_mut(m).iter_mut().enumerate() {
            *v = if n >= 2 { row[n - 2] } else { 0.0 };
        }
    }
    let cases = [
        ("identical", clean.clone()),
        ("x2 on mics 1-4", MultichannelWaveform::new(louder_left, clean.sample_rate())?),
        ("2-sample delay on 5-8", MultichannelWaveform::new(delayed, clean.sample_rate())?),
        ("noisy mixture", ex.mixture.clone()),
    ];
    println!("{:<24} {:>10} {:>10} {:>10}", "case", "dITD us", "dIPD rad", "dILD dB");
    for (name, enh) in cases {
        let r = cue_deltas(&enh, clean)?;
        println!("{name:<24} {:>10.2} {:>10.4} {:>10.3}", r.delta_itd_us, r.delta_ipd_rad, r.delta_ild_db);
    }
    Ok(())
}
