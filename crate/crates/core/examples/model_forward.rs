//! Random-init forward pass on a simulated 4 s, 8-channel mixture.

use std::time::Instant;

use wtformer_lab::net::{ForwardCtx, ModelConfig, WtFormer};
use wtformer_lab::scene::synth::NoiseKind;
use wtformer_lab::scene::{simulate_synthetic, RirOptions, SceneConfig};
use wtformer_lab::signal::{stft, StftParams};

fn main() -> wtformer_lab::Result<()> {
    let mix = simulate_synthetic(3, &SceneConfig::default(), NoiseKind::Pink, &RirOptions::default())?.mixture;
    let noisy = stft(&mix, &StftParams::default())?;
    let model = WtFormer::new(&ModelConfig::default())?;
    let start = Instant::now();
    let (enhanced, mask) = model.forward(&noisy, &mut ForwardCtx::eval())?;
    println!("input    {:?}", noisy.shape());
    println!("mask     {:?} finite={}", mask.shape(), mask.is_finite());
    println!("enhanced {:?}", enhanced.shape());
    println!("forward  {:.2} s", start.elapsed().as_secs_f64());
    Ok(())
}
