//! Analysis/synthesis of a 4 s, 8-channel signal at 20 ms / 10 ms.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wtformer_lab::signal::{istft, pack_ri, stft, MultichannelWaveform, StftParams, SAMPLE_RATE};

fn main() -> wtformer_lab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Array2::from_shape_simple_fn((8, 64_000), || rng.gen_range(-0.5..0.5));
    let wave = MultichannelWaveform::new(x, SAMPLE_RATE)?;
    let spec = stft(&wave, &StftParams::default())?;
    println!("spectrogram shape {:?}", spec.shape());
    println!("packed network input {:?}", pack_ri(&spec).dim());

    let back = istft(&spec)?;
    let err = (back.samples() - wave.samples()).mapv(|v| v * v).sum().sqrt();
    let norm = wave.samples().mapv(|v| v * v).sum().sqrt();
    println!("relative L2 reconstruction error {:.3e}", err / norm);
    Ok(())
}
