//! Saves a small network to the f32 checkpoint format and loads it back.

use wtformer_lab::net::{load_checkpoint, save_checkpoint, ModelConfig, WtFormer};

fn main() -> wtformer_lab::Result<()> {
    let config = ModelConfig {
        num_mics: 2,
        freq_bins: 33,
        frames: 12,
        widths: [4, 6, 8],
        decoder_channels: 4,
        conformer_dim: 8,
        lstm_hidden: 6,
        ..ModelConfig::default()
    };
    let model = WtFormer::new(&config)?;
    let path = std::env::temp_dir().join("wtformer_small.bin");
    save_checkpoint(&model, &path)?;

    let mut other = WtFormer::new(&ModelConfig { seed: 1, ..config })?;
    load_checkpoint(&mut other, &path)?;
    println!("{} parameters restored from {}", other.num_params(), path.display());
    print!("{}", other.param_count().table());
    Ok(())
}
