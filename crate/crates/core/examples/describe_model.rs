//! Builds the default network and prints its parameter table.

use wtformer_lab::net::{ModelConfig, WtFormer};

fn main() -> wtformer_lab::Result<()> {
    let model = WtFormer::new(&ModelConfig::default())?;
    print!("{}", model.param_count().table());
    Ok(())
}
