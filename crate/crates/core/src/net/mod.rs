//! WTFormer network: Haar wavelet convolutions, encoder/decoder blocks,
//! TF-Conformer bottleneck, multi-dimensional collaborative attention on the
//! skips, and the LSTM mask generator. Everything runs in f64.

mod blocks;
mod checkpoint;
mod conformer;
mod config;
mod haar;
mod mask;
mod mca;
mod model;
mod ops;
mod wtconv;

pub use blocks::{StageSpec, TransWtBlock, WtBlock};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointEntry};
pub use conformer::{ConformerBlock, ConformerTrace, TfConformer};
pub use config::{ModelConfig, Pooling};
pub use haar::{haar_dwt2, haar_idwt2, Subbands};
pub use mask::{apply_cirm, cirm_tail_backward, cirm_tail_forward, CirmTailGrads, ComplexMask, Lstm, LstmLayer, MaskGenerator, MaskHead};
pub use mca::{excitation_kernel, Branch, Mca, McaCache, McaGrads};
pub use model::{ModuleCount, ParamCount, WtFormer};
pub use ops::{BatchNorm, Conv2d, ConvTranspose2d, DepthwiseConv2d, DepthwiseGrads, LayerNorm, Linear, PRelu};
pub use wtconv::{max_levels, WtConv, WtConvCache, WtConvGrads, WAVELET_SCALE_INIT};

use ndarray::Array4;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `[batch, channels, frequency, time]`.
pub type FeatureTensor = Array4<f64>;

/// Read-only parameter visitor: `(name, shape, values, trainable)`.
pub type ParamSink<'a> = dyn FnMut(&str, &[usize], &[f64], bool) + 'a;
/// Mutable parameter visitor.
pub type ParamSinkMut<'a> = dyn FnMut(&str, &[usize], &mut [f64], bool) + 'a;

/// Mode and randomness for one forward call.
#[derive(Debug, Clone)]
pub struct ForwardCtx {
    pub train: bool,
    rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Training mode; dropout masks come from `seed`.
    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Inverted dropout in place. No-op in eval mode.
    pub fn dropout(&mut self, x: &mut [f64], p: f64) {
        if !self.train || p <= 0.0 {
            return;
        }
        let keep = 1.0 - p;
        for v in x.iter_mut() {
            *v = if self.rng.gen::<f64>() < keep { *v / keep } else { 0.0 };
        }
    }
}
