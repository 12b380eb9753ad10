use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pooling used by the attention squeeze. Average (with its std companion) only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Average,
}

/// Architecture hyperparameters. Kernels are `(freq, time)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub num_mics: usize,
    pub freq_bins: usize,
    /// Nominal frame count; only sizes the time-branch attention kernel.
    pub frames: usize,
    pub encoder_kernels: [(usize, usize); 3],
    pub freq_stride: usize,
    /// Frequency zero padding per encoder stage (both sides).
    pub freq_pads: [usize; 3],
    /// Encoder output channels per stage.
    pub widths: [usize; 3],
    /// Channels of the last decoder stage, fed to the mask generator.
    pub decoder_channels: usize,
    pub dropout: f64,
    pub wt_kernel: usize,
    pub encoder_wt_levels: [usize; 3],
    /// Decoder stages in execution order (deepest first).
    pub decoder_wt_levels: [usize; 3],
    pub conformer_dim: usize,
    pub heads: usize,
    pub ffn_expansion: usize,
    pub conformer_kernel: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    /// `K` in `K tanh(.)` on the mask head; none = unbounded.
    pub mask_compression: Option<f64>,
    pub mca_pooling: Pooling,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_mics: 8,
            freq_bins: 161,
            frames: 401,
            encoder_kernels: [(6, 2), (7, 2), (7, 2)],
            freq_stride: 2,
            freq_pads: [2, 2, 3],
            widths: [24, 48, 64],
            decoder_channels: 16,
            dropout: 0.2,
            wt_kernel: 5,
            encoder_wt_levels: [2, 1, 1],
            decoder_wt_levels: [1, 1, 2],
            conformer_dim: 64,
            heads: 4,
            ffn_expansion: 4,
            conformer_kernel: 31,
            lstm_hidden: 210,
            lstm_layers: 2,
            mask_compression: None,
            mca_pooling: Pooling::Average,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_mics == 0 || self.freq_bins == 0 || self.frames == 0 {
            return bad("mics, bins and frames must be positive".into());
        }
        if self.widths.contains(&0) || self.decoder_channels == 0 || self.conformer_dim == 0 || self.lstm_hidden == 0 {
            return bad(format!("widths must be positive: {:?}, decoder {}", self.widths, self.decoder_channels));
        }
        if self.heads == 0 || self.conformer_dim % self.heads != 0 {
            return bad(format!("{} heads do not divide conformer dim {}", self.heads, self.conformer_dim));
        }
        if self.conformer_dim != self.widths[2] {
            return bad(format!(
                "conformer dim {} must equal the last encoder width {}",
                self.conformer_dim, self.widths[2]
            ));
        }
        if self.wt_kernel % 2 == 0 || self.conformer_kernel % 2 == 0 {
            return bad("wavelet and conformer kernels must be odd".into());
        }
        if self.encoder_kernels.iter().any(|&(kf, kt)| kf == 0 || kt == 0) || self.freq_stride == 0 {
            return bad("kernels and stride must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.lstm_layers == 0 || self.ffn_expansion == 0 {
            return bad("lstm layers and ffn expansion must be positive".into());
        }
        if let Some(k) = self.mask_compression {
            if !(k > 0.0 && k.is_finite()) {
                return bad(format!("mask compression {k} must be positive"));
            }
        }
        Ok(())
    }
}
