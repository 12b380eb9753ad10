//! Time-frequency front-end: multichannel waveforms, STFT/iSTFT with a
//! reflect-padded Hann analysis, real/imaginary packing for the network input,
//! and the file formats that carry audio and spectrograms between tools.

mod container;
mod stft;
mod wav;

pub use container::{read_complex_tensor, read_spectrogram, write_complex_tensor, write_spectrogram, ComplexTensor};
pub use stft::{hann_window, istft, pack_ri, stft, unpack_ri, Spectrogram, StftParams};
pub use wav::{read_audio, read_wav, write_wav};

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Sample rate used throughout the lab.
pub const SAMPLE_RATE: u32 = 16_000;

/// An `M x N` block of real samples plus its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelWaveform {
    samples: Array2<f64>,
    sample_rate: u32,
}

impl MultichannelWaveform {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        let (channels, len) = samples.dim();
        if channels == 0 || len == 0 {
            return Err(Error::InvalidWaveform(format!(
                "waveform must have at least one channel and one sample, got {channels}x{len}"
            )));
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidWaveform(format!(
                "non-finite sample at flat index {pos}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let len = samples.len();
        let samples = Array2::from_shape_vec((1, len), samples)
            .map_err(|e| Error::InvalidWaveform(e.to_string()))?;
        Self::new(samples, sample_rate)
    }

    pub fn zeros(channels: usize, len: usize, sample_rate: u32) -> Self {
        Self {
            samples: Array2::zeros((channels.max(1), len.max(1))),
            sample_rate,
        }
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }

    pub fn channel(&self, m: usize) -> ArrayView1<'_, f64> {
        self.samples.row(m)
    }

    pub fn num_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Single channel `m` as its own waveform.
    pub fn select_channel(&self, m: usize) -> Self {
        let row = self.samples.row(m).to_owned();
        let len = row.len();
        Self {
            samples: row.into_shape_with_order((1, len)).expect("row reshape"),
            sample_rate: self.sample_rate,
        }
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: &self.samples * gain,
            sample_rate: self.sample_rate,
        }
    }
}
