//! Flat binary container for complex 3-D tensors.
//!
//! Layout (all little-endian): 4-byte magic `CTNS`, then `u32` dims
//! `M, F, T`, then `M*F*T` pairs of `f32` (re, im) in row-major `[m][f][t]`
//! order.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use num_complex::Complex64;

use super::{Spectrogram, StftParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CTNS";

pub type ComplexTensor = Array3<Complex64>;

pub fn write_complex_tensor(path: impl AsRef<Path>, tensor: &ComplexTensor) -> Result<()> {
    let path = path.as_ref();
    let (a, b, c) = tensor.dim();
    let mut bytes = Vec::with_capacity(16 + tensor.len() * 8);
    bytes.extend_from_slice(MAGIC);
    for d in [a, b, c] {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in tensor.iter() {
        bytes.extend_from_slice(&(v.re as f32).to_le_bytes());
        bytes.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_complex_tensor(path: impl AsRef<Path>) -> Result<ComplexTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: String| Error::Malformed {
        what: "tensor container",
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(malformed("missing CTNS header".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (a, b, c) = (dim(0), dim(1), dim(2));
    let expected = 16 + a * b * c * 8;
    if bytes.len() != expected {
        return Err(malformed(format!(
            "{} bytes for a {a}x{b}x{c} tensor (expected {expected})",
            bytes.len()
        )));
    }
    let f32_at = |off: usize| f64::from(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
    let values: Vec<Complex64> = (0..a * b * c)
        .map(|i| Complex64::new(f32_at(16 + 8 * i), f32_at(20 + 8 * i)))
        .collect();
    Array3::from_shape_vec((a, b, c), values).map_err(|e| malformed(e.to_string()))
}

pub fn write_spectrogram(path: impl AsRef<Path>, spec: &Spectrogram) -> Result<()> {
    write_complex_tensor(path, &spec.bins)
}

/// Reads a spectrogram; the container does not store the signal length, so it
/// is taken as `(T - 1) * hop`.
pub fn read_spectrogram(path: impl AsRef<Path>, params: StftParams) -> Result<Spectrogram> {
    let bins = read_complex_tensor(path)?;
    let frames = bins.dim().2;
    if frames == 0 {
        return Err(Error::InvalidStftParams("container holds zero frames".into()));
    }
    Spectrogram::new(bins, params, (frames - 1) * params.hop)
}
