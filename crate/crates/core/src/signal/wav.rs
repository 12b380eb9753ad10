use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{MultichannelWaveform, SAMPLE_RATE};
use crate::error::{Error, Result};

const MAX_CHANNELS: u16 = 8;

fn wav_err(path: &Path, source: hound::Error) -> Error {
    match source {
        hound::Error::IoError(e) => Error::io(path, e),
        other => Error::Wav {
            path: path.to_path_buf(),
            source: other,
        },
    }
}

/// Reads a 16 kHz WAV (float or integer PCM) into an `M x N` waveform.
pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelWaveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedSampleRate {
            found: spec.sample_rate,
            expected: SAMPLE_RATE,
        });
    }
    if spec.channels == 0 || spec.channels > MAX_CHANNELS {
        return Err(Error::Malformed {
            what: "WAV header",
            path: path.to_path_buf(),
            reason: format!("{} channels (supported: 1..={MAX_CHANNELS})", spec.channels),
        });
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / f64::from(1u32 << (spec.bits_per_sample - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) * scale))
                .collect::<Result<_, _>>()
                .map_err(|e| wav_err(path, e))?
        }
    };
    deinterleave(&interleaved, usize::from(spec.channels), path)
}

fn deinterleave(interleaved: &[f64], channels: usize, path: &Path) -> Result<MultichannelWaveform> {
    let frames = interleaved.len() / channels;
    if frames == 0 {
        return Err(Error::Malformed {
            what: "audio data",
            path: path.to_path_buf(),
            reason: "no samples".into(),
        });
    }
    let samples = Array2::from_shape_fn((channels, frames), |(m, n)| interleaved[n * channels + m]);
    MultichannelWaveform::new(samples, SAMPLE_RATE)
}

/// Writes 32-bit float WAV. The file appears atomically (temp file + rename).
pub fn write_wav(path: impl AsRef<Path>, wave: &MultichannelWaveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: wave.num_channels() as u16,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let tmp = path.with_extension("wav.tmp");
    {
        let mut writer = hound::WavWriter::create(&tmp, spec).map_err(|e| wav_err(&tmp, e))?;
        let samples = wave.samples();
        for n in 0..wave.len() {
            for m in 0..wave.num_channels() {
                writer
                    .write_sample(samples[[m, n]] as f32)
                    .map_err(|e| wav_err(&tmp, e))?;
            }
        }
        writer.finalize().map_err(|e| wav_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads WAV or FLAC by extension (corpus ingestion).
pub fn read_audio(path: impl AsRef<Path>) -> Result<MultichannelWaveform> {
    let path = path.as_ref();
    let is_flac = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("flac"));
    if !is_flac {
        return read_wav(path);
    }
    let malformed = |reason: String| Error::Malformed {
        what: "FLAC stream",
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = claxon::FlacReader::open(path).map_err(|e| malformed(e.to_string()))?;
    let info = reader.streaminfo();
    if info.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedSampleRate {
            found: info.sample_rate,
            expected: SAMPLE_RATE,
        });
    }
    let scale = 1.0 / f64::from(1u32 << (info.bits_per_sample - 1));
    let interleaved: Vec<f64> = reader
        .samples()
        .map(|s| s.map(|v| f64::from(v) * scale))
        .collect::<Result<_, _>>()
        .map_err(|e| malformed(e.to_string()))?;
    deinterleave(&interleaved, info.channels as usize, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_wav_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        // f32-representable values survive the f64 -> f32 -> f64 trip exactly.
        let samples = Array2::from_shape_fn((8, 1000), |(m, n)| {
            f64::from(((m * 1000 + n) as f32 * 0.37).sin() * 0.9)
        });
        let wave = MultichannelWaveform::new(samples, SAMPLE_RATE).unwrap();
        write_wav(&path, &wave).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back, wave);
        assert!(!path.with_extension("wav.tmp").exists());
    }

    #[test]
    fn wrong_sample_rate_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cd.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 44_100,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = read_wav(&path).unwrap_err();
        assert!(err.to_string().contains("unsupported sample rate"), "{err}");
    }

    #[test]
    fn mono_pcm16_reads_as_one_channel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mono.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for v in [0i16, 16384, -16384] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let wave = read_audio(&path).unwrap();
        assert_eq!(wave.num_channels(), 1);
        assert_eq!(wave.samples().row(0).to_vec(), vec![0.0, 0.5, -0.5]);
    }

    #[test]
    fn garbage_header_is_descriptive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        fs::write(&path, b"not a riff file at all").unwrap();
        let err = read_wav(&path).unwrap_err();
        assert!(err.to_string().contains("bad.wav"), "{err}");
    }
}
