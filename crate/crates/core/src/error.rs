use std::path::PathBuf;

/// Errors raised across the lab.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("signal of {len} samples is shorter than one frame ({frame_len} samples)")]
    SignalTooShort { len: usize, frame_len: usize },

    #[error("inconsistent STFT parameters: {0}")]
    InvalidStftParams(String),

    #[error("unsupported sample rate {found} Hz (expected {expected} Hz)")]
    UnsupportedSampleRate { found: u32, expected: u32 },

    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("malformed {what} in {path}: {reason}")]
    Malformed {
        what: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("infeasible scene configuration: {0}")]
    InfeasibleScene(String),

    #[error("silent input: {0}")]
    Silent(String),

    #[error("covariance at frequency bin {bin} is singular after diagonal loading")]
    SingularCovariance { bin: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{block}: {levels} wavelet levels do not fit a {rows}x{cols} input (at most {max_levels})")]
    TooManyLevels {
        block: String,
        levels: usize,
        rows: usize,
        cols: usize,
        max_levels: usize,
    },

    #[error("stage {stage}: {reason}")]
    Stage { stage: String, reason: String },

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error("empty corpus: no audio files under {0}")]
    EmptyCorpus(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
