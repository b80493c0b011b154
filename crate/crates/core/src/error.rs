use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("sampling rate {fs} Hz is not a multiple of mains frequency {mains_hz} Hz")]
    NonIntegerPeriod { fs: u32, mains_hz: u32 },

    #[error("payload {path} is truncated: {len} bytes is not a whole number of frames of {frame} bytes")]
    TruncatedPayload { path: PathBuf, len: u64, frame: usize },

    #[error("ground truth {path}, line {line}: {message}")]
    GroundTruth {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("window [{start_s:.3} s, {end_s:.3} s] exceeds recording [0, {duration_s:.3} s]")]
    WindowOutOfBounds {
        start_s: f64,
        end_s: f64,
        duration_s: f64,
    },

    #[error("{0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("voltage rms {value} V at period {period} is below the {floor} V floor")]
    DeadVoltage {
        period: usize,
        value: f64,
        floor: f64,
    },

    #[error("model expects fs={model_fs} Hz, F0={model_f0} Hz but recording has fs={rec_fs} Hz, F0={rec_f0} Hz")]
    RateMismatch {
        model_fs: u32,
        model_f0: u32,
        rec_fs: u32,
        rec_f0: u32,
    },

    #[error("training set needs both classes, found {events} events and {non_events} non-events")]
    SingleClass { events: usize, non_events: usize },

    #[error("placement infeasible: {0}")]
    Infeasible(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the content of input files or arguments
    /// rather than by the environment.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}
