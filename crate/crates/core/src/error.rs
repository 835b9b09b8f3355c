use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed event record at line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("event coordinate ({x}, {y}) outside {width}x{height} sensor")]
    CoordinateOutOfRange {
        x: i64,
        y: i64,
        width: u32,
        height: u32,
    },

    #[error("timestamp {t} us at record {index} precedes previous timestamp {previous} us")]
    NonMonotoneTimestamp { index: usize, previous: u64, t: u64 },

    #[error("invalid sensor geometry {width}x{height}")]
    InvalidGeometry { width: u32, height: u32 },

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("unsupported image format: {0}")]
    UnsupportedImageFormat(String),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("manifest timestamps not increasing at line {line}")]
    NonMonotoneManifest { line: usize },

    #[error("window {window} starts at {start} us, before reconstructor time {state_time} us")]
    OutOfOrderWindow {
        window: usize,
        start: u64,
        state_time: u64,
    },

    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
