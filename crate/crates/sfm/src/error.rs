use thiserror::Error;

pub type Result<T, E = SfmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SfmError {
    #[error("image {width}x{height} too small for feature detection (minimum 32x32)")]
    ImageTooSmall { width: usize, height: usize },

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("not enough correspondences: {found} < {needed}")]
    TooFewCorrespondences { found: usize, needed: usize },

    #[error("no valid initial image pair")]
    NoValidInitialPair,

    #[error("cheirality test ambiguous: best candidate {best} points vs runner-up {second}")]
    CheiralityAmbiguity { best: usize, second: usize },

    #[error("no registrable image")]
    NoRegistrableImage,

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("corrupt sidecar: {0}")]
    CorruptSidecar(String),

    #[error(transparent)]
    Core(#[from] evrecon_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
