use thiserror::Error;

#[derive(Debug, Error)]
pub enum MvsError {
    #[error("image {image} has no stereo neighbour in the accepted angle band")]
    NoUsableNeighbors { image: usize },

    #[error("image {0} is not registered")]
    Unregistered(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Core(#[from] evrecon_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MvsError> = std::result::Result<T, E>;
