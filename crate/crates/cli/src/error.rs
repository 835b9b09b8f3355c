use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage {stage} failed: {cause}")]
    Stage { stage: &'static str, cause: Box<CliError> },

    #[error("missing artifact for stage {stage}: run the earlier stages first")]
    MissingArtifact { stage: &'static str },

    #[error(transparent)]
    Core(#[from] evrecon_core::Error),

    #[error(transparent)]
    Sfm(#[from] evrecon_sfm::SfmError),

    #[error(transparent)]
    Mvs(#[from] evrecon_mvs::MvsError),

    #[error("malformed artifact manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit status: 2 for configuration problems, 3 for failures
    /// while a stage runs.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            _ => 3,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Self::Config(_) | Self::Stage { .. } => self,
            other => Self::Stage {
                stage,
                cause: Box::new(other),
            },
        }
    }
}
