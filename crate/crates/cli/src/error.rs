use photon_core::PhotonError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("check failed: {0}")]
    Failed(String),

    #[error(transparent)]
    Photon(#[from] PhotonError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 1 for failed checks, 2 for usage and configuration errors, 3 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Photon(PhotonError::InvalidGrid(_) | PhotonError::InvalidGauge | PhotonError::MostlyMasked { .. }) => 2,
            _ => 3,
        }
    }
}
