use thiserror::Error;

/// Errors raised across the environment, policy, and training layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported difficulty: {0}")]
    UnsupportedDifficulty(String),
    #[error("generation failed after {attempts} attempts for seed {seed}")]
    GenerationFailed { seed: u64, attempts: usize },
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("action {action:?} is not valid for {kind:?}")]
    InvalidAction {
        action: crate::env::ActionToken,
        kind: crate::env::EnvKind,
    },
    #[error("malformed blueprint: {0}")]
    MalformedBlueprint(String),
    #[error("END cannot be the active sub-goal")]
    EndAsSubGoal,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("group too small: need at least {min}, got {got}")]
    GroupTooSmall { min: usize, got: usize },
    #[error("nonpositive ratio {0}")]
    NonPositiveRatio(f64),
    #[error("heterogeneous conditioning: {0}")]
    HeterogeneousConditioning(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unknown variant: {0}")]
    UnknownVariant(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnsupportedDifficulty(_) => "unsupported_difficulty",
            Error::GenerationFailed { .. } => "generation_failed",
            Error::EpisodeFinished => "episode_finished",
            Error::InvalidAction { .. } => "invalid_action",
            Error::MalformedBlueprint(_) => "malformed_blueprint",
            Error::EndAsSubGoal => "end_as_subgoal",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::GroupTooSmall { .. } => "group_too_small",
            Error::NonPositiveRatio(_) => "nonpositive_ratio",
            Error::HeterogeneousConditioning(_) => "heterogeneous_conditioning",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidConfig(_) => "invalid_config",
            Error::UnknownVariant(_) => "unknown_variant",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
