use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("stage {stage} out of range 1..={max}")]
    StageOutOfRange { stage: usize, max: usize },

    #[error("no candidate decoder satisfies the Riccati norm cap")]
    NoFeasibleCandidate,

    #[error("optimist history is empty")]
    EmptyHistory,

    #[error("unknown trajectory kind `{0}`")]
    UnknownKind(String),

    #[error("mass must be positive, got {0}")]
    NonpositiveMass(f64),

    #[error("invalid experiment config: {0}")]
    ConfigInvalid(String),

    #[error("episode {episode}: {source}")]
    Episode {
        episode: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn dims(
        what: &'static str,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            what,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn in_episode(self, episode: usize) -> Self {
        Error::Episode {
            episode,
            source: Box::new(self),
        }
    }
}
