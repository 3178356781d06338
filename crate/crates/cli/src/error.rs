use esh_core::evaluation::EvaluationError;
use esh_core::{AttributionError, ScorerError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("cannot write {0}")]
    Output(String),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error("sentence {sentence} has {n} edits, above --max-edits {cap}; pass --auto-sampling to sample instead")]
    Cap { sentence: usize, n: usize, cap: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Output(_) => 1,
            CliError::Scorer(_) => 2,
            CliError::Cap { .. } => 3,
        }
    }

    pub fn attribution(sentence: usize, e: AttributionError) -> Self {
        match e {
            AttributionError::TooManyEdits { n, cap } => CliError::Cap { sentence, n, cap },
            AttributionError::Scorer(s) => CliError::Scorer(s),
        }
    }
}

impl From<EvaluationError> for CliError {
    fn from(e: EvaluationError) -> Self {
        match e {
            EvaluationError::Attribution { sentence, source } => CliError::attribution(sentence, source),
            other => CliError::Input(other.to_string()),
        }
    }
}
