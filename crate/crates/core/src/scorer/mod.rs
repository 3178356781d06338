//! Sentence-level metrics `M(H|S)`.
//!
//! Every scorer is higher-is-better. Quality-only metrics such as language
//! model perplexity implement the same trait and ignore the source.

mod external;
mod ngram;
mod oracle;
mod spec;

use std::sync::Arc;

use thiserror::Error;

use crate::types::Sentence;

pub use external::{serve, Endpoint, ExternalScorerClient, DEFAULT_MAX_BATCH};
pub use ngram::{NGramLm, EMPTY_HYPOTHESIS_SCORE};
pub use oracle::{recognize, GameOracle};
pub use spec::{ScorerKind, ScorerSpec};

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("language model has not been trained")]
    UntrainedModel,
    #[error("hypothesis {hypothesis:?} is not reachable from {source_text:?} by registered edits")]
    UnrecognizedEdit { source_text: String, hypothesis: String },
    #[error("scorer bridge unavailable: {0}")]
    BridgeUnavailable(String),
    #[error("scorer protocol error: {0}")]
    Protocol(String),
    #[error("bridge returned {got} scores for {expected} pairs")]
    ScoreLengthMismatch { expected: usize, got: usize },
    #[error("bridge reported an error: {0}")]
    Remote(String),
    #[error("invalid scorer configuration: {0}")]
    InvalidSpec(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub trait Scorer: Send + Sync {
    fn name(&self) -> &str;

    fn score(&self, source: &Sentence, hypothesis: &Sentence) -> Result<f64, ScorerError>;

    /// Scores pairs in order. Implementations that override this must agree
    /// element-wise with [`Scorer::score`].
    fn batch_score(&self, pairs: &[(&Sentence, &Sentence)]) -> Result<Vec<f64>, ScorerError> {
        pairs.iter().map(|(s, h)| self.score(s, h)).collect()
    }
}

impl<T: Scorer + ?Sized> Scorer for &T {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn score(&self, source: &Sentence, hypothesis: &Sentence) -> Result<f64, ScorerError> {
        (**self).score(source, hypothesis)
    }
    fn batch_score(&self, pairs: &[(&Sentence, &Sentence)]) -> Result<Vec<f64>, ScorerError> {
        (**self).batch_score(pairs)
    }
}

impl<T: Scorer + ?Sized> Scorer for Box<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn score(&self, source: &Sentence, hypothesis: &Sentence) -> Result<f64, ScorerError> {
        (**self).score(source, hypothesis)
    }
    fn batch_score(&self, pairs: &[(&Sentence, &Sentence)]) -> Result<Vec<f64>, ScorerError> {
        (**self).batch_score(pairs)
    }
}

impl<T: Scorer + ?Sized> Scorer for Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn score(&self, source: &Sentence, hypothesis: &Sentence) -> Result<f64, ScorerError> {
        (**self).score(source, hypothesis)
    }
    fn batch_score(&self, pairs: &[(&Sentence, &Sentence)]) -> Result<Vec<f64>, ScorerError> {
        (**self).batch_score(pairs)
    }
}

/// `slope * len(hypothesis) + intercept`. A model-free stand-in for
/// protocol tests and timing runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthScorer {
    pub slope: f64,
    pub intercept: f64,
}

impl Default for LengthScorer {
    fn default() -> Self {
        LengthScorer {
            slope: 1.0,
            intercept: 0.0,
        }
    }
}

impl Scorer for LengthScorer {
    fn name(&self) -> &str {
        "length"
    }

    fn score(&self, _source: &Sentence, hypothesis: &Sentence) -> Result<f64, ScorerError> {
        Ok(self.slope * hypothesis.len() as f64 + self.intercept)
    }
}

/// `sum_k weight_k * M_k(H|S)`.
pub struct LinearCombination {
    terms: Vec<(f64, Box<dyn Scorer>)>,
    name: String,
}

impl LinearCombination {
    pub fn new(terms: Vec<(f64, Box<dyn Scorer>)>) -> Self {
        let name = terms
            .iter()
            .map(|(w, s)| format!("{w}*{}", s.name()))
            .collect::<Vec<_>>()
            .join("+");
        LinearCombination { terms, name }
    }
}

impl Scorer for LinearCombination {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, source: &Sentence, hypothesis: &Sentence) -> Result<f64, ScorerError> {
        self.terms
            .iter()
            .try_fold(0.0, |acc, (w, s)| Ok(acc + w * s.score(source, hypothesis)?))
    }

    fn batch_score(&self, pairs: &[(&Sentence, &Sentence)]) -> Result<Vec<f64>, ScorerError> {
        let mut out = vec![0.0; pairs.len()];
        for (w, s) in &self.terms {
            for (acc, v) in out.iter_mut().zip(s.batch_score(pairs)?) {
                *acc += w * v;
            }
        }
        Ok(out)
    }
}
