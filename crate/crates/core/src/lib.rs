//! Edit-level attribution of sentence-level grammatical error correction
//! scores.
//!
//! A correction `H` of a source sentence `S` is decomposed into edits. Any
//! sentence-level metric `M(H|S)` then defines a cooperative game over those
//! edits whose total payoff is `M(H|S) - M(S|S)`; this crate splits that
//! payoff among the edits with exact Shapley values, permutation-sampled
//! Shapley values, or the one-subset Add/Sub baselines, and provides the
//! corpus-level protocols used to evaluate and aggregate the attributions.

pub mod aggregate;
pub mod attribution;
pub mod edits;
pub mod evaluation;
pub mod scorer;
pub mod stats;
pub mod synth;
pub mod types;

pub use attribution::{
    attribute, attribute_add, attribute_sub, normalize, shapley_exact, shapley_sampling, AttributionError,
    SamplingConfig, SubsetCache,
};
pub use edits::{apply_subset, extract_edits, SubsetMask};
pub use scorer::{Scorer, ScorerError};
pub use types::{AttributionResult, Edit, EditError, EditSet, Method, Sentence, Token};
