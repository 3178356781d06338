//! Corpus-level summaries of normalized attributions keyed by error type.
//!
//! Everything here is a fold into a [`TypeTally`]; tallies of disjoint
//! sub-corpora merge into the tally of the whole, so the work can be split
//! across threads and combined in any order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::{AttributionResult, EditSet};

/// Label for edits that carry no error type.
pub const UNTYPED: &str = "UNK";

/// Types seen this many times or fewer are flagged low-support.
pub const DEFAULT_MIN_SUPPORT: usize = 30;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeAccumulator {
    pub sum: f64,
    pub count: usize,
    pub positive: f64,
    /// Sum of the negative scores, kept negative.
    pub negative: f64,
}

impl TypeAccumulator {
    pub fn add(&mut self, phi_norm: f64) {
        self.sum += phi_norm;
        self.count += 1;
        if phi_norm > 0.0 {
            self.positive += phi_norm;
        } else if phi_norm < 0.0 {
            self.negative += phi_norm;
        }
    }

    pub fn merge(&mut self, other: &TypeAccumulator) {
        self.sum += other.sum;
        self.count += other.count;
        self.positive += other.positive;
        self.negative += other.negative;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sum / self.count as f64
        }
    }

    /// `None` when the type has no non-zero scores.
    pub fn precision(&self) -> Option<f64> {
        let denom = self.positive + self.negative.abs();
        (denom > 0.0).then(|| self.positive / denom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeMean {
    pub mean: f64,
    pub count: usize,
    pub low_support: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeTally(pub BTreeMap<String, TypeAccumulator>);

impl TypeTally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_results<'a>(results: impl IntoIterator<Item = &'a (EditSet, AttributionResult)>) -> Self {
        let mut tally = Self::new();
        for (es, r) in results {
            tally.add_result(es, r);
        }
        tally
    }

    pub fn add(&mut self, error_type: &str, phi_norm: f64) {
        self.0.entry(error_type.to_owned()).or_default().add(phi_norm);
    }

    /// Adds one score per player. A grouped player is labelled by the
    /// distinct types of its edits joined with `+`.
    pub fn add_result(&mut self, es: &EditSet, result: &AttributionResult) {
        for (label, &phi) in player_labels(es).iter().zip(&result.normalized) {
            self.add(label, phi);
        }
    }

    pub fn merge(mut self, other: &TypeTally) -> Self {
        for (k, acc) in &other.0 {
            self.0.entry(k.clone()).or_default().merge(acc);
        }
        self
    }

    pub fn means(&self, min_support: usize) -> BTreeMap<String, TypeMean> {
        self.0
            .iter()
            .map(|(k, acc)| {
                let m = TypeMean {
                    mean: acc.mean(),
                    count: acc.count,
                    low_support: acc.count <= min_support,
                };
                (k.clone(), m)
            })
            .collect()
    }

    pub fn precision(&self) -> BTreeMap<String, f64> {
        self.0
            .iter()
            .filter_map(|(k, acc)| acc.precision().map(|p| (k.clone(), p)))
            .collect()
    }
}

pub fn player_labels(es: &EditSet) -> Vec<String> {
    es.groups()
        .iter()
        .map(|g| {
            let mut types: Vec<&str> = g
                .iter()
                .map(|&i| es.edits()[i].error_type.as_deref().unwrap_or(UNTYPED))
                .collect();
            types.sort_unstable();
            types.dedup();
            types.join("+")
        })
        .collect()
}

/// Mean normalized score and count per error type.
pub fn error_type_means(results: &[(EditSet, AttributionResult)]) -> BTreeMap<String, TypeMean> {
    error_type_means_with(results, DEFAULT_MIN_SUPPORT)
}

pub fn error_type_means_with(
    results: &[(EditSet, AttributionResult)],
    min_support: usize,
) -> BTreeMap<String, TypeMean> {
    TypeTally::from_results(results).means(min_support)
}

/// Positive normalized mass over total absolute mass, per error type.
pub fn precision_by_type(results: &[(EditSet, AttributionResult)]) -> BTreeMap<String, f64> {
    TypeTally::from_results(results).precision()
}
