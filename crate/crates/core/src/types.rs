//! Domain types shared across the crate: tokens, sentences, edits, validated
//! edit sets and attribution results.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest number of players a single edit set may expose to attribution.
/// Subsets are encoded as bitmasks in a `u32`.
pub const MAX_PLAYERS: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EditError {
    #[error("edits {first} and {second} overlap")]
    Overlap { first: usize, second: usize },
    #[error("edit {index} span [{start}, {end}) exceeds source length {len}")]
    OutOfBounds {
        index: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("edit {index} does not change the source")]
    Identity { index: usize },
    #[error("invalid token {0:?}: tokens must be non-empty and whitespace-free")]
    InvalidToken(String),
    #[error("applying all edits does not reproduce the hypothesis")]
    HypothesisMismatch,
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("{n} players exceed the supported maximum of {max}")]
    TooManyPlayers { n: usize, max: usize },
}

/// A whitespace-free surface form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(String);

impl Token {
    pub fn new(text: impl Into<String>) -> Result<Self, EditError> {
        let text = text.into();
        if text.is_empty() || text.chars().any(char::is_whitespace) {
            return Err(EditError::InvalidToken(text));
        }
        Ok(Token(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A pre-tokenized sentence. Tokenization is plain whitespace splitting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sentence(Vec<Token>);

impl Sentence {
    pub fn parse(text: &str) -> Self {
        Sentence(text.split_whitespace().map(|t| Token(t.to_owned())).collect())
    }

    pub fn from_tokens(tokens: Vec<Token>) -> Self {
        Sentence(tokens)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(Token::as_str)
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, tok) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(tok.as_str())?;
        }
        Ok(())
    }
}

impl From<&str> for Sentence {
    fn from(text: &str) -> Self {
        Sentence::parse(text)
    }
}

/// One atomic correction: the source tokens in `[start, end)` are replaced by
/// `replacement`. An empty span is an insertion, an empty replacement a
/// deletion.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Edit {
    pub start: usize,
    pub end: usize,
    pub replacement: Vec<Token>,
    pub error_type: Option<String>,
}

impl Edit {
    pub fn new(start: usize, end: usize, replacement: &str) -> Self {
        Edit {
            start,
            end,
            replacement: Sentence::parse(replacement).0,
            error_type: None,
        }
    }

    pub fn with_type(mut self, error_type: impl Into<String>) -> Self {
        self.error_type = Some(error_type.into());
        self
    }

    pub fn replacement_text(&self) -> String {
        Sentence(self.replacement.clone()).to_string()
    }

    pub fn is_insertion(&self) -> bool {
        self.start == self.end
    }

    /// Same span and replacement, ignoring the error type.
    pub fn same_change(&self, other: &Edit) -> bool {
        self.start == other.start && self.end == other.end && self.replacement == other.replacement
    }
}

/// A validated, sorted, overlap-free set of edits over one source sentence.
///
/// Attribution treats the *players* of an edit set as the atomic units. By
/// default every edit is its own player; [`EditSet::group`] merges edits into
/// players that are applied and removed together.
#[derive(Debug, Clone, PartialEq)]
pub struct EditSet {
    source: Sentence,
    edits: Vec<Edit>,
    groups: Vec<Vec<usize>>,
}

impl EditSet {
    pub fn new(source: Sentence, mut edits: Vec<Edit>) -> Result<Self, EditError> {
        let len = source.len();
        for (index, e) in edits.iter().enumerate() {
            if e.start > e.end || e.end > len {
                return Err(EditError::OutOfBounds {
                    index,
                    start: e.start,
                    end: e.end,
                    len,
                });
            }
            if source.0[e.start..e.end] == e.replacement[..] {
                return Err(EditError::Identity { index });
            }
        }
        // overlap errors report positions in sorted order
        edits.sort_by_key(|e| (e.start, e.end));
        for (i, pair) in edits.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            let double_insert = a.is_insertion() && b.is_insertion() && a.start == b.start;
            if a.end > b.start || double_insert {
                return Err(EditError::Overlap {
                    first: i,
                    second: i + 1,
                });
            }
        }
        let groups = (0..edits.len()).map(|i| vec![i]).collect();
        Ok(EditSet { source, edits, groups })
    }

    /// Validates the edits and checks that applying all of them yields
    /// `hypothesis`.
    pub fn with_hypothesis(source: Sentence, edits: Vec<Edit>, hypothesis: &Sentence) -> Result<Self, EditError> {
        let set = EditSet::new(source, edits)?;
        if &set.hypothesis() != hypothesis {
            return Err(EditError::HypothesisMismatch);
        }
        Ok(set)
    }

    pub fn empty(source: Sentence) -> Self {
        EditSet {
            source,
            edits: Vec::new(),
            groups: Vec::new(),
        }
    }

    pub fn source(&self) -> &Sentence {
        &self.source
    }

    pub fn edits(&self) -> &[Edit] {
        &self.edits
    }

    /// Player `i` controls the edits listed in `groups()[i]`.
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn num_players(&self) -> usize {
        self.groups.len()
    }

    pub fn is_grouped(&self) -> bool {
        self.groups.len() != self.edits.len() || self.groups.iter().enumerate().any(|(i, g)| g[..] != [i])
    }

    /// Applies every edit.
    pub fn hypothesis(&self) -> Sentence {
        let all = vec![true; self.edits.len()];
        self.apply_edits(&all)
    }

    /// Applies the edits flagged in `included` (indexed by edit, not player).
    pub fn apply_edits(&self, included: &[bool]) -> Sentence {
        debug_assert_eq!(included.len(), self.edits.len());
        let src = &self.source.0;
        let mut out = Vec::with_capacity(src.len() + 4);
        let mut cursor = 0;
        for (e, _) in self.edits.iter().zip(included).filter(|(_, &on)| on) {
            out.extend_from_slice(&src[cursor..e.start]);
            out.extend_from_slice(&e.replacement);
            cursor = e.end;
        }
        out.extend_from_slice(&src[cursor..]);
        Sentence(out)
    }

    /// Merges players according to `partition`, a partition of the current
    /// player indices. The returned set has one player per block.
    pub fn group(&self, partition: &[Vec<usize>]) -> Result<EditSet, EditError> {
        let n = self.num_players();
        let mut seen = vec![false; n];
        for block in partition {
            if block.is_empty() {
                return Err(EditError::InvalidPartition("empty block".into()));
            }
            for &p in block {
                if p >= n {
                    return Err(EditError::InvalidPartition(format!(
                        "player {p} out of range for {n} players"
                    )));
                }
                if std::mem::replace(&mut seen[p], true) {
                    return Err(EditError::InvalidPartition(format!("player {p} appears twice")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(EditError::InvalidPartition(format!("player {missing} is not covered")));
        }
        let groups = partition
            .iter()
            .map(|block| {
                let mut members: Vec<usize> = block.iter().flat_map(|&p| self.groups[p].iter().copied()).collect();
                members.sort_unstable();
                members
            })
            .collect();
        Ok(EditSet {
            source: self.source.clone(),
            edits: self.edits.clone(),
            groups,
        })
    }

    /// Drops any grouping so that every edit is its own player again.
    pub fn ungrouped(&self) -> EditSet {
        EditSet {
            source: self.source.clone(),
            edits: self.edits.clone(),
            groups: (0..self.edits.len()).map(|i| vec![i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Shapley,
    ShapleySampling,
    Add,
    Sub,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Shapley => "shapley",
            Method::ShapleySampling => "shapley_sampling",
            Method::Add => "add",
            Method::Sub => "sub",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-player attribution of `delta_m` for one edit set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub method: Method,
    pub delta_m: f64,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub scorer_calls: u64,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampling_t: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Add/Sub only: the one-subset marginals before rescaling to `delta_m`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unscaled: Option<Vec<f64>>,
    /// Add/Sub only: the marginals summed to zero, so no rescaling was done
    /// and `raw` does not sum to `delta_m`.
    #[serde(default)]
    pub non_effective: bool,
    /// Sampling only: more permutations were requested than exist.
    #[serde(default)]
    pub t_capped: bool,
}

impl AttributionResult {
    /// `|sum(raw) - delta_m|` relative to `max(1, |delta_m|)`.
    pub fn effectiveness_gap(&self) -> f64 {
        let sum: f64 = self.raw.iter().sum();
        (sum - self.delta_m).abs() / self.delta_m.abs().max(1.0)
    }
}
