//! Ground-truth scorers defined directly as games over registered edits.
//!
//! A [`GameOracle`] recognizes which registered edits a hypothesis applies
//! and scores it with a caller-supplied function of that subset. The
//! additive oracle, where each edit carries a fixed bonus, is the special
//! case used throughout the tests; constructed interacting and size-only
//! games exercise the attribution axioms.

use std::collections::HashMap;
use std::sync::Arc;

use serde::Deserialize;

use super::{Scorer, ScorerError};
use crate::types::{Edit, EditSet, Sentence};

type GameFn = Arc<dyn Fn(&[bool]) -> f64 + Send + Sync>;

struct Game {
    edits: EditSet,
    value: GameFn,
}

#[derive(Clone, Default)]
pub struct GameOracle {
    name: String,
    games: HashMap<Sentence, Vec<Arc<Game>>>,
}

impl GameOracle {
    pub fn new(name: impl Into<String>) -> Self {
        GameOracle {
            name: name.into(),
            games: HashMap::new(),
        }
    }

    /// Registers a game over the edits of `es`. `value` receives one flag per
    /// edit (not per player) and returns `M(H|S)`.
    pub fn register(&mut self, es: &EditSet, value: impl Fn(&[bool]) -> f64 + Send + Sync + 'static) -> &mut Self {
        let game = Game {
            edits: es.ungrouped(),
            value: Arc::new(value),
        };
        self.games.entry(es.source().clone()).or_default().push(Arc::new(game));
        self
    }

    /// Registers `M = sum of bonuses of applied edits`, with base score 0.
    pub fn register_additive(&mut self, es: &EditSet, bonuses: Vec<f64>) -> &mut Self {
        assert_eq!(bonuses.len(), es.edits().len(), "one bonus per edit");
        self.register(es, move |applied| {
            applied.iter().zip(&bonuses).filter(|(&on, _)| on).map(|(_, b)| b).sum()
        })
    }

    pub fn additive(es: &EditSet, bonuses: Vec<f64>) -> Self {
        let mut oracle = GameOracle::new("additive_oracle");
        oracle.register_additive(es, bonuses);
        oracle
    }

    /// Loads additive bonuses from JSON lines of the form
    /// `{"source": str, "edits": [{"start", "end", "replacement", "bonus"}]}`.
    pub fn additive_from_jsonl(text: &str) -> Result<Self, ScorerError> {
        #[derive(Deserialize)]
        struct Line {
            source: String,
            edits: Vec<BonusEdit>,
        }
        #[derive(Deserialize)]
        struct BonusEdit {
            start: usize,
            end: usize,
            replacement: String,
            bonus: f64,
        }

        let mut oracle = GameOracle::new("additive_oracle");
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |msg: String| ScorerError::InvalidSpec(format!("bonus file line {}: {msg}", i + 1));
            let parsed: Line = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            let edits: Vec<Edit> = parsed
                .edits
                .iter()
                .map(|e| Edit::new(e.start, e.end, &e.replacement))
                .collect();
            let es = EditSet::new(Sentence::parse(&parsed.source), edits).map_err(|e| bad(e.to_string()))?;
            // EditSet sorts edits, so look each bonus up by its change
            let bonuses = es
                .edits()
                .iter()
                .map(|e| {
                    parsed
                        .edits
                        .iter()
                        .find(|b| {
                            b.start == e.start
                                && b.end == e.end
                                && b.replacement
                                    .split_whitespace()
                                    .eq(e.replacement.iter().map(|t| t.as_str()))
                        })
                        .map(|b| b.bonus)
                        .expect("every sorted edit came from the bonus list")
                })
                .collect();
            oracle.register_additive(&es, bonuses);
        }
        Ok(oracle)
    }
}

impl Scorer for GameOracle {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, source: &Sentence, hypothesis: &Sentence) -> Result<f64, ScorerError> {
        let games = self.games.get(source).map(Vec::as_slice).unwrap_or_default();
        for game in games {
            if let Some(applied) = recognize(&game.edits, hypothesis) {
                return Ok((game.value)(&applied));
            }
        }
        if games.is_empty() && source == hypothesis {
            return Ok(0.0);
        }
        Err(ScorerError::UnrecognizedEdit {
            source_text: source.to_string(),
            hypothesis: hypothesis.to_string(),
        })
    }
}

/// Finds a subset of `es`'s edits whose application turns its source into
/// `hypothesis`, returned as one flag per edit. Prefers leaving an edit
/// unapplied when both choices remain viable.
pub fn recognize(es: &EditSet, hypothesis: &Sentence) -> Option<Vec<bool>> {
    let src = es.source().tokens();
    let hyp = hypothesis.tokens();
    let edits = es.edits();
    let mut applied = vec![false; edits.len()];
    let mut dead = std::collections::HashSet::new();

    // state: next edit index k and position in the hypothesis; the source
    // cursor is the end of edit k-1 either way
    fn walk(
        k: usize,
        pos: usize,
        src: &[crate::types::Token],
        hyp: &[crate::types::Token],
        edits: &[Edit],
        applied: &mut [bool],
        dead: &mut std::collections::HashSet<(usize, usize)>,
    ) -> bool {
        if dead.contains(&(k, pos)) {
            return false;
        }
        let cursor = if k == 0 { 0 } else { edits[k - 1].end };
        let ok = if k == edits.len() {
            hyp[pos..] == src[cursor..]
        } else {
            let e = &edits[k];
            let gap = &src[cursor..e.start];
            if !hyp[pos..].starts_with(gap) {
                false
            } else {
                let at = pos + gap.len();
                let keep = &src[e.start..e.end];
                (hyp[at..].starts_with(keep) && walk(k + 1, at + keep.len(), src, hyp, edits, applied, dead))
                    || (hyp[at..].starts_with(&e.replacement) && {
                        applied[k] = true;
                        walk(k + 1, at + e.replacement.len(), src, hyp, edits, applied, dead) || {
                            applied[k] = false;
                            false
                        }
                    })
            }
        };
        if !ok {
            dead.insert((k, pos));
        }
        ok
    }

    walk(0, 0, src, hyp, edits, &mut applied, &mut dead).then_some(applied)
}
