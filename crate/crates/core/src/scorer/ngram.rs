//! Add-alpha smoothed word n-gram language model scored as negative
//! perplexity.
//!
//! `P(w | ctx) = (c(ctx, w) + alpha) / (c(ctx) + alpha * V)` where `V` counts
//! every predictable symbol: the training words, `</s>` and `<unk>`. Unseen
//! contexts therefore fall back to the uniform distribution `1 / V`.
//!
//! Models serialize to a versioned JSON document holding the vocabulary and
//! the raw n-gram counts; context counts are rebuilt on load.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Scorer, ScorerError};
use crate::types::Sentence;

/// Score returned for an empty hypothesis, whose perplexity is treated as
/// unbounded.
pub const EMPTY_HYPOTHESIS_SCORE: f64 = -1e9;

const BOS: u32 = 0;
const EOS: u32 = 1;
const UNK: u32 = 2;
const SPECIALS: [&str; 3] = ["<s>", "</s>", "<unk>"];
const FORMAT: &str = "esh-ngram-lm";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct NGramLm {
    order: usize,
    alpha: f64,
    words: Vec<String>,
    ids: HashMap<String, u32>,
    counts: HashMap<Vec<u32>, u64>,
    context_counts: HashMap<Vec<u32>, u64>,
    trained: bool,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    order: usize,
    alpha: f64,
    vocabulary: Vec<String>,
    ngrams: Vec<NGramCount>,
}

#[derive(Serialize, Deserialize)]
struct NGramCount {
    tokens: Vec<String>,
    count: u64,
}

impl NGramLm {
    /// An untrained model; `order` must be 2 or 3 and `alpha` positive.
    pub fn new(order: usize, alpha: f64) -> Result<Self, ScorerError> {
        if !(2..=3).contains(&order) {
            return Err(ScorerError::InvalidSpec(format!(
                "n-gram order must be 2 or 3, got {order}"
            )));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ScorerError::InvalidSpec(format!(
                "smoothing alpha must be positive, got {alpha}"
            )));
        }
        let words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Ok(NGramLm {
            order,
            alpha,
            words,
            ids,
            counts: HashMap::new(),
            context_counts: HashMap::new(),
            trained: false,
        })
    }

    /// Adds words to the vocabulary without observing any n-grams.
    pub fn with_vocabulary<'a>(mut self, words: impl IntoIterator<Item = &'a str>) -> Self {
        for w in words {
            self.intern(w);
        }
        self
    }

    pub fn train<'a>(mut self, corpus: impl IntoIterator<Item = &'a Sentence>) -> Self {
        for sentence in corpus {
            let ids: Vec<u32> = sentence.iter().map(|w| self.intern(w)).collect();
            for gram in self.padded_ngrams(&ids) {
                *self.context_counts.entry(gram[..gram.len() - 1].to_vec()).or_default() += 1;
                *self.counts.entry(gram).or_default() += 1;
            }
        }
        self.trained = true;
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Number of predictable symbols (vocabulary plus `</s>` and `<unk>`).
    pub fn vocab_size(&self) -> usize {
        self.words.len() - 1
    }

    fn intern(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.ids.get(word) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(word.to_owned());
        self.ids.insert(word.to_owned(), id);
        id
    }

    fn padded_ngrams(&self, ids: &[u32]) -> Vec<Vec<u32>> {
        let mut padded = vec![BOS; self.order - 1];
        padded.extend_from_slice(ids);
        padded.push(EOS);
        padded.windows(self.order).map(<[u32]>::to_vec).collect()
    }

    /// Natural-log probability of each predicted symbol (words and `</s>`).
    pub fn log_probs(&self, sentence: &Sentence) -> Result<Vec<f64>, ScorerError> {
        if !self.trained {
            return Err(ScorerError::UntrainedModel);
        }
        let ids: Vec<u32> = sentence
            .iter()
            .map(|w| self.ids.get(w).copied().filter(|&id| id != BOS).unwrap_or(UNK))
            .collect();
        let v = self.vocab_size() as f64;
        Ok(self
            .padded_ngrams(&ids)
            .iter()
            .map(|gram| {
                let c = self.counts.get(gram).copied().unwrap_or(0) as f64;
                let ctx = self.context_counts.get(&gram[..gram.len() - 1]).copied().unwrap_or(0) as f64;
                ((c + self.alpha) / (ctx + self.alpha * v)).ln()
            })
            .collect())
    }

    pub fn perplexity(&self, sentence: &Sentence) -> Result<f64, ScorerError> {
        let lp = self.log_probs(sentence)?;
        let mean = lp.iter().sum::<f64>() / lp.len() as f64;
        Ok((-mean).exp())
    }

    pub fn to_json(&self) -> String {
        let mut ngrams: Vec<NGramCount> = self
            .counts
            .iter()
            .map(|(gram, &count)| NGramCount {
                tokens: gram.iter().map(|&id| self.words[id as usize].clone()).collect(),
                count,
            })
            .collect();
        ngrams.sort_by(|a, b| a.tokens.cmp(&b.tokens));
        let file = ModelFile {
            format: FORMAT.into(),
            version: VERSION,
            order: self.order,
            alpha: self.alpha,
            vocabulary: self.words[SPECIALS.len()..].to_vec(),
            ngrams,
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScorerError> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| ScorerError::InvalidSpec(format!("bad n-gram model file: {e}")))?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(ScorerError::InvalidSpec(format!(
                "unsupported model format {} v{}",
                file.format, file.version
            )));
        }
        let mut lm = NGramLm::new(file.order, file.alpha)?.with_vocabulary(file.vocabulary.iter().map(String::as_str));
        for NGramCount { tokens, count } in file.ngrams {
            if tokens.len() != lm.order {
                return Err(ScorerError::InvalidSpec(format!(
                    "n-gram {tokens:?} does not match order {}",
                    lm.order
                )));
            }
            let gram: Vec<u32> = tokens.iter().map(|t| lm.intern(t)).collect();
            *lm.context_counts.entry(gram[..gram.len() - 1].to_vec()).or_default() += count;
            *lm.counts.entry(gram).or_default() += count;
        }
        lm.trained = true;
        Ok(lm)
    }
}

impl Scorer for NGramLm {
    fn name(&self) -> &str {
        "ngram_lm"
    }

    /// Negative perplexity of the hypothesis; the source is ignored.
    fn score(&self, _source: &Sentence, hypothesis: &Sentence) -> Result<f64, ScorerError> {
        if !self.trained {
            return Err(ScorerError::UntrainedModel);
        }
        if hypothesis.is_empty() {
            return Ok(EMPTY_HYPOTHESIS_SCORE);
        }
        Ok(-self.perplexity(hypothesis)?)
    }
}
