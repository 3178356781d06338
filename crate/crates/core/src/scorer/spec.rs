use std::collections::BTreeMap;
use std::fmt;
use std::fs;

use serde::Serialize;

use super::{Endpoint, ExternalScorerClient, GameOracle, LengthScorer, NGramLm, Scorer, ScorerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    NgramLm,
    AdditiveOracle,
    External,
    /// In-process `slope * len(hyp) + intercept`.
    Length,
}

/// A parsed scorer selector such as `ngram:model.json`,
/// `additive:bonuses.jsonl`, `external:127.0.0.1:7000`,
/// `external:python bridge.py` or `stub:0.5,1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScorerSpec {
    pub kind: ScorerKind,
    pub parameters: BTreeMap<String, String>,
}

impl ScorerSpec {
    pub fn parse(text: &str) -> Result<Self, ScorerError> {
        let (kind, rest) = text.split_once(':').map(|(k, r)| (k, Some(r))).unwrap_or((text, None));
        let need = |what: &str| {
            rest.filter(|r| !r.trim().is_empty())
                .map(str::to_owned)
                .ok_or_else(|| ScorerError::InvalidSpec(format!("{kind}: missing {what}")))
        };
        let mut parameters = BTreeMap::new();
        let kind = match kind {
            "ngram" | "ngram_lm" => {
                parameters.insert("path".into(), need("model path")?);
                ScorerKind::NgramLm
            }
            "additive" | "additive_oracle" => {
                parameters.insert("path".into(), need("bonus file path")?);
                ScorerKind::AdditiveOracle
            }
            "external" => {
                parameters.insert("target".into(), need("command or host:port")?);
                ScorerKind::External
            }
            "stub" | "length" => {
                let (slope, intercept) = match rest {
                    None | Some("") => (1.0, 0.0),
                    Some(r) => {
                        let parts: Vec<&str> = r.split(',').collect();
                        let num = |s: &str| {
                            s.trim()
                                .parse::<f64>()
                                .map_err(|_| ScorerError::InvalidSpec(format!("stub: bad number {s:?}")))
                        };
                        match parts[..] {
                            [a] => (num(a)?, 0.0),
                            [a, b] => (num(a)?, num(b)?),
                            _ => return Err(ScorerError::InvalidSpec("stub expects SLOPE[,INTERCEPT]".into())),
                        }
                    }
                };
                parameters.insert("slope".into(), slope.to_string());
                parameters.insert("intercept".into(), intercept.to_string());
                ScorerKind::Length
            }
            other => {
                return Err(ScorerError::InvalidSpec(format!(
                    "unknown scorer kind {other:?} (expected ngram, additive, external or stub)"
                )))
            }
        };
        Ok(ScorerSpec { kind, parameters })
    }

    fn param(&self, key: &str) -> &str {
        self.parameters.get(key).map(String::as_str).unwrap_or_default()
    }

    pub fn build(&self) -> Result<Box<dyn Scorer>, ScorerError> {
        Ok(match self.kind {
            ScorerKind::NgramLm => Box::new(NGramLm::from_json(&fs::read_to_string(self.param("path"))?)?),
            ScorerKind::AdditiveOracle => Box::new(GameOracle::additive_from_jsonl(&fs::read_to_string(
                self.param("path"),
            )?)?),
            ScorerKind::External => Box::new(ExternalScorerClient::new(Endpoint::parse(self.param("target")))),
            ScorerKind::Length => Box::new(LengthScorer {
                slope: self.param("slope").parse().unwrap_or(1.0),
                intercept: self.param("intercept").parse().unwrap_or(0.0),
            }),
        })
    }
}

impl fmt::Display for ScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ScorerKind::NgramLm => write!(f, "ngram:{}", self.param("path")),
            ScorerKind::AdditiveOracle => write!(f, "additive:{}", self.param("path")),
            ScorerKind::External => write!(f, "external:{}", self.param("target")),
            ScorerKind::Length => write!(f, "stub:{},{}", self.param("slope"), self.param("intercept")),
        }
    }
}
