//! JSON-lines edit format, one sentence per line:
//!
//! ```json
//! {"source": "A job .", "hypothesis": "The job .", "edits": [{"start": 0, "end": 1, "replacement": "The", "type": "R:DET"}]}
//! ```
//!
//! When `edits` is absent the edits are extracted from the sentence pair.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::extract_edits;
use crate::types::{Edit, EditError, EditSet, Sentence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub start: usize,
    pub end: usize,
    pub replacement: String,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub error_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub source: String,
    pub hypothesis: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edits: Option<Vec<EditRecord>>,
}

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: {source}")]
    Edit { line: usize, source: EditError },
}

impl JsonlError {
    pub fn line(&self) -> usize {
        match self {
            JsonlError::Json { line, .. } | JsonlError::Edit { line, .. } => *line,
        }
    }
}

impl SentenceRecord {
    pub fn from_edit_set(es: &EditSet) -> Self {
        SentenceRecord {
            source: es.source().to_string(),
            hypothesis: es.hypothesis().to_string(),
            edits: Some(
                es.edits()
                    .iter()
                    .map(|e| EditRecord {
                        start: e.start,
                        end: e.end,
                        replacement: e.replacement_text(),
                        error_type: e.error_type.clone(),
                    })
                    .collect(),
            ),
        }
    }

    pub fn to_edit_set(&self) -> Result<EditSet, EditError> {
        let source = Sentence::parse(&self.source);
        let hypothesis = Sentence::parse(&self.hypothesis);
        match &self.edits {
            None => Ok(extract_edits(&source, &hypothesis)),
            Some(records) => {
                let edits = records
                    .iter()
                    .map(|r| Edit {
                        start: r.start,
                        end: r.end,
                        replacement: Sentence::parse(&r.replacement).tokens().to_vec(),
                        error_type: r.error_type.clone(),
                    })
                    .collect();
                EditSet::with_hypothesis(source, edits, &hypothesis)
            }
        }
    }
}

/// Parses every non-blank line into a validated edit set.
pub fn read_edit_sets(text: &str) -> Result<Vec<EditSet>, JsonlError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line = i + 1;
            let rec: SentenceRecord = serde_json::from_str(l).map_err(|source| JsonlError::Json { line, source })?;
            rec.to_edit_set().map_err(|source| JsonlError::Edit { line, source })
        })
        .collect()
}

pub fn write_edit_sets(sets: &[EditSet]) -> String {
    let mut out = String::new();
    for es in sets {
        out.push_str(&serde_json::to_string(&SentenceRecord::from_edit_set(es)).expect("records serialize"));
        out.push('\n');
    }
    out
}
