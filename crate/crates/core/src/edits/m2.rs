//! The M2 annotation format.
//!
//! ```text
//! S A job is performed .
//! A 0 1|||R:DET|||The|||REQUIRED|||-NONE-|||0
//!
//! S Fine as is .
//! A -1 -1|||noop|||-NONE-|||REQUIRED|||-NONE-|||0
//! ```
//!
//! Each block yields one [`EditSet`] per annotator id. A replacement of
//! `-NONE-` means deletion; a `noop` line records an annotator with no edits.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::types::{Edit, EditSet, Sentence};

#[derive(Debug, Error, PartialEq)]
#[error("M2 syntax error on line {line}: {message}")]
pub struct M2SyntaxError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct M2Block {
    pub source: Sentence,
    pub annotations: BTreeMap<usize, EditSet>,
}

impl M2Block {
    /// The edits of `annotator`, or an empty set if that annotator has no
    /// lines in this block.
    pub fn edit_set(&self, annotator: usize) -> EditSet {
        self.annotations
            .get(&annotator)
            .cloned()
            .unwrap_or_else(|| EditSet::empty(self.source.clone()))
    }
}

const NONE: &str = "-NONE-";

pub fn parse_m2(text: &str) -> Result<Vec<M2Block>, M2SyntaxError> {
    let mut blocks = Vec::new();
    let mut current: Option<(Sentence, BTreeMap<usize, Vec<Edit>>, usize)> = None;

    let flush = |cur: Option<(Sentence, BTreeMap<usize, Vec<Edit>>, usize)>,
                 blocks: &mut Vec<M2Block>|
     -> Result<(), M2SyntaxError> {
        if let Some((source, per_annotator, line)) = cur {
            let mut annotations = BTreeMap::new();
            for (annotator, edits) in per_annotator {
                let set = EditSet::new(source.clone(), edits).map_err(|e| M2SyntaxError {
                    line,
                    message: format!("annotator {annotator}: {e}"),
                })?;
                annotations.insert(annotator, set);
            }
            blocks.push(M2Block { source, annotations });
        }
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(current.take(), &mut blocks)?;
            continue;
        }
        if let Some(rest) = line.strip_prefix('S').filter(|r| r.is_empty() || r.starts_with(' ')) {
            if current.is_some() {
                return Err(M2SyntaxError {
                    line: lineno,
                    message: "S line inside a block; blocks must be blank-line separated".into(),
                });
            }
            current = Some((Sentence::parse(rest), BTreeMap::new(), lineno));
        } else if let Some(rest) = line.strip_prefix("A ") {
            let Some((source, per_annotator, _)) = current.as_mut() else {
                return Err(M2SyntaxError {
                    line: lineno,
                    message: "A line before any S line".into(),
                });
            };
            let (annotator, edit) =
                parse_annotation(rest, source.len()).map_err(|message| M2SyntaxError { line: lineno, message })?;
            let entry = per_annotator.entry(annotator).or_default();
            entry.extend(edit);
        } else {
            return Err(M2SyntaxError {
                line: lineno,
                message: format!("unrecognized line {line:?}"),
            });
        }
    }
    flush(current, &mut blocks)?;
    Ok(blocks)
}

fn parse_annotation(rest: &str, source_len: usize) -> Result<(usize, Option<Edit>), String> {
    let fields: Vec<&str> = rest.split("|||").collect();
    if fields.len() < 3 {
        return Err(format!("expected at least 3 '|||' fields, found {}", fields.len()));
    }
    let annotator = match fields.len() {
        6.. => fields[fields.len() - 1]
            .trim()
            .parse::<usize>()
            .map_err(|_| format!("bad annotator id {:?}", fields[fields.len() - 1]))?,
        _ => 0,
    };
    let mut span = fields[0].split_whitespace();
    let (Some(start), Some(end), None) = (span.next(), span.next(), span.next()) else {
        return Err(format!("bad span {:?}", fields[0]));
    };
    let start: i64 = start.parse().map_err(|_| format!("bad start {start:?}"))?;
    let end: i64 = end.parse().map_err(|_| format!("bad end {end:?}"))?;
    let error_type = fields[1].trim();
    if error_type.eq_ignore_ascii_case("noop") || (start == -1 && end == -1) {
        return Ok((annotator, None));
    }
    if start < 0 || end < start || end as usize > source_len {
        return Err(format!("span {start} {end} invalid for {source_len} tokens"));
    }
    let replacement = match fields[2].trim() {
        NONE => "",
        r => r,
    };
    let edit = Edit::new(start as usize, end as usize, replacement).with_type(error_type);
    Ok((annotator, Some(edit)))
}

/// Writes blocks in normalized M2 form; `parse_m2` inverts it.
pub fn emit_m2(blocks: &[M2Block]) -> String {
    let mut out = String::new();
    for (b, block) in blocks.iter().enumerate() {
        if b > 0 {
            out.push('\n');
        }
        if block.source.is_empty() {
            out.push_str("S\n");
        } else {
            let _ = writeln!(out, "S {}", block.source);
        }
        for (annotator, set) in &block.annotations {
            if set.edits().is_empty() {
                let _ = writeln!(out, "A -1 -1|||noop|||{NONE}|||REQUIRED|||{NONE}|||{annotator}");
            }
            for e in set.edits() {
                let repl = match e.replacement_text() {
                    r if r.is_empty() => NONE.to_owned(),
                    r => r,
                };
                let _ = writeln!(
                    out,
                    "A {} {}|||{}|||{}|||REQUIRED|||{NONE}|||{}",
                    e.start,
                    e.end,
                    e.error_type.as_deref().unwrap_or("UNK"),
                    repl,
                    annotator
                );
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "S A job is performed by him .
A 0 1|||R:DET|||The|||REQUIRED|||-NONE-|||0
A 1 2|||R:NOUN|||work|||REQUIRED|||-NONE-|||0
A 2 3|||R:VERB:TENSE|||was|||REQUIRED|||-NONE-|||0
A 0 1|||R:DET|||The|||REQUIRED|||-NONE-|||1

S Fine as is .
A -1 -1|||noop|||-NONE-|||REQUIRED|||-NONE-|||0

S a very b
A 1 2|||U:ADV|||-NONE-|||REQUIRED|||-NONE-|||0
";

    #[test]
    fn parses_annotators_noops_and_deletions() {
        let blocks = parse_m2(SAMPLE).unwrap();
        assert_eq!(blocks.len(), 3);
        let first = &blocks[0];
        assert_eq!(first.annotations.len(), 2);
        let a0 = first.edit_set(0);
        assert_eq!(a0.num_players(), 3);
        assert_eq!(a0.edits()[0].error_type.as_deref(), Some("R:DET"));
        assert_eq!(a0.hypothesis().to_string(), "The work was performed by him .");
        assert_eq!(first.edit_set(1).num_players(), 1);
        assert_eq!(first.edit_set(7).num_players(), 0);

        assert_eq!(blocks[1].edit_set(0).num_players(), 0);
        assert!(blocks[1].annotations.contains_key(&0));

        let third = blocks[2].edit_set(0);
        let del = &third.edits()[0];
        assert!(del.replacement.is_empty());
        assert_eq!(blocks[2].edit_set(0).hypothesis().to_string(), "a b");
    }

    #[test]
    fn single_annotation_block() {
        let blocks = parse_m2("S A job .\nA 0 1|||R:DET|||The|||REQUIRED|||-NONE-|||0\n").unwrap();
        let es = blocks[0].edit_set(0);
        assert_eq!(es.num_players(), 1);
        assert_eq!(es.edits()[0].error_type.as_deref(), Some("R:DET"));
    }

    #[test]
    fn missing_source_line_is_an_error() {
        let err = parse_m2("A 0 1|||R:DET|||The|||REQUIRED|||-NONE-|||0\n").unwrap_err();
        assert_eq!(err.line, 1);
        let err = parse_m2("S a b\nA 0 9|||R:X|||c|||REQUIRED|||-NONE-|||0\n").unwrap_err();
        assert_eq!(err.line, 2);
        let err = parse_m2("S a b\nA 0 1|||R:X\n").unwrap_err();
        assert_eq!(err.line, 2);
        let err = parse_m2("S a b\nS c d\n").unwrap_err();
        assert_eq!(err.line, 2);
        let err =
            parse_m2("S a b c\nA 0 2|||R:X|||z|||REQUIRED|||-NONE-|||0\nA 1 3|||R:X|||y|||REQUIRED|||-NONE-|||0\n")
                .unwrap_err();
        assert!(err.message.contains("overlap"));
    }

    #[test]
    fn normalized_text_round_trips() {
        let blocks = parse_m2(SAMPLE).unwrap();
        let emitted = emit_m2(&blocks);
        assert_eq!(emitted, SAMPLE);
        assert_eq!(parse_m2(&emitted).unwrap(), blocks);
    }

    #[test]
    fn tolerates_crlf_and_trailing_blank_lines() {
        let text = "S a b\r\nA 0 1|||R:X|||c|||REQUIRED|||-NONE-|||0\r\n\r\n\r\n";
        let blocks = parse_m2(text).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].edit_set(0).hypothesis().to_string(), "c b");
    }
}
