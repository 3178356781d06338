use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use esh_core::aggregate::{TypeTally, UNTYPED};
use esh_core::edits::jsonl::read_edit_sets;
use esh_core::edits::m2::parse_m2;
use esh_core::{normalize, AttributionResult, EditSet, Method, Sentence};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Edit sets from a JSONL file or from one annotator of an M2 file.
pub fn load_dataset(input: Option<&Path>, m2: Option<&Path>, annotator: usize) -> Result<Vec<EditSet>, CliError> {
    match (input, m2) {
        (Some(path), None) => {
            read_edit_sets(&read_text(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
        }
        (None, Some(path)) => Ok(parse_m2(&read_text(path)?)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
            .iter()
            .map(|b| b.edit_set(annotator))
            .collect()),
        _ => Err(CliError::Input("give exactly one of --input or --m2".into())),
    }
}

/// Reference corrections per sentence: every line-aligned text file, then
/// every annotator of each M2 file.
pub fn load_references(texts: &[PathBuf], m2s: &[PathBuf], n_sentences: usize) -> Result<Vec<Vec<Sentence>>, CliError> {
    let mut refs = vec![Vec::new(); n_sentences];
    for path in texts {
        let text = read_text(path)?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() != n_sentences {
            return Err(CliError::Input(format!(
                "{}: {} lines for {n_sentences} sentences",
                path.display(),
                lines.len()
            )));
        }
        for (slot, line) in refs.iter_mut().zip(lines) {
            slot.push(Sentence::parse(line));
        }
    }
    for path in m2s {
        let blocks = parse_m2(&read_text(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if blocks.len() != n_sentences {
            return Err(CliError::Input(format!(
                "{}: {} blocks for {n_sentences} sentences",
                path.display(),
                blocks.len()
            )));
        }
        for (slot, block) in refs.iter_mut().zip(&blocks) {
            slot.extend(block.annotations.values().map(|es| es.hypothesis()));
        }
    }
    Ok(refs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditOutput {
    pub span: [usize; 2],
    pub replacement: String,
    #[serde(rename = "type")]
    pub error_type: Option<String>,
    pub phi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_norm: Option<f64>,
}

/// One line of `esh attribute` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub schema_version: u32,
    pub source: String,
    pub hypothesis: String,
    pub delta_m: f64,
    pub edits: Vec<EditOutput>,
    pub method: Method,
    pub scorer_calls: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<u64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub non_effective: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub t_capped: bool,
}

impl AttributionRecord {
    pub fn new(es: &EditSet, r: &AttributionResult, with_norm: bool, with_time: bool) -> Self {
        let edits = es
            .edits()
            .iter()
            .zip(r.raw.iter().zip(&r.normalized))
            .map(|(e, (&phi, &norm))| EditOutput {
                span: [e.start, e.end],
                replacement: e.replacement_text(),
                error_type: e.error_type.clone(),
                phi,
                phi_norm: with_norm.then_some(norm),
            })
            .collect();
        AttributionRecord {
            schema_version: SCHEMA_VERSION,
            source: es.source().to_string(),
            hypothesis: es.hypothesis().to_string(),
            delta_m: r.delta_m,
            edits,
            method: r.method,
            scorer_calls: r.scorer_calls,
            wall_time_s: with_time.then_some(r.wall_time_s),
            seed: r.seed,
            t: r.sampling_t,
            non_effective: r.non_effective,
            t_capped: r.t_capped,
        }
    }

    /// Normalized scores as written, or recomputed from `phi` when the
    /// record was produced without them.
    pub fn normalized(&self) -> Vec<f64> {
        match self.edits.iter().map(|e| e.phi_norm).collect::<Option<Vec<f64>>>() {
            Some(v) => v,
            None => normalize(&self.edits.iter().map(|e| e.phi).collect::<Vec<_>>()),
        }
    }

    pub fn tally_into(&self, tally: &mut TypeTally) {
        for (e, phi) in self.edits.iter().zip(self.normalized()) {
            tally.add(e.error_type.as_deref().unwrap_or(UNTYPED), phi);
        }
    }
}

pub fn read_records(path: &Path) -> Result<Vec<AttributionRecord>, CliError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: AttributionRecord =
            serde_json::from_str(line).map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(CliError::Input(format!(
                "{}:{}: unsupported schema_version {}",
                path.display(),
                i + 1,
                rec.schema_version
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Writes to `path`, or to stdout when it is `None` or `-`.
pub fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        Some(p) if p != Path::new("-") => {
            let f = fs::File::create(p).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))?;
            Ok(Box::new(io::BufWriter::new(f)))
        }
        _ => Ok(Box::new(io::BufWriter::new(io::stdout().lock()))),
    }
}

#[derive(Serialize)]
struct Report<'a, C: Serialize, B: Serialize> {
    schema_version: u32,
    command: &'a str,
    config: &'a C,
    #[serde(flatten)]
    body: &'a B,
}

pub fn write_report<C: Serialize, B: Serialize>(
    path: Option<&Path>,
    command: &str,
    config: &C,
    body: &B,
) -> Result<(), CliError> {
    let Some(path) = path else { return Ok(()) };
    let report = Report {
        schema_version: SCHEMA_VERSION,
        command,
        config,
        body,
    };
    let json = serde_json::to_string_pretty(&report).expect("reports serialize");
    fs::write(path, json + "\n").map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

pub fn write_csv(path: Option<&Path>, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let Some(path) = path else { return Ok(()) };
    let out = |e: csv::Error| CliError::Output(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(out)?;
    w.write_record(header).map_err(out)?;
    for row in rows {
        w.write_record(row).map_err(out)?;
    }
    w.flush()
        .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

/// Number formatting for CSV cells; undefined values are left empty.
pub fn cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}
