//! `esh`: attribute sentence-level GEC metric scores to individual edits.
//!
//! Exit codes: 0 success, 1 input error, 2 scorer or bridge error,
//! 3 an edit set exceeds `--max-edits` without `--auto-sampling`.

mod commands;
mod error;
mod io;

use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use esh_core::evaluation::ThresholdMode;
use esh_core::Method;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "esh", version, about = "Edit-level Shapley attribution of GEC metric scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Attribute each sentence's score change to its edits (JSONL out).
    Attribute(AttributeArgs),
    /// Check that a sign group's attribution equals the sum of its members'.
    Consistency(ConsistencyArgs),
    /// Compare attribution signs with reference-based edit labels.
    Agreement(AgreementArgs),
    /// Error of permutation sampling against exact Shapley values.
    SamplingError(SamplingErrorArgs),
    /// Mean normalized attribution per error type.
    Aggregate(AggregateArgs),
    /// Attribution-weighted precision per error type.
    Precision(AggregateArgs),
    /// Time exact Shapley on synthetic sentences of growing edit count.
    Bench(BenchArgs),
    /// Train an n-gram language model for use with `--scorer ngram:PATH`.
    TrainLm(TrainLmArgs),
    /// Serve a scorer over the JSON-lines protocol on stdio or TCP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum MethodArg {
    Shapley,
    Sampling,
    Add,
    Sub,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Shapley => Method::Shapley,
            MethodArg::Sampling => Method::ShapleySampling,
            MethodArg::Add => Method::Add,
            MethodArg::Sub => Method::Sub,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ThresholdArg {
    Below,
    Above,
}

impl From<ThresholdArg> for ThresholdMode {
    fn from(m: ThresholdArg) -> Self {
        match m {
            ThresholdArg::Below => ThresholdMode::Below,
            ThresholdArg::Above => ThresholdMode::Above,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct InputArgs {
    /// JSONL with `source`, `hypothesis` and optional `edits` per line.
    #[arg(long, conflicts_with = "m2")]
    input: Option<PathBuf>,
    /// M2 file; edits of `--annotator` are used.
    #[arg(long)]
    m2: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    annotator: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ScoringArgs {
    /// ngram:PATH, additive:PATH, external:CMD, external:HOST:PORT or
    /// stub[:SLOPE[,INTERCEPT]].
    #[arg(long, env = "ESH_SCORER")]
    scorer: String,
    #[arg(long, value_enum, env = "ESH_METHOD", default_value = "shapley")]
    method: MethodArg,
    /// Permutations for sampling.
    #[arg(long, env = "ESH_T", default_value_t = 64)]
    t: u64,
    #[arg(long, env = "ESH_SEED", default_value_t = 0)]
    seed: u64,
    /// Largest edit count attributed exactly.
    #[arg(long, env = "ESH_MAX_EDITS", default_value_t = 10)]
    max_edits: usize,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "ESH_JOBS", default_value_t = 0)]
    jobs: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ReportArgs {
    /// JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// CSV path.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct AttributeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    scoring: ScoringArgs,
    /// Sample sentences above --max-edits instead of failing.
    #[arg(long, env = "ESH_AUTO_SAMPLING")]
    auto_sampling: bool,
    /// Include `phi_norm` for each edit.
    #[arg(long)]
    normalize: bool,
    /// Leave out `wall_time_s` so repeated runs are byte-identical.
    #[arg(long)]
    omit_timing: bool,
    /// Output JSONL (default stdout).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ConsistencyArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    scoring: ScoringArgs,
    #[command(flatten)]
    out: ReportArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct AgreementArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    scoring: ScoringArgs,
    /// Reference corrections, one sentence per line; repeatable.
    #[arg(long = "references")]
    references: Vec<PathBuf>,
    /// M2 file whose annotators all serve as references; repeatable.
    #[arg(long = "reference-m2")]
    reference_m2: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "below")]
    threshold_mode: ThresholdArg,
    #[command(flatten)]
    out: ReportArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SamplingErrorArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, env = "ESH_SCORER")]
    scorer: String,
    /// Permutation counts to evaluate, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    t: Vec<u64>,
    #[arg(long, env = "ESH_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "ESH_MAX_EDITS", default_value_t = 10)]
    max_edits: usize,
    #[command(flatten)]
    out: ReportArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct AggregateArgs {
    /// Attribution JSONL files, one per system; `NAME=PATH` sets the row name.
    #[arg(required = true)]
    results: Vec<String>,
    /// Types seen this many times or fewer are flagged low-support.
    #[arg(long, default_value_t = esh_core::aggregate::DEFAULT_MIN_SUPPORT)]
    min_support: usize,
    /// Accepted for uniformity; aggregation is deterministic.
    #[arg(long, env = "ESH_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "ESH_JOBS", default_value_t = 0)]
    jobs: usize,
    #[command(flatten)]
    out: ReportArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct BenchArgs {
    #[arg(long, env = "ESH_SCORER", default_value = "stub")]
    scorer: String,
    /// Edit counts, `A..B` inclusive or a single number.
    #[arg(long, value_parser = parse_range, default_value = "2..8")]
    #[serde(serialize_with = "ser_range")]
    n: RangeInclusive<usize>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, env = "ESH_SEED", default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: ReportArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainLmArgs {
    /// Training text, one tokenized sentence per line.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ServeArgs {
    #[arg(long, env = "ESH_SCORER")]
    scorer: String,
    /// Listen on HOST:PORT instead of stdio.
    #[arg(long)]
    listen: Option<String>,
}

fn parse_range(s: &str) -> Result<RangeInclusive<usize>, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad number {t:?}"));
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.trim_start_matches('='))?),
        None => (num(s)?, num(s)?),
    };
    if a > b {
        return Err(format!("empty range {s}"));
    }
    Ok(a..=b)
}

fn ser_range<S: serde::Serializer>(r: &RangeInclusive<usize>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{}..{}", r.start(), r.end()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Attribute(a) => commands::attribute(&a),
        Command::Consistency(a) => commands::consistency(&a),
        Command::Agreement(a) => commands::agreement(&a),
        Command::SamplingError(a) => commands::sampling_error(&a),
        Command::Aggregate(a) => commands::aggregate(&a),
        Command::Precision(a) => commands::precision(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::TrainLm(a) => commands::train_lm(&a),
        Command::Serve(a) => commands::serve(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("esh: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
