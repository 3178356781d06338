use std::io::{BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use esh_core::aggregate::{TypeMean, TypeTally};
use esh_core::attribution::{attribute as run_method, AttributeOptions};
use esh_core::evaluation::{
    benchmark_timing, evaluate_agreement, evaluate_consistency, evaluate_sampling_error, threshold_curve,
    AgreementReport, ConsistencyReport, ConsistencySkips, EvaluationError, ThresholdMode,
};
use esh_core::scorer::{serve as serve_protocol, NGramLm, ScorerSpec};
use esh_core::{EditSet, Method, SamplingConfig, Scorer, Sentence};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

use crate::error::CliError;
use crate::io::{
    cell, load_dataset, load_references, open_output, read_records, read_text, write_csv, write_report,
    AttributionRecord,
};
use crate::{
    AggregateArgs, AgreementArgs, AttributeArgs, BenchArgs, ConsistencyArgs, InputArgs, SamplingErrorArgs, ScoringArgs,
    ServeArgs, TrainLmArgs,
};

fn dataset(input: &InputArgs) -> Result<Vec<EditSet>, CliError> {
    load_dataset(input.input.as_deref(), input.m2.as_deref(), input.annotator)
}

fn build_scorer(spec: &str) -> Result<Box<dyn Scorer>, CliError> {
    Ok(ScorerSpec::parse(spec)?.build()?)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Input(format!("cannot start {jobs} workers: {e}")))
}

fn options(s: &ScoringArgs) -> AttributeOptions {
    AttributeOptions {
        sampling: SamplingConfig::new(s.t, s.seed),
        max_exact: s.max_edits,
        caching: true,
    }
}

/// Puts the dataset index back on errors from a one-sentence evaluation.
fn reindex(idx: usize) -> impl FnOnce(EvaluationError) -> CliError {
    move |e| match e {
        EvaluationError::Attribution { source, .. } => CliError::attribution(idx, source),
        other => other.into(),
    }
}

pub fn attribute(a: &AttributeArgs) -> Result<(), CliError> {
    let data = dataset(&a.input)?;
    let scorer = build_scorer(&a.scoring.scorer)?;
    let method: Method = a.scoring.method.into();
    let cap = a.scoring.max_edits;
    let plan = data
        .iter()
        .enumerate()
        .map(|(i, es)| match es.num_players() {
            n if method == Method::Shapley && n > cap => {
                if a.auto_sampling {
                    Ok(Method::ShapleySampling)
                } else {
                    Err(CliError::Cap { sentence: i, n, cap })
                }
            }
            _ => Ok(method),
        })
        .collect::<Result<Vec<_>, _>>()?;

    let opts = options(&a.scoring);
    let results = pool(a.scoring.jobs)?.install(|| {
        data.par_iter()
            .zip(&plan)
            .enumerate()
            .map(|(i, (es, &m))| run_method(&*scorer, es, m, &opts).map_err(|e| CliError::attribution(i, e)))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut out = open_output(a.output.as_deref())?;
    let write_err = |e: std::io::Error| CliError::Output(format!("output: {e}"));
    for (es, r) in data.iter().zip(&results) {
        let rec = AttributionRecord::new(es, r, a.normalize, !a.omit_timing);
        serde_json::to_writer(&mut out, &rec).expect("records serialize");
        out.write_all(b"\n").map_err(write_err)?;
    }
    out.flush().map_err(write_err)?;

    let edits: usize = data.iter().map(|es| es.edits().len()).sum();
    let calls: u64 = results.iter().map(|r| r.scorer_calls).sum();
    let sampled = plan.iter().filter(|&&m| m != method).count();
    eprintln!(
        "attributed {} sentences, {edits} edits ({}); {calls} scorer calls{}",
        data.len(),
        method.as_str(),
        if sampled > 0 {
            format!(", {sampled} sentences sampled")
        } else {
            String::new()
        }
    );
    Ok(())
}

/// Sentences with at most `max_edits` players, with their dataset index.
fn within_cap(data: &[EditSet], max_edits: usize) -> Vec<(usize, &EditSet)> {
    data.iter()
        .enumerate()
        .filter(|(_, es)| es.num_players() <= max_edits)
        .collect()
}

#[derive(Serialize)]
struct ConsistencyBody<'a> {
    n_over_cap: usize,
    report: &'a ConsistencyReport,
}

pub fn consistency(a: &ConsistencyArgs) -> Result<(), CliError> {
    let data = dataset(&a.input)?;
    let scorer = build_scorer(&a.scoring.scorer)?;
    let method: Method = a.scoring.method.into();
    let opts = options(&a.scoring);
    let kept = within_cap(&data, a.scoring.max_edits);
    let parts = pool(a.scoring.jobs)?.install(|| {
        kept.par_iter()
            .map(|&(idx, es)| {
                evaluate_consistency(&*scorer, method, std::slice::from_ref(es), &opts)
                    .map(|r| (idx, r))
                    .map_err(reindex(idx))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut records = Vec::new();
    let mut skipped = ConsistencySkips::default();
    for (idx, part) in parts {
        skipped.fewer_than_two_edits += part.skipped.fewer_than_two_edits;
        skipped.all_zero += part.skipped.all_zero;
        skipped.single_group += part.skipped.single_group;
        records.extend(part.records.into_iter().map(|mut r| {
            r.sentence = idx;
            r
        }));
    }
    let report = ConsistencyReport::from_records(method, records, skipped);
    let body = ConsistencyBody {
        n_over_cap: data.len() - kept.len(),
        report: &report,
    };
    write_report(a.out.report.as_deref(), "consistency", a, &body)?;

    let rows: Vec<Vec<String>> = report
        .records
        .iter()
        .flat_map(|r| {
            (0..r.group_masks.len()).map(move |g| {
                let members: Vec<String> = r.group_masks[g].iter().map(usize::to_string).collect();
                vec![
                    r.sentence.to_string(),
                    g.to_string(),
                    members.join(" "),
                    cell(r.predicted_group_scores[g]),
                    cell(r.observed_group_scores[g]),
                    r.signs_agree[g].to_string(),
                ]
            })
        })
        .collect();
    write_csv(
        a.out.csv.as_deref(),
        &["sentence", "group", "edits", "predicted", "observed", "signs_agree"],
        &rows,
    )?;

    println!("method            {}", method.as_str());
    println!("sentences         {} ({} groups)", report.n_sentences, report.n_groups);
    println!(
        "skipped           {} under two edits, {} all zero, {} single group, {} over cap",
        skipped.fewer_than_two_edits, skipped.all_zero, skipped.single_group, body.n_over_cap
    );
    println!("sign agreement    {:.4}", report.sign_agreement_ratio);
    println!("pearson           {:.4}", report.pearson);
    println!("spearman          {:.4}", report.spearman);
    Ok(())
}

#[derive(Serialize)]
struct AgreementBody<'a> {
    accuracy: f64,
    n_over_cap: usize,
    report: &'a AgreementReport,
}

pub fn agreement(a: &AgreementArgs) -> Result<(), CliError> {
    let data = dataset(&a.input)?;
    if a.references.is_empty() && a.reference_m2.is_empty() {
        return Err(CliError::Input("give --references or --reference-m2".into()));
    }
    let refs = load_references(&a.references, &a.reference_m2, data.len())?;
    let scorer = build_scorer(&a.scoring.scorer)?;
    let method: Method = a.scoring.method.into();
    let mode: ThresholdMode = a.threshold_mode.into();
    let opts = options(&a.scoring);
    let kept = within_cap(&data, a.scoring.max_edits);
    let parts = pool(a.scoring.jobs)?.install(|| {
        kept.par_iter()
            .map(|&(idx, es)| {
                evaluate_agreement(
                    &*scorer,
                    method,
                    std::slice::from_ref(es),
                    std::slice::from_ref(&refs[idx]),
                    &opts,
                    mode,
                )
                .map(|r| (idx, r))
                .map_err(reindex(idx))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut records = Vec::new();
    let (mut n_sentences, mut n_skipped, mut n_zero_edits) = (0, 0, 0);
    for (idx, part) in parts {
        n_sentences += part.n_sentences;
        n_skipped += part.n_skipped;
        n_zero_edits += part.n_zero_edits;
        records.extend(part.records.into_iter().map(|mut r| {
            r.sentence = idx;
            r
        }));
    }
    let report = AgreementReport {
        method,
        threshold_mode: mode,
        curve: threshold_curve(&records, mode),
        records,
        n_sentences,
        n_skipped,
        n_zero_edits,
    };
    let body = AgreementBody {
        accuracy: report.accuracy(),
        n_over_cap: data.len() - kept.len(),
        report: &report,
    };
    write_report(a.out.report.as_deref(), "agreement", a, &body)?;
    let rows: Vec<Vec<String>> = report
        .curve
        .iter()
        .map(|p| vec![format!("{:.1}", p.threshold), cell(p.accuracy), p.n_edits.to_string()])
        .collect();
    write_csv(a.out.csv.as_deref(), &["threshold", "accuracy", "n_edits"], &rows)?;

    println!("method            {}", method.as_str());
    println!(
        "sentences         {} ({} under two edits, {} over cap)",
        n_sentences, n_skipped, body.n_over_cap
    );
    println!(
        "edits             {} ({} zero, excluded)",
        report.records.len(),
        n_zero_edits
    );
    println!("accuracy          {:.4}", body.accuracy);
    Ok(())
}

pub fn sampling_error(a: &SamplingErrorArgs) -> Result<(), CliError> {
    let data = dataset(&a.input)?;
    let scorer = build_scorer(&a.scorer)?;
    let mut reports = Vec::new();
    for &t in &a.t {
        let cfg = SamplingConfig::new(t, a.seed);
        reports.push(evaluate_sampling_error(&*scorer, &data, &cfg, a.max_edits)?);
    }
    #[derive(Serialize)]
    struct Body<'a> {
        rows: &'a [esh_core::evaluation::SamplingErrorReport],
    }
    write_report(a.out.report.as_deref(), "sampling-error", a, &Body { rows: &reports })?;
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.t.to_string(),
                cell(r.mean_abs_error),
                cell(r.mean_time_exact_s),
                cell(r.mean_time_sampling_s),
                cell(r.mean_abs_shapley),
                cell(r.std_abs_shapley),
                r.n_sentences.to_string(),
                r.n_edits.to_string(),
            ]
        })
        .collect();
    write_csv(
        a.out.csv.as_deref(),
        &[
            "t",
            "mean_abs_error",
            "mean_time_exact_s",
            "mean_time_sampling_s",
            "mean_abs_shapley",
            "std_abs_shapley",
            "n_sentences",
            "n_edits",
        ],
        &rows,
    )?;
    println!(
        "{:>6} {:>14} {:>12} {:>12}",
        "T", "mean |error|", "exact s", "sampled s"
    );
    for r in &reports {
        println!(
            "{:>6} {:>14.6} {:>12.6} {:>12.6}",
            r.t, r.mean_abs_error, r.mean_time_exact_s, r.mean_time_sampling_s
        );
    }
    if let Some(r) = reports.first() {
        println!(
            "{} sentences, {} edits, {} skipped; mean |phi| {:.6} (sd {:.6})",
            r.n_sentences, r.n_edits, r.n_skipped, r.mean_abs_shapley, r.std_abs_shapley
        );
    }
    Ok(())
}

/// `NAME=PATH` or `PATH` (named after the file stem).
fn system_source(arg: &str) -> (String, PathBuf) {
    if !Path::new(arg).exists() {
        if let Some((name, path)) = arg.split_once('=') {
            return (name.to_owned(), PathBuf::from(path));
        }
    }
    let path = PathBuf::from(arg);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| arg.to_owned());
    (name, path)
}

const TALLY_CHUNK: usize = 256;

/// One tally per system. Chunks are tallied in parallel and merged in
/// input order, so the sums do not depend on the thread count.
fn tallies(a: &AggregateArgs) -> Result<Vec<(String, TypeTally)>, CliError> {
    let pool = pool(a.jobs)?;
    a.results
        .iter()
        .map(|arg| {
            let (name, path) = system_source(arg);
            let records = read_records(&path)?;
            let parts: Vec<TypeTally> = pool.install(|| {
                records
                    .par_chunks(TALLY_CHUNK)
                    .map(|chunk| {
                        let mut t = TypeTally::new();
                        for rec in chunk {
                            rec.tally_into(&mut t);
                        }
                        t
                    })
                    .collect()
            });
            let tally = parts.iter().fold(TypeTally::new(), |acc, t| acc.merge(t));
            Ok((name, tally))
        })
        .collect()
}

fn all_types(tallies: &[(String, TypeTally)]) -> Vec<String> {
    let set: BTreeSet<&String> = tallies.iter().flat_map(|(_, t)| t.0.keys()).collect();
    set.into_iter().cloned().collect()
}

/// Rows are systems, columns error types; missing cells are empty.
fn matrix(a: &AggregateArgs, types: &[String], rows: &[(String, BTreeMap<String, f64>)]) -> Result<(), CliError> {
    let mut header = vec!["system"];
    header.extend(types.iter().map(String::as_str));
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, values)| {
            let mut row = vec![name.clone()];
            row.extend(
                types
                    .iter()
                    .map(|t| values.get(t).map(|v| cell(*v)).unwrap_or_default()),
            );
            row
        })
        .collect();
    write_csv(a.out.csv.as_deref(), &header, &cells)
}

pub fn aggregate(a: &AggregateArgs) -> Result<(), CliError> {
    let tallies = tallies(a)?;
    let types = all_types(&tallies);
    let means: Vec<(String, BTreeMap<String, TypeMean>)> = tallies
        .iter()
        .map(|(name, t)| (name.clone(), t.means(a.min_support)))
        .collect();
    #[derive(Serialize)]
    struct Body<'a> {
        error_types: &'a [String],
        systems: BTreeMap<&'a str, &'a BTreeMap<String, TypeMean>>,
    }
    let body = Body {
        error_types: &types,
        systems: means.iter().map(|(n, m)| (n.as_str(), m)).collect(),
    };
    write_report(a.out.report.as_deref(), "aggregate", a, &body)?;
    let rows: Vec<(String, BTreeMap<String, f64>)> = means
        .iter()
        .map(|(n, m)| (n.clone(), m.iter().map(|(k, v)| (k.clone(), v.mean)).collect()))
        .collect();
    matrix(a, &types, &rows)?;

    for (name, m) in &means {
        println!("{name}");
        for (ty, v) in m {
            let flag = if v.low_support { "  (low support)" } else { "" };
            println!("  {ty:<16} {:>9.4}  n={}{flag}", v.mean, v.count);
        }
    }
    Ok(())
}

pub fn precision(a: &AggregateArgs) -> Result<(), CliError> {
    let tallies = tallies(a)?;
    let types = all_types(&tallies);
    let rows: Vec<(String, BTreeMap<String, f64>)> = tallies.iter().map(|(n, t)| (n.clone(), t.precision())).collect();
    #[derive(Serialize)]
    struct Body<'a> {
        error_types: &'a [String],
        systems: BTreeMap<&'a str, &'a BTreeMap<String, f64>>,
    }
    let body = Body {
        error_types: &types,
        systems: rows.iter().map(|(n, p)| (n.as_str(), p)).collect(),
    };
    write_report(a.out.report.as_deref(), "precision", a, &body)?;
    matrix(a, &types, &rows)?;
    for (name, p) in &rows {
        println!("{name}");
        for (ty, v) in p {
            println!("  {ty:<16} {v:>7.4}");
        }
    }
    Ok(())
}

pub fn bench(a: &BenchArgs) -> Result<(), CliError> {
    let scorer = build_scorer(&a.scorer)?;
    let points = benchmark_timing(&*scorer, a.n.clone(), a.reps, a.seed).map_err(|e| CliError::attribution(0, e))?;
    #[derive(Serialize)]
    struct Body<'a> {
        points: &'a [esh_core::evaluation::TimingPoint],
    }
    write_report(a.out.report.as_deref(), "bench", a, &Body { points: &points })?;
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.n.to_string(),
                cell(p.mean_s),
                cell(p.std_s),
                cell(p.median_s),
                p.scorer_calls.to_string(),
            ]
        })
        .collect();
    write_csv(
        a.out.csv.as_deref(),
        &["n", "mean_s", "std_s", "median_s", "scorer_calls"],
        &rows,
    )?;
    println!(
        "{:>3} {:>12} {:>12} {:>12} {:>8}",
        "N", "mean s", "sd s", "median s", "calls"
    );
    for p in &points {
        println!(
            "{:>3} {:>12.6} {:>12.6} {:>12.6} {:>8}",
            p.n, p.mean_s, p.std_s, p.median_s, p.scorer_calls
        );
    }
    Ok(())
}

pub fn train_lm(a: &TrainLmArgs) -> Result<(), CliError> {
    let text = read_text(&a.corpus)?;
    let corpus: Vec<Sentence> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(Sentence::parse)
        .collect();
    let model = NGramLm::new(a.order, a.alpha)
        .map_err(|e| CliError::Input(e.to_string()))?
        .train(&corpus);
    std::fs::write(&a.output, model.to_json()).map_err(|e| CliError::Output(format!("{}: {e}", a.output.display())))?;
    println!(
        "trained order-{} model on {} sentences, vocabulary {}",
        a.order,
        corpus.len(),
        model.vocab_size()
    );
    Ok(())
}

pub fn serve(a: &ServeArgs) -> Result<(), CliError> {
    let scorer = build_scorer(&a.scorer)?;
    let io_err = |e: std::io::Error| CliError::Output(format!("serve: {e}"));
    match &a.listen {
        None => {
            let stdin = std::io::stdin();
            serve_protocol(&*scorer, stdin.lock(), std::io::stdout().lock()).map_err(io_err)
        }
        Some(addr) => {
            let listener = TcpListener::bind(addr).map_err(io_err)?;
            eprintln!("listening on {}", listener.local_addr().map_err(io_err)?);
            for stream in listener.incoming() {
                let stream = stream.map_err(io_err)?;
                let reader = BufReader::new(stream.try_clone().map_err(io_err)?);
                if let Err(e) = serve_protocol(&*scorer, reader, stream) {
                    eprintln!("connection closed: {e}");
                }
            }
            Ok(())
        }
    }
}
