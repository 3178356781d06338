//! Meta-evaluation of attribution methods: consistency under grouping,
//! agreement with reference-based labels, sampling error, and timing.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{
    attribute, shapley_exact_with, AttributeOptions, AttributionError, SamplingConfig, SubsetCache,
};
use crate::edits::extract_edits;
use crate::scorer::Scorer;
use crate::stats::{mean, pearson, spearman, std_dev};
use crate::synth::Synth;
use crate::types::{AttributionResult, EditSet, Method, Sentence};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("sentence {sentence} has no reference")]
    MissingReference { sentence: usize },
    #[error("{references} reference lists for {sentences} sentences")]
    ReferenceCountMismatch { sentences: usize, references: usize },
    #[error("sentence {sentence}: {source}")]
    Attribution { sentence: usize, source: AttributionError },
}

fn at(sentence: usize) -> impl FnOnce(AttributionError) -> EvaluationError {
    move |source| EvaluationError::Attribution { sentence, source }
}

/// `1`, `-1` or `0`; zero attributions have no sign.
fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceConsistency {
    pub sentence: usize,
    /// Member edits of each compared group (positive group first).
    pub group_masks: Vec<Vec<usize>>,
    /// Sum of the members' individual attributions.
    pub predicted_group_scores: Vec<f64>,
    /// Attribution of the group when re-attributed as one player.
    pub observed_group_scores: Vec<f64>,
    pub signs_agree: Vec<bool>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySkips {
    pub fewer_than_two_edits: usize,
    pub all_zero: usize,
    pub single_group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub method: Method,
    pub records: Vec<SentenceConsistency>,
    pub sign_agreement_ratio: f64,
    pub pearson: f64,
    pub spearman: f64,
    pub n_sentences: usize,
    pub n_groups: usize,
    pub skipped: ConsistencySkips,
}

impl ConsistencyReport {
    /// Builds the corpus aggregates from per-sentence records.
    pub fn from_records(method: Method, records: Vec<SentenceConsistency>, skipped: ConsistencySkips) -> Self {
        let predicted: Vec<f64> = records
            .iter()
            .flat_map(|r| r.predicted_group_scores.iter().copied())
            .collect();
        let observed: Vec<f64> = records
            .iter()
            .flat_map(|r| r.observed_group_scores.iter().copied())
            .collect();
        let agree = records.iter().flat_map(|r| &r.signs_agree).filter(|&&a| a).count();
        let n_groups = predicted.len();
        ConsistencyReport {
            method,
            sign_agreement_ratio: if n_groups == 0 {
                f64::NAN
            } else {
                agree as f64 / n_groups as f64
            },
            pearson: pearson(&predicted, &observed),
            spearman: spearman(&predicted, &observed),
            n_sentences: records.len(),
            n_groups,
            records,
            skipped,
        }
    }
}

/// Groups each sentence's edits by attribution sign, re-attributes the
/// grouped game and compares each group's attribution with the sum of its
/// members'. Zero-attributed edits stay as singleton players and are not
/// compared. Sentences whose grouping would leave a single player are
/// skipped and counted.
pub fn evaluate_consistency(
    scorer: &dyn Scorer,
    method: Method,
    dataset: &[EditSet],
    opts: &AttributeOptions,
) -> Result<ConsistencyReport, EvaluationError> {
    let mut records = Vec::new();
    let mut skipped = ConsistencySkips::default();
    for (idx, es) in dataset.iter().enumerate() {
        match sentence_consistency(scorer, method, es, opts).map_err(at(idx))? {
            Ok(mut rec) => {
                rec.sentence = idx;
                records.push(rec);
            }
            Err(Skip::Small) => skipped.fewer_than_two_edits += 1,
            Err(Skip::AllZero) => skipped.all_zero += 1,
            Err(Skip::SingleGroup) => skipped.single_group += 1,
        }
    }
    Ok(ConsistencyReport::from_records(method, records, skipped))
}

enum Skip {
    Small,
    AllZero,
    SingleGroup,
}

fn sentence_consistency(
    scorer: &dyn Scorer,
    method: Method,
    es: &EditSet,
    opts: &AttributeOptions,
) -> Result<Result<SentenceConsistency, Skip>, AttributionError> {
    let n = es.num_players();
    if n < 2 {
        return Ok(Err(Skip::Small));
    }
    let individual = attribute(scorer, es, method, opts)?;
    let mut positive = Vec::new();
    let mut negative = Vec::new();
    let mut zero = Vec::new();
    for (i, &v) in individual.raw.iter().enumerate() {
        match sign(v) {
            1 => positive.push(i),
            -1 => negative.push(i),
            _ => zero.push(vec![i]),
        }
    }
    if positive.is_empty() && negative.is_empty() {
        return Ok(Err(Skip::AllZero));
    }
    let compared: Vec<Vec<usize>> = [positive, negative].into_iter().filter(|g| !g.is_empty()).collect();
    let mut partition = compared.clone();
    partition.extend(zero);
    if partition.len() == 1 {
        return Ok(Err(Skip::SingleGroup));
    }
    let grouped = es.group(&partition).expect("sign groups partition the players");
    let regrouped = attribute(scorer, &grouped, method, opts)?;

    let predicted: Vec<f64> = compared
        .iter()
        .map(|g| g.iter().map(|&i| individual.raw[i]).sum())
        .collect();
    let observed: Vec<f64> = regrouped.raw[..compared.len()].to_vec();
    let signs_agree = predicted
        .iter()
        .zip(&observed)
        .map(|(p, o)| sign(*p) == sign(*o))
        .collect();
    let group_masks = compared
        .iter()
        .map(|g| g.iter().flat_map(|&p| es.groups()[p].iter().copied()).collect())
        .collect();
    Ok(Ok(SentenceConsistency {
        sentence: 0,
        group_masks,
        predicted_group_scores: predicted,
        observed_group_scores: observed,
        signs_agree,
    }))
}

/// Which edits a threshold admits into the accuracy computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// `|normalized| <= threshold`.
    #[default]
    Below,
    /// `|normalized| >= 1 - threshold`.
    Above,
}

/// Slack on threshold comparisons so that `k / 10` boundaries admit values
/// that equal them up to rounding.
const THRESHOLD_SLACK: f64 = 1e-12;

impl ThresholdMode {
    pub fn admits(self, abs_normalized: f64, threshold: f64) -> bool {
        match self {
            ThresholdMode::Below => abs_normalized <= threshold + THRESHOLD_SLACK,
            ThresholdMode::Above => abs_normalized >= 1.0 - threshold - THRESHOLD_SLACK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditAgreement {
    pub sentence: usize,
    /// Index among the re-extracted hypothesis edits.
    pub edit: usize,
    /// Attribution is positive.
    pub positive: bool,
    /// Edit appears among the reference's edits.
    pub correct: bool,
    pub abs_normalized: f64,
    pub reference: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub threshold: f64,
    pub accuracy: f64,
    pub n_edits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub method: Method,
    pub threshold_mode: ThresholdMode,
    pub records: Vec<EditAgreement>,
    pub curve: Vec<ThresholdPoint>,
    pub n_sentences: usize,
    pub n_skipped: usize,
    /// Edits left out because their attribution is exactly zero.
    pub n_zero_edits: usize,
}

impl AgreementReport {
    pub fn accuracy(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |p| p.accuracy)
    }
}

/// Reference label of each edit: whether the reference, diffed against
/// the same source, contains exactly the same change.
pub fn reference_labels(es: &EditSet, reference: &Sentence) -> Vec<bool> {
    let gold = extract_edits(es.source(), reference);
    es.edits()
        .iter()
        .map(|e| gold.edits().iter().any(|g| g.same_change(e)))
        .collect()
}

pub fn threshold_curve(records: &[EditAgreement], mode: ThresholdMode) -> Vec<ThresholdPoint> {
    (1..=10)
        .map(|k| {
            let threshold = k as f64 / 10.0;
            let admitted: Vec<&EditAgreement> = records
                .iter()
                .filter(|r| mode.admits(r.abs_normalized, threshold))
                .collect();
            let hits = admitted.iter().filter(|r| r.positive == r.correct).count();
            ThresholdPoint {
                threshold,
                accuracy: if admitted.is_empty() {
                    f64::NAN
                } else {
                    hits as f64 / admitted.len() as f64
                },
                n_edits: admitted.len(),
            }
        })
        .collect()
}

/// Agreement between attribution signs and reference-based labels.
///
/// Each hypothesis is re-diffed against its source and attributed over the
/// resulting edits, so that hypothesis and reference edits come from the
/// same extractor; sentences left with fewer than two edits are skipped.
/// With several references the one agreeing best with the attributions is
/// used per sentence.
pub fn evaluate_agreement(
    scorer: &dyn Scorer,
    method: Method,
    dataset: &[EditSet],
    references: &[Vec<Sentence>],
    opts: &AttributeOptions,
    mode: ThresholdMode,
) -> Result<AgreementReport, EvaluationError> {
    if references.len() != dataset.len() {
        return Err(EvaluationError::ReferenceCountMismatch {
            sentences: dataset.len(),
            references: references.len(),
        });
    }
    let mut records = Vec::new();
    let (mut n_sentences, mut n_skipped, mut n_zero_edits) = (0, 0, 0);
    for (idx, (es, refs)) in dataset.iter().zip(references).enumerate() {
        if refs.is_empty() {
            return Err(EvaluationError::MissingReference { sentence: idx });
        }
        // both sides go through the same extractor before matching
        let es = extract_edits(es.source(), &es.hypothesis());
        if es.num_players() < 2 {
            n_skipped += 1;
            continue;
        }
        n_sentences += 1;
        let res = attribute(scorer, &es, method, opts).map_err(at(idx))?;
        let (best, labels) = best_reference(&es, refs, &res);
        for (i, (&raw, &correct)) in res.raw.iter().zip(&labels).enumerate() {
            if raw == 0.0 {
                n_zero_edits += 1;
                continue;
            }
            records.push(EditAgreement {
                sentence: idx,
                edit: i,
                positive: raw > 0.0,
                correct,
                abs_normalized: res.normalized[i].abs(),
                reference: best,
            });
        }
    }
    Ok(AgreementReport {
        method,
        threshold_mode: mode,
        curve: threshold_curve(&records, mode),
        records,
        n_sentences,
        n_skipped,
        n_zero_edits,
    })
}

/// Index and labels of the reference with the most sign/label matches;
/// the first such reference wins ties.
fn best_reference(es: &EditSet, refs: &[Sentence], res: &AttributionResult) -> (usize, Vec<bool>) {
    let mut best: Option<(usize, usize, Vec<bool>)> = None;
    for (r, reference) in refs.iter().enumerate() {
        let labels = reference_labels(es, reference);
        let hits = res
            .raw
            .iter()
            .zip(&labels)
            .filter(|(&v, &c)| v != 0.0 && (v > 0.0) == c)
            .count();
        if best.as_ref().is_none_or(|(_, h, _)| hits > *h) {
            best = Some((r, hits, labels));
        }
    }
    let (r, _, labels) = best.expect("at least one reference");
    (r, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingErrorReport {
    pub t: u64,
    pub seed: u64,
    pub n_sentences: usize,
    pub n_skipped: usize,
    pub n_edits: usize,
    pub mean_abs_error: f64,
    pub mean_time_exact_s: f64,
    pub mean_time_sampling_s: f64,
    pub mean_abs_shapley: f64,
    pub std_abs_shapley: f64,
}

/// Mean absolute difference between sampled and exact Shapley values over
/// every edit, with per-sentence timings. Sentences with no edits or more
/// than `max_exact` players are skipped.
pub fn evaluate_sampling_error(
    scorer: &dyn Scorer,
    dataset: &[EditSet],
    cfg: &SamplingConfig,
    max_exact: usize,
) -> Result<SamplingErrorReport, EvaluationError> {
    let mut errors = Vec::new();
    let mut magnitudes = Vec::new();
    let mut t_exact = Vec::new();
    let mut t_sampled = Vec::new();
    let mut n_skipped = 0;
    for (idx, es) in dataset.iter().enumerate() {
        let n = es.num_players();
        if n == 0 || n > max_exact {
            n_skipped += 1;
            continue;
        }
        let exact = shapley_exact_with(scorer, es, &mut SubsetCache::new(), max_exact).map_err(at(idx))?;
        let opts = AttributeOptions {
            sampling: *cfg,
            ..AttributeOptions::default()
        };
        let sampled = attribute(scorer, es, Method::ShapleySampling, &opts).map_err(at(idx))?;
        t_exact.push(exact.wall_time_s);
        t_sampled.push(sampled.wall_time_s);
        for (a, b) in exact.raw.iter().zip(&sampled.raw) {
            errors.push((a - b).abs());
            magnitudes.push(a.abs());
        }
    }
    Ok(SamplingErrorReport {
        t: cfg.t,
        seed: cfg.seed,
        n_sentences: t_exact.len(),
        n_skipped,
        n_edits: errors.len(),
        mean_abs_error: mean(&errors),
        mean_time_exact_s: mean(&t_exact),
        mean_time_sampling_s: mean(&t_sampled),
        mean_abs_shapley: mean(&magnitudes),
        std_abs_shapley: std_dev(&magnitudes),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingPoint {
    pub n: usize,
    pub mean_s: f64,
    pub std_s: f64,
    pub median_s: f64,
    pub scorer_calls: u64,
}

/// Wall time of exact Shapley on `reps` synthetic sentences per edit count.
/// `scorer` must accept arbitrary sentences (e.g. a quality-only metric).
pub fn benchmark_timing(
    scorer: &dyn Scorer,
    n_range: impl IntoIterator<Item = usize>,
    reps: usize,
    seed: u64,
) -> Result<Vec<TimingPoint>, AttributionError> {
    let mut synth = Synth::new(seed, 50);
    let mut out = Vec::new();
    for n in n_range {
        let mut times = Vec::with_capacity(reps);
        let mut calls = 0;
        for _ in 0..reps.max(1) {
            let es = synth.edit_set(n);
            let started = Instant::now();
            let res = shapley_exact_with(scorer, &es, &mut SubsetCache::new(), n.max(1))?;
            times.push(started.elapsed().as_secs_f64());
            calls = res.scorer_calls;
        }
        let mut sorted = times.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median_s = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            (sorted[mid - 1] + sorted[mid]) / 2.0
        };
        out.push(TimingPoint {
            n,
            mean_s: mean(&times),
            std_s: std_dev(&times),
            median_s,
            scorer_calls: calls,
        });
    }
    Ok(out)
}
