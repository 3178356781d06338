//! Attribution of `ΔM(H|S) = M(H|S) - M(S|S)` to the players of an edit set.
//!
//! The game's value of a subset of players is the score gain of the source
//! with exactly those players' edits applied. Four methods are provided:
//!
//! * [`shapley_exact`] - the Shapley value, one pass over all `2^N` subsets.
//! * [`shapley_sampling`] - average marginal contributions over `T` sampled
//!   player orderings.
//! * [`attribute_add`] - each player's gain when applied alone to the source.
//! * [`attribute_sub`] - each player's loss when removed alone from the
//!   hypothesis.
//!
//! Add and Sub are rescaled so that the attributions sum to `ΔM`.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edits::{apply_subset, SubsetMask};
use crate::scorer::{Scorer, ScorerError};
use crate::types::{AttributionResult, EditSet, Method, MAX_PLAYERS};

/// Default cap on players for exact Shapley values.
pub const DEFAULT_MAX_EXACT: usize = 20;

/// Add/Sub marginal sums with magnitude at most this are treated as zero.
pub const RESCALE_EPSILON: f64 = 1e-12;

/// Masks are scored in batches of this many hypotheses.
const SCORE_BATCH: usize = 512;

/// Above this many players the exact weights are computed in log space.
const LINEAR_WEIGHT_LIMIT: usize = 15;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("{n} players exceed the exact Shapley cap of {cap}")]
    TooManyEdits { n: usize, cap: usize },
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

/// Memoized `ΔM` values of one edit set, keyed by player mask.
#[derive(Debug, Clone)]
pub struct SubsetCache {
    enabled: bool,
    values: HashMap<SubsetMask, f64>,
    source_score: Option<f64>,
    hits: u64,
    scorer_calls: u64,
}

impl Default for SubsetCache {
    fn default() -> Self {
        SubsetCache::new()
    }
}

impl SubsetCache {
    pub fn new() -> Self {
        SubsetCache {
            enabled: true,
            values: HashMap::new(),
            source_score: None,
            hits: 0,
            scorer_calls: 0,
        }
    }

    /// A cache that stores nothing: every lookup re-scores both terms.
    pub fn disabled() -> Self {
        SubsetCache {
            enabled: false,
            ..SubsetCache::new()
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    /// Number of sentences sent to the scorer so far.
    pub fn scorer_calls(&self) -> u64 {
        self.scorer_calls
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    /// Cached `ΔM` for `mask`; the empty mask is always `0.0`.
    pub fn get(&self, mask: SubsetMask) -> Option<f64> {
        if mask.is_empty() {
            return Some(0.0);
        }
        self.values.get(&mask).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Scores subsets of one edit set through a cache.
struct Game<'a> {
    scorer: &'a dyn Scorer,
    es: &'a EditSet,
    cache: &'a mut SubsetCache,
}

impl<'a> Game<'a> {
    fn new(scorer: &'a dyn Scorer, es: &'a EditSet, cache: &'a mut SubsetCache) -> Self {
        Game { scorer, es, cache }
    }

    fn source_score(&mut self) -> Result<f64, ScorerError> {
        if let Some(s) = self.cache.source_score.filter(|_| self.cache.enabled) {
            return Ok(s);
        }
        let src = self.es.source();
        let s = self.scorer.score(src, src)?;
        self.cache.scorer_calls += 1;
        if self.cache.enabled {
            self.cache.source_score = Some(s);
        }
        Ok(s)
    }

    /// Scores every uncached mask in `masks` (and the source) in batches.
    fn prefetch(&mut self, masks: &[SubsetMask]) -> Result<(), ScorerError> {
        if !self.cache.enabled {
            return Ok(());
        }
        let base = self.source_score()?;
        let mut seen = HashSet::new();
        let todo: Vec<SubsetMask> = masks
            .iter()
            .copied()
            .filter(|m| !m.is_empty() && !self.cache.values.contains_key(m) && seen.insert(*m))
            .collect();
        let src = self.es.source();
        for chunk in todo.chunks(SCORE_BATCH) {
            let hyps: Vec<_> = chunk.iter().map(|&m| apply_subset(self.es, m)).collect();
            let pairs: Vec<_> = hyps.iter().map(|h| (src, h)).collect();
            let scores = self.scorer.batch_score(&pairs)?;
            if scores.len() != chunk.len() {
                return Err(ScorerError::ScoreLengthMismatch {
                    expected: chunk.len(),
                    got: scores.len(),
                });
            }
            self.cache.scorer_calls += chunk.len() as u64;
            for (&m, s) in chunk.iter().zip(scores) {
                self.cache.values.insert(m, s - base);
            }
        }
        Ok(())
    }

    fn value(&mut self, mask: SubsetMask) -> Result<f64, ScorerError> {
        if mask.is_empty() {
            self.source_score()?;
            return Ok(0.0);
        }
        if let Some(v) = self.cache.values.get(&mask).filter(|_| self.cache.enabled) {
            self.cache.hits += 1;
            return Ok(*v);
        }
        let base = self.source_score()?;
        let hyp = apply_subset(self.es, mask);
        let s = self.scorer.score(self.es.source(), &hyp)?;
        self.cache.scorer_calls += 1;
        let v = s - base;
        if self.cache.enabled {
            self.cache.values.insert(mask, v);
        }
        Ok(v)
    }
}

/// `M(S_mask | S) - M(S | S)`, memoized in `cache`.
pub fn delta_m(
    scorer: &dyn Scorer,
    es: &EditSet,
    mask: SubsetMask,
    cache: &mut SubsetCache,
) -> Result<f64, ScorerError> {
    Game::new(scorer, es, cache).value(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Number of permutations.
    pub t: u64,
    pub seed: u64,
    pub without_replacement: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            t: 64,
            seed: 0,
            without_replacement: true,
        }
    }
}

impl SamplingConfig {
    pub fn new(t: u64, seed: u64) -> Self {
        SamplingConfig {
            t,
            seed,
            ..SamplingConfig::default()
        }
    }
}

/// Settings for [`attribute`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeOptions {
    pub sampling: SamplingConfig,
    pub max_exact: usize,
    pub caching: bool,
}

impl Default for AttributeOptions {
    fn default() -> Self {
        AttributeOptions {
            sampling: SamplingConfig::default(),
            max_exact: DEFAULT_MAX_EXACT,
            caching: true,
        }
    }
}

/// Runs `method` with a fresh cache.
pub fn attribute(
    scorer: &dyn Scorer,
    es: &EditSet,
    method: Method,
    opts: &AttributeOptions,
) -> Result<AttributionResult, AttributionError> {
    let mut cache = if opts.caching {
        SubsetCache::new()
    } else {
        SubsetCache::disabled()
    };
    match method {
        Method::Shapley => shapley_exact_with(scorer, es, &mut cache, opts.max_exact),
        Method::ShapleySampling => shapley_sampling_with(scorer, es, &opts.sampling, &mut cache),
        Method::Add => attribute_add_with(scorer, es, &mut cache),
        Method::Sub => attribute_sub_with(scorer, es, &mut cache),
    }
}

/// Sign-preserving L1 normalization; an all-zero input stays all zero.
pub fn normalize(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|v| v / total).collect()
}

fn check_players(es: &EditSet) -> Result<usize, AttributionError> {
    let n = es.num_players();
    if n > MAX_PLAYERS {
        return Err(AttributionError::TooManyEdits { n, cap: MAX_PLAYERS });
    }
    Ok(n)
}

fn finish(
    method: Method,
    delta_m: f64,
    raw: Vec<f64>,
    cache: &SubsetCache,
    calls_before: u64,
    started: Instant,
) -> AttributionResult {
    AttributionResult {
        method,
        delta_m,
        normalized: normalize(&raw),
        raw,
        scorer_calls: cache.scorer_calls - calls_before,
        wall_time_s: started.elapsed().as_secs_f64(),
        sampling_t: None,
        seed: None,
        unscaled: None,
        non_effective: false,
        t_capped: false,
    }
}

/// `w[k] = k! (n-k-1)! / n!`, the weight of a coalition of size `k`.
fn shapley_weights(n: usize) -> Vec<f64> {
    if n <= LINEAR_WEIGHT_LIMIT {
        let fact: Vec<u64> = (0..=n as u64)
            .scan(1u64, |acc, i| {
                *acc *= i.max(1);
                Some(*acc)
            })
            .collect();
        (0..n)
            .map(|k| (fact[k] * fact[n - k - 1]) as f64 / fact[n] as f64)
            .collect()
    } else {
        let ln_fact: Vec<f64> = (0..=n)
            .scan(0.0f64, |acc, i| {
                if i > 1 {
                    *acc += (i as f64).ln();
                }
                Some(*acc)
            })
            .collect();
        (0..n)
            .map(|k| (ln_fact[k] + ln_fact[n - k - 1] - ln_fact[n]).exp())
            .collect()
    }
}

/// Exact Shapley values with a fresh cache and the default player cap.
pub fn shapley_exact(scorer: &dyn Scorer, es: &EditSet) -> Result<AttributionResult, AttributionError> {
    shapley_exact_with(scorer, es, &mut SubsetCache::new(), DEFAULT_MAX_EXACT)
}

pub fn shapley_exact_with(
    scorer: &dyn Scorer,
    es: &EditSet,
    cache: &mut SubsetCache,
    max_players: usize,
) -> Result<AttributionResult, AttributionError> {
    let started = Instant::now();
    let n = es.num_players();
    let cap = max_players.min(MAX_PLAYERS);
    if n > cap {
        return Err(AttributionError::TooManyEdits { n, cap });
    }
    let calls_before = cache.scorer_calls;
    let enabled = cache.enabled;
    let mut game = Game::new(scorer, es, cache);
    let size = 1usize << n;
    let weights = shapley_weights(n);
    let mut phi = vec![0.0; n];

    let delta_m = if enabled {
        let masks: Vec<SubsetMask> = (0..size as u32).map(SubsetMask::from_bits).collect();
        game.prefetch(&masks)?;
        let mut values = Vec::with_capacity(size);
        for &m in &masks {
            values.push(game.value(m)?);
        }
        accumulate_exact(n, &weights, &mut phi, |m| Ok(values[m.bits() as usize]))?;
        values[size - 1]
    } else {
        accumulate_exact(n, &weights, &mut phi, |m| game.value(m))?;
        game.value(SubsetMask::full(n))?
    };

    Ok(finish(Method::Shapley, delta_m, phi, cache, calls_before, started))
}

fn accumulate_exact(
    n: usize,
    weights: &[f64],
    phi: &mut [f64],
    mut value: impl FnMut(SubsetMask) -> Result<f64, ScorerError>,
) -> Result<(), ScorerError> {
    for bits in 0..(1u32 << n) {
        let mask = SubsetMask::from_bits(bits);
        let k = mask.len();
        if k == n {
            continue;
        }
        let without = value(mask)?;
        let w = weights[k];
        for (i, slot) in phi.iter_mut().enumerate() {
            if !mask.contains(i) {
                *slot += w * (value(mask.with(i))? - without);
            }
        }
    }
    Ok(())
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

/// All permutations of `0..n` in lexicographic order.
fn all_permutations(n: usize) -> Vec<Vec<u8>> {
    let mut perm: Vec<u8> = (0..n as u8).collect();
    let mut out = vec![perm.clone()];
    loop {
        let Some(i) = (1..perm.len()).rev().find(|&i| perm[i - 1] < perm[i]) else {
            return out;
        };
        let j = (i..perm.len())
            .rev()
            .find(|&j| perm[j] > perm[i - 1])
            .expect("pivot exists");
        perm.swap(i - 1, j);
        perm[i..].reverse();
        out.push(perm.clone());
    }
}

/// Draws the orderings used by [`shapley_sampling`]. Returns the
/// permutations and whether `t` had to be capped at `n!`.
pub fn sample_permutations(n: usize, cfg: &SamplingConfig) -> (Vec<Vec<u8>>, bool) {
    let total = factorial(n);
    let t = cfg.t.max(1);
    if cfg.without_replacement && u128::from(t) >= total {
        return (all_permutations(n), u128::from(t) > total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut perm: Vec<u8> = (0..n as u8).collect();
    let mut out = Vec::with_capacity(t as usize);
    let mut seen = HashSet::new();
    while (out.len() as u64) < t {
        perm.shuffle(&mut rng);
        if !cfg.without_replacement || seen.insert(perm.clone()) {
            out.push(perm.clone());
        }
    }
    (out, false)
}

pub fn shapley_sampling(
    scorer: &dyn Scorer,
    es: &EditSet,
    cfg: &SamplingConfig,
) -> Result<AttributionResult, AttributionError> {
    shapley_sampling_with(scorer, es, cfg, &mut SubsetCache::new())
}

/// Shapley sampling values over `cfg.t` permutations. Requesting at least
/// `N!` permutations without replacement enumerates them all, which
/// reproduces the exact values.
pub fn shapley_sampling_with(
    scorer: &dyn Scorer,
    es: &EditSet,
    cfg: &SamplingConfig,
    cache: &mut SubsetCache,
) -> Result<AttributionResult, AttributionError> {
    let started = Instant::now();
    let n = check_players(es)?;
    let calls_before = cache.scorer_calls;
    let mut game = Game::new(scorer, es, cache);
    if n == 0 {
        game.source_score()?;
        let mut res = finish(Method::ShapleySampling, 0.0, Vec::new(), cache, calls_before, started);
        res.sampling_t = Some(0);
        res.seed = Some(cfg.seed);
        return Ok(res);
    }

    let (perms, t_capped) = sample_permutations(n, cfg);
    let prefix_masks: Vec<SubsetMask> = perms
        .iter()
        .flat_map(|p| {
            p.iter().scan(SubsetMask::EMPTY, |m, &i| {
                *m = m.with(i as usize);
                Some(*m)
            })
        })
        .collect();
    game.prefetch(&prefix_masks)?;

    let mut phi = vec![0.0; n];
    for perm in &perms {
        let mut mask = SubsetMask::EMPTY;
        let mut prev = game.value(mask)?;
        for &i in perm {
            mask = mask.with(i as usize);
            let v = game.value(mask)?;
            phi[i as usize] += v - prev;
            prev = v;
        }
    }
    let t = perms.len() as f64;
    for v in &mut phi {
        *v /= t;
    }
    let delta_m = game.value(SubsetMask::full(n))?;
    let mut res = finish(Method::ShapleySampling, delta_m, phi, cache, calls_before, started);
    res.sampling_t = Some(perms.len() as u64);
    res.seed = Some(cfg.seed);
    res.t_capped = t_capped;
    Ok(res)
}

pub fn attribute_add(scorer: &dyn Scorer, es: &EditSet) -> Result<AttributionResult, AttributionError> {
    attribute_add_with(scorer, es, &mut SubsetCache::new())
}

pub fn attribute_add_with(
    scorer: &dyn Scorer,
    es: &EditSet,
    cache: &mut SubsetCache,
) -> Result<AttributionResult, AttributionError> {
    one_subset(scorer, es, cache, Method::Add)
}

pub fn attribute_sub(scorer: &dyn Scorer, es: &EditSet) -> Result<AttributionResult, AttributionError> {
    attribute_sub_with(scorer, es, &mut SubsetCache::new())
}

pub fn attribute_sub_with(
    scorer: &dyn Scorer,
    es: &EditSet,
    cache: &mut SubsetCache,
) -> Result<AttributionResult, AttributionError> {
    one_subset(scorer, es, cache, Method::Sub)
}

fn one_subset(
    scorer: &dyn Scorer,
    es: &EditSet,
    cache: &mut SubsetCache,
    method: Method,
) -> Result<AttributionResult, AttributionError> {
    let started = Instant::now();
    let n = check_players(es)?;
    let calls_before = cache.scorer_calls;
    let mut game = Game::new(scorer, es, cache);
    let full = SubsetMask::full(n);
    let probes: Vec<SubsetMask> = (0..n)
        .map(|i| match method {
            Method::Add => SubsetMask::EMPTY.with(i),
            _ => full.without(i),
        })
        .chain([full])
        .collect();
    game.prefetch(&probes)?;
    let delta_m = game.value(full)?;
    let mut unscaled = Vec::with_capacity(n);
    for &m in &probes[..n] {
        let v = game.value(m)?;
        unscaled.push(match method {
            Method::Add => v,
            _ => delta_m - v,
        });
    }
    let sum: f64 = unscaled.iter().sum();
    let non_effective = n > 0 && sum.abs() <= RESCALE_EPSILON;
    let raw = if non_effective || n == 0 {
        unscaled.clone()
    } else {
        let factor = delta_m / sum;
        unscaled.iter().map(|v| v * factor).collect()
    };
    let mut res = finish(method, delta_m, raw, cache, calls_before, started);
    res.unscaled = Some(unscaled);
    res.non_effective = non_effective;
    Ok(res)
}
