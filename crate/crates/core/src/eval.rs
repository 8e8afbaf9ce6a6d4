//! Retrieval evaluation: MRR against sampled distractor pools, Top-1 MRR
//! over whole search spaces, and sign-based micro-matching accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ScenarioId;
use crate::engine::{rank_order, PreparedScores, ScoreError, Scorer};
use crate::scenario::AugmentedRecord;

/// Pool size that defines the "1x" magnitude.
pub const BASE_POOL: usize = 999;
pub const DEFAULT_DISTRACTORS: usize = 999;
pub const TOP_K: [usize; 3] = [1, 5, 10];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no ranks to average")]
    EmptyRanks,
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("{available} items cannot supply {requested} distractors per query")]
    InsufficientDistractors { requested: usize, available: usize },
    #[error("search-space index is empty")]
    EmptyIndex,
    #[error("no pairs to evaluate")]
    EmptyInput,
    #[error("query position {0} is outside the index")]
    BadQuery(usize),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

pub fn mrr(ranks: &[usize]) -> Result<f64, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::EmptyRanks);
    }
    if ranks.contains(&0) {
        return Err(EvalError::ZeroRank);
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

fn hit_rates(ranks: &[usize]) -> BTreeMap<usize, f64> {
    TOP_K
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64))
        .collect()
}

/// `round(size / 999)` followed by `x`, never below `1x`.
pub fn magnitude_label(search_space_size: usize) -> String {
    let m = (search_space_size as f64 / BASE_POOL as f64).round().max(1.0);
    format!("{}x", m as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalKind {
    Distractor,
    SearchSpace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: EvalKind,
    pub scenario: ScenarioId,
    pub mrr: f64,
    #[serde(with = "k_keys")]
    pub top_k_hits: BTreeMap<usize, f64>,
    pub n_queries: usize,
    /// Distinct codes the candidates were drawn from.
    pub search_space_size: usize,
    /// Candidates each query was ranked against (true item included).
    pub candidates_per_query: usize,
    pub magnitude_label: String,
    pub seed: u64,
}

/// Map keys as JSON strings, parsed back explicitly (tagged enums lose
/// serde_json's integer-key coercion).
mod k_keys {
    use std::collections::BTreeMap;

    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<usize, f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(m.iter().map(|(k, v)| (k.to_string(), v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| k.parse().map(|k| (k, v)).map_err(D::Error::custom))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroMatchReport {
    pub t_p: usize,
    pub t_q: usize,
    pub accuracy_percent: f64,
    pub score_min: f64,
    pub score_max: f64,
}

/// One query's outcome in a distractor run.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRank {
    pub query: usize,
    /// Eval-set positions ranked against, true item first.
    pub candidates: Vec<usize>,
    pub scores: Vec<f64>,
    pub rank: usize,
}

fn query_rng(seed: u64, query: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(query as u64);
    rng
}

/// The candidate pool for `query`: itself followed by `n_distractors`
/// distinct other positions drawn without replacement.
pub fn distractor_pool(n_items: usize, query: usize, n_distractors: usize, seed: u64) -> Result<Vec<usize>, EvalError> {
    if n_items == 0 || n_distractors > n_items - 1 {
        return Err(EvalError::InsufficientDistractors {
            requested: n_distractors,
            available: n_items.saturating_sub(1),
        });
    }
    let mut rng = query_rng(seed, query);
    let mut pool = Vec::with_capacity(n_distractors + 1);
    pool.push(query);
    pool.extend(
        index::sample(&mut rng, n_items - 1, n_distractors)
            .into_iter()
            .map(|i| if i >= query { i + 1 } else { i }),
    );
    Ok(pool)
}

/// 1-based position of `candidates[0]` under the ranking order.
fn true_rank(records: &[AugmentedRecord], candidates: &[usize], scores: &[f64]) -> usize {
    let t = candidates[0];
    let key = (scores[0], &records[t].source_key, t);
    1 + candidates
        .iter()
        .zip(scores)
        .skip(1)
        .filter(|&(&c, &s)| rank_order((s, &records[c].source_key, c), key).is_lt())
        .count()
}

fn prepare<'s>(scorer: &'s dyn Scorer, queries: &[&AugmentedRecord], codes: &[AugmentedRecord]) -> Result<Box<dyn PreparedScores + 's>, EvalError> {
    let qs: Vec<&[String]> = queries.iter().map(|r| r.x_tokens.tokens.as_slice()).collect();
    let cs: Vec<&[String]> = codes.iter().map(|r| r.y_tokens.tokens.as_slice()).collect();
    Ok(scorer.prepare(&qs, &cs)?)
}

/// Ranks of every query against its distractor pool.
pub fn distractor_ranks(
    scorer: &dyn Scorer,
    pairs: &[AugmentedRecord],
    n_distractors: usize,
    seed: u64,
) -> Result<Vec<QueryRank>, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if n_distractors > pairs.len() - 1 {
        return Err(EvalError::InsufficientDistractors {
            requested: n_distractors,
            available: pairs.len() - 1,
        });
    }
    let queries: Vec<&AugmentedRecord> = pairs.iter().collect();
    let mut prepared = prepare(scorer, &queries, pairs)?;
    (0..pairs.len())
        .map(|q| {
            let candidates = distractor_pool(pairs.len(), q, n_distractors, seed)?;
            let requests: Vec<(usize, usize)> = candidates.iter().map(|&c| (q, c)).collect();
            let scores = prepared.score(&requests)?;
            let rank = true_rank(pairs, &candidates, &scores);
            Ok(QueryRank {
                query: q,
                candidates,
                scores,
                rank,
            })
        })
        .collect()
}

/// Every pair's X is a query; its own Y plus `n_distractors` others form the pool.
pub fn distractor_eval(
    scorer: &dyn Scorer,
    pairs: &[AugmentedRecord],
    n_distractors: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let ranks: Vec<usize> = distractor_ranks(scorer, pairs, n_distractors, seed)?
        .into_iter()
        .map(|r| r.rank)
        .collect();
    Ok(EvalReport {
        kind: EvalKind::Distractor,
        scenario: pairs[0].scenario,
        mrr: mrr(&ranks)?,
        top_k_hits: hit_rates(&ranks),
        n_queries: ranks.len(),
        search_space_size: pairs.len(),
        candidates_per_query: n_distractors + 1,
        magnitude_label: magnitude_label(n_distractors + 1),
        seed,
    })
}

/// Ranks each selected query against the whole index. `queries` are index
/// positions; they are shuffled with `seed` and the first `n_queries` kept.
pub fn search_space_eval(
    scorer: &dyn Scorer,
    index_records: &[AugmentedRecord],
    queries: &[usize],
    n_queries: Option<usize>,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if index_records.is_empty() {
        return Err(EvalError::EmptyIndex);
    }
    if let Some(&bad) = queries.iter().find(|&&q| q >= index_records.len()) {
        return Err(EvalError::BadQuery(bad));
    }
    let mut chosen = queries.to_vec();
    chosen.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    chosen.truncate(n_queries.unwrap_or(chosen.len()));
    if chosen.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let query_records: Vec<&AugmentedRecord> = chosen.iter().map(|&q| &index_records[q]).collect();
    let mut prepared = prepare(scorer, &query_records, index_records)?;
    let mut ranks = Vec::with_capacity(chosen.len());
    for (qi, &target) in chosen.iter().enumerate() {
        let mut candidates: Vec<usize> = Vec::with_capacity(index_records.len());
        candidates.push(target);
        candidates.extend((0..index_records.len()).filter(|&c| c != target));
        let requests: Vec<(usize, usize)> = candidates.iter().map(|&c| (qi, c)).collect();
        let scores = prepared.score(&requests)?;
        ranks.push(true_rank(index_records, &candidates, &scores));
    }
    Ok(EvalReport {
        kind: EvalKind::SearchSpace,
        scenario: index_records[chosen[0]].scenario,
        mrr: mrr(&ranks)?,
        top_k_hits: hit_rates(&ranks),
        n_queries: ranks.len(),
        search_space_size: index_records.len(),
        candidates_per_query: index_records.len(),
        magnitude_label: magnitude_label(index_records.len()),
        seed,
    })
}

/// Counts positives with a strictly positive score.
pub fn micro_match_scores(scores: &[f64]) -> Result<MicroMatchReport, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ScoreError::NonFinite.into());
    }
    let t_p = scores.iter().filter(|&&s| crate::engine::is_match(s)).count();
    let t_q = scores.len();
    Ok(MicroMatchReport {
        t_p,
        t_q,
        accuracy_percent: 100.0 * t_p as f64 / t_q as f64,
        score_min: scores.iter().copied().fold(f64::INFINITY, f64::min),
        score_max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Scores every true pair and applies the match rule.
pub fn micro_match(scorer: &dyn Scorer, positive_pairs: &[AugmentedRecord]) -> Result<MicroMatchReport, EvalError> {
    if positive_pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let queries: Vec<&AugmentedRecord> = positive_pairs.iter().collect();
    let mut prepared = prepare(scorer, &queries, positive_pairs)?;
    let requests: Vec<(usize, usize)> = (0..positive_pairs.len()).map(|i| (i, i)).collect();
    micro_match_scores(&prepared.score(&requests)?)
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "report", rename_all = "snake_case")]
pub enum ReportLine {
    Retrieval(EvalReport),
    MicroMatch(MicroMatchReport),
}

pub fn write_report_lines<W: Write>(lines: &[ReportLine], out: &mut W) -> io::Result<()> {
    for line in lines {
        serde_json::to_writer(&mut *out, line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_reports(lines: &[ReportLine], path: &Path) -> io::Result<()> {
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    write_report_lines(lines, &mut f)?;
    f.flush()
}

/// Plain-text summary table.
pub fn render_table(lines: &[ReportLine]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<13} {:>4} {:>8} {:>7} {:>7} {:>7} {:>8} {:>8} {:>6}",
        "kind", "acs", "mrr", "top1", "top5", "top10", "queries", "space", "mag"
    );
    for line in lines {
        match line {
            ReportLine::Retrieval(r) => {
                let hit = |k: usize| r.top_k_hits.get(&k).copied().unwrap_or(0.0);
                let kind = match r.kind {
                    EvalKind::Distractor => "distractor",
                    EvalKind::SearchSpace => "search_space",
                };
                let _ = writeln!(
                    out,
                    "{:<13} {:>4} {:>8.4} {:>7.3} {:>7.3} {:>7.3} {:>8} {:>8} {:>6}",
                    kind,
                    r.scenario,
                    r.mrr,
                    hit(1),
                    hit(5),
                    hit(10),
                    r.n_queries,
                    r.candidates_per_query,
                    r.magnitude_label
                );
            }
            ReportLine::MicroMatch(m) => {
                let _ = writeln!(
                    out,
                    "micro_match   TP={} TQ={} Acc={:.3}% scores=[{:.3}, {:.3}]",
                    m.t_p, m.t_q, m.accuracy_percent, m.score_min, m.score_max
                );
            }
        }
    }
    out
}

/// Scores drawn uniformly from [0, 1), fixed per (seed, query, code).
/// A calibration baseline: its expected MRR over a pool of n is H(n)/n.
pub struct UniformRandomScorer {
    pub seed: u64,
}

struct RandomScores {
    seed: u64,
}

impl PreparedScores for RandomScores {
    fn score(&mut self, pairs: &[(usize, usize)]) -> Result<Vec<f64>, ScoreError> {
        Ok(pairs
            .iter()
            .map(|&(q, c)| {
                let mut state = self.seed ^ ((q as u64) << 32 | c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                (splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect())
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Scorer for UniformRandomScorer {
    fn prepare<'s>(&'s self, _: &[&[String]], _: &[&[String]]) -> Result<Box<dyn PreparedScores + 's>, ScoreError> {
        Ok(Box::new(RandomScores { seed: self.seed }))
    }
}
