//! Link-prediction ranking and MRR / MR / Hits@N.
//!
//! Ranks are pessimistic: every candidate scoring at least as high as the
//! true entity is ranked above it. In filtered mode, candidates that complete
//! another known fact are skipped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_data::{check_id, FilterIndex, Triple};
use crate::models::{score_all_into, Direction, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RankMode {
    #[default]
    Filtered,
    Raw,
}

impl RankMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RankMode::Filtered => "filtered",
            RankMode::Raw => "raw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub mrr: f64,
    pub mr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub query_count: usize,
}

impl MetricsRecord {
    pub fn from_ranks(ranks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        let n = ranks.len() as f64;
        let mut rr = 0.0;
        let mut total = 0.0;
        let mut hits = [0usize; 3];
        for &r in ranks {
            rr += 1.0 / r as f64;
            total += r as f64;
            for (slot, cutoff) in hits.iter_mut().zip([1, 3, 10]) {
                if r <= cutoff {
                    *slot += 1;
                }
            }
        }
        Ok(MetricsRecord {
            mrr: rr / n,
            mr: total / n,
            hits1: hits[0] as f64 / n,
            hits3: hits[1] as f64 / n,
            hits10: hits[2] as f64 / n,
            query_count: ranks.len(),
        })
    }
}

/// Metrics over both directions plus the per-direction breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub both: MetricsRecord,
    pub predict_tail: MetricsRecord,
    pub predict_head: MetricsRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    pub mode: RankMode,
    /// Relation count before reciprocal augmentation. When set, head queries
    /// `(?, r, t)` are answered as tail queries `(t, r + base, ?)`.
    pub reciprocal_base: Option<u32>,
}

/// Rank of `truth` among `scores`, skipping `excluded` (sorted ascending).
pub fn rank_from_scores(scores: &[f64], truth: u32, excluded: &[u32]) -> usize {
    let target = scores[truth as usize];
    let mut skip = excluded.iter().peekable();
    let mut above = 0;
    for (v, &s) in scores.iter().enumerate() {
        let v = v as u32;
        while skip.next_if(|&&e| e < v).is_some() {}
        if skip.next_if_eq(&&v).is_some() || v == truth {
            continue;
        }
        // NaN candidates also count as above.
        if !(s < target) {
            above += 1;
        }
    }
    above + 1
}

fn query(triple: Triple, direction: Direction, base: Option<u32>) -> (u32, u32, u32, Direction) {
    match (direction, base) {
        (Direction::PredictTail, _) => (triple.head, triple.relation, triple.tail, Direction::PredictTail),
        (Direction::PredictHead, Some(b)) => {
            (triple.tail, triple.relation + b, triple.head, Direction::PredictTail)
        }
        (Direction::PredictHead, None) => (triple.tail, triple.relation, triple.head, Direction::PredictHead),
    }
}

fn excluded<'a>(filter: &'a FilterIndex, anchor: u32, relation: u32, direction: Direction, mode: RankMode) -> &'a [u32] {
    match (mode, direction) {
        (RankMode::Raw, _) => &[],
        (RankMode::Filtered, Direction::PredictTail) => filter.tails_of(anchor, relation),
        (RankMode::Filtered, Direction::PredictHead) => filter.heads_of(anchor, relation),
    }
}

fn rank_with(
    params: &ModelParams,
    triple: Triple,
    filter: &FilterIndex,
    direction: Direction,
    options: EvalOptions,
    scores: &mut [f64],
) -> usize {
    let (anchor, relation, truth, dir) = query(triple, direction, options.reciprocal_base);
    score_all_into(params, anchor, relation, dir, scores);
    rank_from_scores(scores, truth, excluded(filter, anchor, relation, dir, options.mode))
}

/// Rank of the missing entity of `triple` in one direction.
pub fn rank(
    params: &ModelParams,
    triple: Triple,
    filter: &FilterIndex,
    direction: Direction,
    mode: RankMode,
) -> Result<usize> {
    params.check(triple)?;
    let mut scores = vec![0.0; params.num_entities()];
    Ok(rank_with(
        params,
        triple,
        filter,
        direction,
        EvalOptions {
            mode,
            reciprocal_base: None,
        },
        &mut scores,
    ))
}

/// Per-query ranks as `(predict-tail, predict-head)` pairs in input order.
pub fn ranks(
    params: &ModelParams,
    triples: &[Triple],
    filter: &FilterIndex,
    options: EvalOptions,
) -> Result<Vec<(usize, usize)>> {
    for &t in triples {
        params.check(t)?;
        if let Some(base) = options.reciprocal_base {
            check_id("relation", t.relation, base as usize)?;
        }
    }
    let mut scores = vec![0.0; params.num_entities()];
    Ok(triples
        .iter()
        .map(|&t| {
            let tail = rank_with(params, t, filter, Direction::PredictTail, options, &mut scores);
            let head = rank_with(params, t, filter, Direction::PredictHead, options, &mut scores);
            (tail, head)
        })
        .collect())
}

pub fn evaluate_detailed(
    params: &ModelParams,
    triples: &[Triple],
    filter: &FilterIndex,
    options: EvalOptions,
) -> Result<EvaluationReport> {
    if triples.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let pairs = ranks(params, triples, filter, options)?;
    let tails: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let heads: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let all: Vec<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    Ok(EvaluationReport {
        both: MetricsRecord::from_ranks(&all)?,
        predict_tail: MetricsRecord::from_ranks(&tails)?,
        predict_head: MetricsRecord::from_ranks(&heads)?,
    })
}

/// Both-direction metrics over `triples`.
pub fn evaluate(
    params: &ModelParams,
    triples: &[Triple],
    filter: &FilterIndex,
    mode: RankMode,
) -> Result<MetricsRecord> {
    evaluate_detailed(
        params,
        triples,
        filter,
        EvalOptions {
            mode,
            reciprocal_base: None,
        },
    )
    .map(|r| r.both)
}
