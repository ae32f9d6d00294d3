//! Ranking metrics: MAP, MRR and P@1.
//!
//! Rankings are a stable descending sort by score. Candidates are stored in
//! original document order, so equal scores fall back to that order.

use std::time::Instant;

use serde::{Serialize, Serializer};

use crate::corpus::QuestionGroup;
use crate::error::{Error, Result};

/// Produces one score per candidate, in candidate order.
pub trait Scorer {
    fn score(&self, group: &QuestionGroup) -> Result<Vec<f64>>;
}

impl<F> Scorer for F
where
    F: Fn(&QuestionGroup) -> Result<Vec<f64>>,
{
    fn score(&self, group: &QuestionGroup) -> Result<Vec<f64>> {
        self(group)
    }
}

/// Candidate indices from best to worst.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| key(scores[b]).total_cmp(&key(scores[a])));
    order
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupMetrics {
    pub average_precision: f64,
    pub reciprocal_rank: f64,
    pub precision_at_1: f64,
}

pub fn group_metrics(scores: &[f64], labels: &[bool]) -> Result<GroupMetrics> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} scores for {} candidates",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::Invalid("group has no positive candidate".into()));
    }
    let order = rank_order(scores);
    let mut hits = 0;
    let mut precision_sum = 0.0;
    let mut first_hit = None;
    for (pos, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            precision_sum += hits as f64 / (pos + 1) as f64;
            first_hit.get_or_insert(pos + 1);
        }
    }
    let first = first_hit.expect("at least one positive");
    Ok(GroupMetrics {
        average_precision: precision_sum / positives as f64,
        reciprocal_rank: 1.0 / first as f64,
        precision_at_1: if first == 1 { 1.0 } else { 0.0 },
    })
}

pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(group_metrics(scores, labels)?.average_precision)
}

pub fn reciprocal_rank(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(group_metrics(scores, labels)?.reciprocal_rank)
}

pub fn precision_at_1(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(group_metrics(scores, labels)?.precision_at_1)
}

fn two_decimals<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((v * 100.0).round() / 100.0)
}

/// Dataset-level metrics, as percentages.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankingMetrics {
    #[serde(serialize_with = "two_decimals")]
    pub map: f64,
    #[serde(serialize_with = "two_decimals")]
    pub mrr: f64,
    #[serde(serialize_with = "two_decimals")]
    pub p_at_1: f64,
    pub n_questions: usize,
    pub wall_seconds: f64,
}

/// Unweighted means over `groups`, scaled to percent.
pub fn evaluate<S: Scorer + ?Sized>(scorer: &S, groups: &[QuestionGroup]) -> Result<RankingMetrics> {
    if groups.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty dataset".into()));
    }
    let start = Instant::now();
    let (mut ap, mut rr, mut p1) = (0.0, 0.0, 0.0);
    for g in groups {
        let scores = scorer.score(g)?;
        let m = group_metrics(&scores, &g.labels())
            .map_err(|e| Error::Invalid(format!("question {}: {e}", g.question_id)))?;
        ap += m.average_precision;
        rr += m.reciprocal_rank;
        p1 += m.precision_at_1;
    }
    let n = groups.len() as f64;
    Ok(RankingMetrics {
        map: 100.0 * ap / n,
        mrr: 100.0 * rr / n,
        p_at_1: 100.0 * p1 / n,
        n_questions: groups.len(),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
