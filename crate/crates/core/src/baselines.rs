//! Rule baselines: word overlap, reciprocal rank, and overlap with a
//! rank tie-break.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::corpus::QuestionGroup;
use crate::error::{Error, Result};
use crate::eval::Scorer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Baseline {
    /// Unique question words shared with the candidate.
    #[value(name = "wo")]
    WordOverlap,
    /// `1 / original_rank`.
    #[value(name = "rr")]
    ReciprocalRank,
    /// Word overlap, ties broken by original rank.
    #[value(name = "wo_rr")]
    WordOverlapRank,
}

impl Baseline {
    pub fn scores(self, group: &QuestionGroup) -> Vec<f64> {
        match self {
            Baseline::WordOverlap => score_wo(group),
            Baseline::ReciprocalRank => score_rr(group),
            Baseline::WordOverlapRank => score_wo_rr(group),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Baseline::WordOverlap => "wo",
            Baseline::ReciprocalRank => "rr",
            Baseline::WordOverlapRank => "wo_rr",
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wo" => Ok(Baseline::WordOverlap),
            "rr" => Ok(Baseline::ReciprocalRank),
            "wo_rr" => Ok(Baseline::WordOverlapRank),
            other => Err(Error::Config(format!("unknown baseline {other:?} (expected wo, rr or wo_rr)"))),
        }
    }
}

impl Scorer for Baseline {
    fn score(&self, group: &QuestionGroup) -> Result<Vec<f64>> {
        Ok(self.scores(group))
    }
}

pub fn score_rr(group: &QuestionGroup) -> Vec<f64> {
    group.candidates.iter().map(|c| 1.0 / c.original_rank as f64).collect()
}

/// Size of the intersection of two token sets.
pub fn overlap(a: &[String], b: &[String]) -> usize {
    let a: HashSet<&str> = a.iter().map(String::as_str).collect();
    let b: HashSet<&str> = b.iter().map(String::as_str).collect();
    a.intersection(&b).count()
}

pub fn score_wo(group: &QuestionGroup) -> Vec<f64> {
    group
        .candidates
        .iter()
        .map(|c| overlap(&group.question_tokens, &c.tokens) as f64)
        .collect()
}

/// `WO + (1/rank) / (n + 1)`: the rank term is below 1/2, so it only
/// separates candidates with equal overlap.
pub fn score_wo_rr(group: &QuestionGroup) -> Vec<f64> {
    let n = group.len() as f64;
    score_wo(group)
        .into_iter()
        .zip(&group.candidates)
        .map(|(wo, c)| wo + (1.0 / c.original_rank as f64) / (n + 1.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::rank_order;

    fn group(question: &str, cands: &[&str]) -> QuestionGroup {
        let cands = cands.iter().map(|c| (c.to_string(), false)).collect();
        QuestionGroup::build("q", question, cands).0
    }

    #[test]
    fn rr_is_reciprocal_rank() {
        let g = group("x", &["a", "b", "c"]);
        let s = score_rr(&g);
        assert_eq!(s[..2], [1.0, 0.5]);
        assert!((s[2] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn wo_counts_unique_shared_tokens() {
        let g = group("a b c", &["c b a", "d e", "a a a b"]);
        assert_eq!(score_wo(&g), vec![3.0, 0.0, 2.0]);
    }

    #[test]
    fn wo_rr_tie_broken_by_rank() {
        // overlaps [2, 2, 1]
        let g = group("a b", &["a b", "b a x", "a"]);
        assert_eq!(score_wo(&g), vec![2.0, 2.0, 1.0]);
        assert_eq!(rank_order(&score_wo_rr(&g)), vec![0, 1, 2]);
    }

    #[test]
    fn wo_rr_overlap_dominates() {
        // overlaps [1, 3]
        let g = group("a b c", &["a", "a b c"]);
        assert_eq!(rank_order(&score_wo_rr(&g)), vec![1, 0]);
    }

    #[test]
    fn names_round_trip() {
        for b in [Baseline::WordOverlap, Baseline::ReciprocalRank, Baseline::WordOverlapRank] {
            assert_eq!(b.name().parse::<Baseline>().unwrap(), b);
        }
        assert!("bm25".parse::<Baseline>().is_err());
    }
}
