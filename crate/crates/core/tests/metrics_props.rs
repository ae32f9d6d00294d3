mod common;

use cosinet::corpus::QuestionGroup;
use cosinet::eval::{average_precision, evaluate, group_metrics, precision_at_1, reciprocal_rank};
use proptest::prelude::*;
use rand::Rng;

/// Definition-level oracle: rank by explicit pairwise comparison (higher
/// score first, earlier index on ties), then walk the ranking.
fn oracle(scores: &[f64], labels: &[bool]) -> (f64, f64, f64) {
    let n = scores.len();
    let position = |i: usize| {
        (0..n)
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count()
            + 1
    };
    let mut ranked = vec![0; n];
    for i in 0..n {
        ranked[position(i) - 1] = i;
    }
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut hits = 0.0;
    let mut ap = 0.0;
    let mut rr = 0.0;
    for (k, &i) in ranked.iter().enumerate() {
        if labels[i] {
            hits += 1.0;
            ap += hits / (k + 1) as f64;
            if rr == 0.0 {
                rr = 1.0 / (k + 1) as f64;
            }
        }
    }
    (ap / pos, rr, if labels[ranked[0]] { 1.0 } else { 0.0 })
}

fn group_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..12).prop_flat_map(|n| {
        (
            // coarse grid so ties are common
            prop::collection::vec((-4i32..4).prop_map(|x| x as f64 / 2.0), n),
            prop::collection::vec(any::<bool>(), n).prop_filter("answered", |l| l.iter().any(|&b| b)),
        )
    })
}

proptest! {
    #[test]
    fn metrics_match_oracle((scores, labels) in group_strategy()) {
        let m = group_metrics(&scores, &labels).unwrap();
        let (ap, rr, p1) = oracle(&scores, &labels);
        prop_assert!((m.average_precision - ap).abs() < 1e-12);
        prop_assert_eq!(m.reciprocal_rank, rr);
        prop_assert_eq!(m.precision_at_1, p1);
    }

    #[test]
    fn metrics_invariant_under_monotone_maps((scores, labels) in group_strategy(), a in 0.1..10.0f64, b in -5.0..5.0f64) {
        let base = group_metrics(&scores, &labels).unwrap();
        for f in [
            Box::new(move |x: f64| a * x + b) as Box<dyn Fn(f64) -> f64>,
            Box::new(|x: f64| x.powi(3)),
            Box::new(|x: f64| 1.0 / (1.0 + (-x).exp())),
        ] {
            let mapped: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
            prop_assert_eq!(group_metrics(&mapped, &labels).unwrap(), base);
        }
    }

    #[test]
    fn single_positive_ap_equals_rr(scores in prop::collection::vec(-3.0..3.0f64, 1..10), which in any::<prop::sample::Index>()) {
        let mut labels = vec![false; scores.len()];
        labels[which.index(scores.len())] = true;
        prop_assert_eq!(
            average_precision(&scores, &labels).unwrap(),
            reciprocal_rank(&scores, &labels).unwrap()
        );
    }
}

#[test]
fn dataset_metrics_match_oracle_on_100_random_groups() {
    let mut r = common::rng(42);
    let mut groups = Vec::new();
    let mut all_scores = Vec::new();
    for q in 0..100 {
        let n = r.gen_range(1..15);
        let mut labels: Vec<bool> = (0..n).map(|_| r.gen_bool(0.3)).collect();
        let k = r.gen_range(0..n);
        labels[k] = true;
        let cands = (0..n).map(|i| (format!("candidate {i}"), labels[i])).collect();
        groups.push(QuestionGroup::build(format!("q{q}"), "question", cands).0);
        all_scores.push((0..n).map(|_| r.gen_range(0..5) as f64).collect::<Vec<f64>>());
    }
    let lookup = |g: &QuestionGroup| -> cosinet::Result<Vec<f64>> {
        let i: usize = g.question_id[1..].parse().unwrap();
        Ok(all_scores[i].clone())
    };
    let m = evaluate(&lookup, &groups).unwrap();
    let (mut ap, mut rr, mut p1) = (0.0, 0.0, 0.0);
    for (g, s) in groups.iter().zip(&all_scores) {
        let (a, b, c) = oracle(s, &g.labels());
        ap += a;
        rr += b;
        p1 += c;
    }
    assert!((m.map - ap).abs() < 1e-9);
    assert!((m.mrr - rr).abs() < 1e-9);
    assert!((m.p_at_1 - p1).abs() < 1e-9);
    assert_eq!(m.n_questions, 100);
}

#[test]
fn oracle_scorer_is_perfect() {
    let groups = common::toy_groups();
    let label_scorer = |g: &QuestionGroup| -> cosinet::Result<Vec<f64>> {
        Ok(g.labels().iter().map(|&l| l as u8 as f64).collect())
    };
    let m = evaluate(&label_scorer, &groups).unwrap();
    assert_eq!((m.map, m.mrr, m.p_at_1), (100.0, 100.0, 100.0));
}

#[test]
fn spec_examples() {
    assert_eq!(average_precision(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
    assert_eq!(average_precision(&[0.9, 0.1], &[false, true]).unwrap(), 0.5);
    assert_eq!(reciprocal_rank(&[0.9, 0.1], &[false, true]).unwrap(), 0.5);
    assert_eq!(precision_at_1(&[0.9, 0.1], &[false, true]).unwrap(), 0.0);
    let ap = average_precision(&[4.0, 3.0, 2.0, 1.0], &[true, false, true, false]).unwrap();
    assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    assert!(average_precision(&[1.0], &[false]).is_err());
}

#[test]
fn metrics_serialize_with_two_decimals() {
    let lookup = |g: &QuestionGroup| -> cosinet::Result<Vec<f64>> { Ok((0..g.len()).map(|i| -(i as f64)).collect()) };
    let m = evaluate(&lookup, &common::toy_groups()).unwrap();
    let v: serde_json::Value = serde_json::to_value(&m).unwrap();
    assert_eq!(v["map"], 75.0);
    assert_eq!(v["mrr"], 75.0);
    assert_eq!(v["p_at_1"], 50.0);
    for key in ["map", "mrr", "p_at_1", "n_questions", "wall_seconds"] {
        assert!(v.get(key).is_some());
    }
}
