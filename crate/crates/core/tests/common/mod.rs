#![allow(dead_code)]

use cosinet::corpus::QuestionGroup;
use cosinet::embed::EmbeddingTable;
use cosinet::model::{ContextKind, CosinetConfig};
use cosinet::ndgrad::{Real, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn random_tensor<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::from_f64(shape, &uniform(rng, n, -1.0, 1.0)).unwrap()
}

/// Tiny configuration used by end-to-end checks.
pub fn tiny_config(context: ContextKind) -> CosinetConfig {
    CosinetConfig {
        embedding_dim: 4,
        conv_hidden: 6,
        kernel_width: 2,
        context,
        seed: 11,
    }
}

/// A small vocabulary of random 4-d vectors plus deliberately missing words.
pub fn toy_table(seed: u64) -> EmbeddingTable {
    let words = [
        "what", "is", "the", "capital", "of", "france", "paris", "city", "a", "in", "river", "who", "wrote",
        "book", "author", "novel", "year", "born", "?", ".", ",", "large", "small", "known",
    ];
    let mut r = rng(seed);
    let entries: Vec<(String, Vec<f32>)> = words
        .iter()
        .map(|w| (w.to_string(), uniform(&mut r, 4, -1.0, 1.0).into_iter().map(|x| x as f32).collect()))
        .collect();
    EmbeddingTable::from_entries(4, entries).unwrap()
}

pub fn group(id: &str, question: &str, candidates: &[(&str, bool)]) -> QuestionGroup {
    let c = candidates.iter().map(|(t, l)| (t.to_string(), *l)).collect();
    QuestionGroup::build(id, question, c).0
}

pub fn toy_groups() -> Vec<QuestionGroup> {
    vec![
        group(
            "q1",
            "what is the capital of france ?",
            &[
                ("paris is the capital of france .", true),
                ("france is a large country", false),
                ("the river in the city", false),
                ("zzz unknown words here", false),
            ],
        ),
        group(
            "q2",
            "who wrote the book ?",
            &[
                ("the book is known", false),
                ("the author wrote a novel in the year", true),
                ("small city", false),
            ],
        ),
    ]
}

/// Records `value` on a fresh tape and returns the scalar loss and gradient.
pub fn scalar_and_grad<T: Real>(
    inputs: &[Tensor<T>],
    f: impl Fn(&mut Tape<T>, &[Var]) -> Var,
) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let value = tape.value(loss).unwrap().to_f64_vec()[0];
    let grads = vars
        .iter()
        .map(|&v| tape.grad(v).unwrap().unwrap().iter().map(|g| g.to_f64().unwrap()).collect())
        .collect();
    (value, grads)
}

/// Relative error with a small floor on the denominator so entries whose
/// true gradient is zero are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}
