//! Training: pointwise BCE or listwise softmax/KL objectives, Adam, and a
//! slanted triangular learning-rate schedule over all optimizer steps.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::QuestionGroup;
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::model::{ContextKind, Cosinet, PairBatch};
use crate::ndgrad::{Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Pointwise,
    #[default]
    Listwise,
}

impl LossKind {
    /// Peak learning rate used when none is configured.
    pub fn default_max_lr(self) -> f64 {
        match self {
            LossKind::Pointwise => 2e-3,
            LossKind::Listwise => 2e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    /// Peak learning rate; `None` picks the default for `loss`.
    pub max_lr: Option<f64>,
    pub cut_frac: f64,
    pub ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Pairs per step for pointwise training.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Listwise,
            epochs: 3,
            max_lr: None,
            cut_frac: 0.1,
            ratio: 32.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn for_loss(loss: LossKind) -> Self {
        Self {
            loss,
            ..Self::default()
        }
    }

    pub fn max_lr(&self) -> f64 {
        self.max_lr.unwrap_or_else(|| self.loss.default_max_lr())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cut_frac > 0.0 && self.cut_frac < 1.0) {
            return Err(Error::Config(format!("cut_frac must be in (0, 1), got {}", self.cut_frac)));
        }
        if self.ratio <= 1.0 {
            return Err(Error::Config(format!("ratio must exceed 1, got {}", self.ratio)));
        }
        if self.max_lr().partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Config(format!("max_lr must be positive, got {}", self.max_lr())));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config("adam betas must be in [0, 1) and eps positive".into()));
        }
        Ok(())
    }
}

/// Slanted triangular learning rate at step `t` of `total`.
///
/// Linear warm-up from `max_lr / ratio` to `max_lr` over the first
/// `⌊total · cut_frac⌋` steps (at least one), then linear decay back. The
/// flooring can push the decay past its end on the last few steps; the rate
/// is held at `max_lr / ratio` there instead of going lower or negative.
pub fn stlr(t: usize, total: usize, cut_frac: f64, ratio: f64, max_lr: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if t >= total {
        return Err(Error::Config(format!("step {t} outside schedule of {total}")));
    }
    let cut = ((total as f64 * cut_frac).floor() as usize).max(1);
    let p = if t < cut {
        t as f64 / cut as f64
    } else {
        (1.0 - (t - cut) as f64 / (cut as f64 * (1.0 / cut_frac - 1.0))).max(0.0)
    };
    Ok(max_lr * (1.0 + p * (ratio - 1.0)) / ratio)
}

/// KL divergence between normalized gold labels and `softmax(scores)`.
///
/// `scores` may be `[n]`, `[n, 1]` or `[1, n]`. Labels must contain a positive.
pub fn listwise_loss<T: Real>(tape: &mut Tape<T>, scores: Var, labels: &[bool]) -> Result<Var> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::Invalid("listwise loss needs at least one positive label".into()));
    }
    let n = labels.len();
    let row = tape.reshape(scores, &[1, n])?;
    let log_p = tape.log_softmax(row)?;
    let g = T::one() / T::lit(positives as f64);
    let gold: Vec<T> = labels.iter().map(|&l| if l { g } else { T::zero() }).collect();
    // Σ g ln g: the entropy term, constant in the scores
    let entropy = T::lit(positives as f64) * g * g.ln();
    let gold = tape.constant(Tensor::new(vec![1, n], gold)?);
    let weighted = tape.mul(gold, log_p)?;
    let cross = tape.sum(weighted)?;
    let cross = tape.scale(cross, -T::one())?;
    let entropy = tape.constant(Tensor::scalar(entropy));
    Ok(tape.add(entropy, cross)?)
}

/// Mean binary cross-entropy over `scores` (logits) against `labels`.
pub fn pointwise_loss<T: Real>(tape: &mut Tape<T>, scores: Var, labels: &[bool]) -> Result<Var> {
    let shape = tape.value(scores)?.shape().to_vec();
    if shape.iter().product::<usize>() != labels.len() || labels.is_empty() {
        return Err(Error::Invalid(format!(
            "pointwise loss: {} labels for scores of shape {shape:?}",
            labels.len()
        )));
    }
    let y: Vec<T> = labels.iter().map(|&l| if l { T::one() } else { T::zero() }).collect();
    let y = tape.constant(Tensor::new(shape, y)?);
    // -[y ln σ(s) + (1-y) ln(1-σ(s))] = softplus(s) - y·s
    let sp = tape.softplus(scores)?;
    let ys = tape.mul(y, scores)?;
    let per = tape.sub(sp, ys)?;
    let total = tape.sum(per)?;
    Ok(tape.scale(total, T::one() / T::lit(labels.len() as f64))?)
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn update<T: Real>(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Vec<T>], lr: f64) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi.to_f64().unwrap_or(0.0);
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let delta = lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                *w -= T::lit(delta);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainingReport {
    pub loss: LossKind,
    pub context: ContextKind,
    pub epochs: usize,
    pub steps: usize,
    pub param_count: usize,
    /// Loss of every optimizer step, in order.
    pub loss_curve: Vec<f64>,
    /// Mean step loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub train_seconds: f64,
}

fn collect_grads<T: Real>(tape: &Tape<T>, vars: &[Var]) -> Result<Vec<Vec<T>>> {
    vars.iter()
        .map(|&v| {
            Ok(match tape.grad(v)? {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); tape.value(v)?.len()],
            })
        })
        .collect()
}

/// Trains `model` in place on answered `groups`. The embedding table is only read.
pub fn fit<T: Real>(
    groups: &[QuestionGroup],
    table: &EmbeddingTable,
    model: &mut Cosinet<T>,
    config: &TrainConfig,
) -> Result<TrainingReport> {
    config.validate()?;
    if groups.is_empty() {
        return Err(Error::Invalid("cannot train on an empty dataset".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.positives() == 0 || g.is_empty()) {
        return Err(Error::Invalid(format!("question {} has no positive candidate", g.question_id)));
    }
    if config.loss == LossKind::Pointwise && model.config.context != ContextKind::None {
        return Err(Error::Config(format!(
            "pointwise training scores pairs independently; context {} needs listwise loss",
            model.config.context
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.beta1, config.beta2, config.eps);
    let pairs: Vec<(usize, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(gi, g)| (0..g.len()).map(move |ci| (gi, ci)))
        .collect();
    let steps_per_epoch = match config.loss {
        LossKind::Listwise => groups.len(),
        LossKind::Pointwise => pairs.len().div_ceil(config.batch_size),
    };
    let total = steps_per_epoch * config.epochs;
    let max_lr = config.max_lr();
    let mut report = TrainingReport {
        loss: config.loss,
        context: model.config.context,
        epochs: config.epochs,
        steps: 0,
        param_count: model.param_count(),
        loss_curve: Vec::with_capacity(total),
        epoch_losses: Vec::with_capacity(config.epochs),
        train_seconds: 0.0,
    };

    let start = Instant::now();
    let mut group_order: Vec<usize> = (0..groups.len()).collect();
    let mut pair_order = pairs;
    for _ in 0..config.epochs {
        let mut epoch_total = 0.0;
        let mut step_in_epoch = 0;
        let mut run_step = |batch: PairBatch<T>, labels: Vec<bool>, model: &mut Cosinet<T>| -> Result<()> {
            let mut tape = Tape::new();
            let vars = model.register(&mut tape, true);
            let loss = match config.loss {
                LossKind::Listwise => {
                    let scores = model.forward_group(&mut tape, &vars, &batch)?;
                    listwise_loss(&mut tape, scores, &labels)?
                }
                LossKind::Pointwise => {
                    let scores = model.forward_pairs(&mut tape, &vars, &batch)?;
                    pointwise_loss(&mut tape, scores, &labels)?
                }
            };
            tape.backward(loss)?;
            let grads = collect_grads(&tape, &vars.all)?;
            let lr = stlr(report.steps, total, config.cut_frac, config.ratio, max_lr)?;
            adam.update(model.params.tensors_mut(), &grads, lr);
            let value = tape.value(loss)?.data()[0].to_f64().unwrap_or(f64::NAN);
            report.loss_curve.push(value);
            report.steps += 1;
            epoch_total += value;
            step_in_epoch += 1;
            Ok(())
        };
        match config.loss {
            LossKind::Listwise => {
                group_order.shuffle(&mut rng);
                for &gi in &group_order {
                    let group = &groups[gi];
                    let batch = model.group_batch(group, table)?;
                    run_step(batch, group.labels(), model)?;
                }
            }
            LossKind::Pointwise => {
                pair_order.shuffle(&mut rng);
                for chunk in pair_order.chunks(config.batch_size) {
                    let mut tokens = Vec::with_capacity(chunk.len());
                    let mut labels = Vec::with_capacity(chunk.len());
                    for &(gi, ci) in chunk {
                        let g = &groups[gi];
                        tokens.push((g.question_tokens.as_slice(), g.candidates[ci].tokens.as_slice()));
                        labels.push(g.candidates[ci].label);
                    }
                    let batch = PairBatch::from_tokens(&tokens, table, model.config.kernel_width)?;
                    run_step(batch, labels, model)?;
                }
            }
        }
        report.epoch_losses.push(epoch_total / step_in_epoch as f64);
    }
    report.train_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
