//! The Cosinet ranker.
//!
//! Each (question, candidate) pair is encoded independently: word vectors
//! get a relatedness feature appended (max cosine against the other side),
//! each side runs through its own width-`k` convolution with masked global
//! max pooling, and the two encodings `q`, `c` are joined as `[q ⊙ c; q − c]`.
//! An optional recurrent layer then runs over the pair encodings of one
//! question in original document order, and a linear head maps each
//! resulting vector to a score.

mod features;
pub mod io;
mod relatedness;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::QuestionGroup;
use crate::embed::{EmbeddingTable, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::ndgrad::{Real, Tape, Tensor, Var};

pub use features::PairBatch;
pub use relatedness::relatedness;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ContextKind {
    #[default]
    None,
    Rnn,
    Birnn,
    Lstm,
    Bilstm,
}

impl ContextKind {
    pub const ALL: [ContextKind; 5] = [
        ContextKind::None,
        ContextKind::Rnn,
        ContextKind::Birnn,
        ContextKind::Lstm,
        ContextKind::Bilstm,
    ];

    pub fn is_bidirectional(self) -> bool {
        matches!(self, ContextKind::Birnn | ContextKind::Bilstm)
    }

    fn gates(self) -> usize {
        match self {
            ContextKind::Lstm | ContextKind::Bilstm => 4,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ContextKind::None => "none",
            ContextKind::Rnn => "rnn",
            ContextKind::Birnn => "birnn",
            ContextKind::Lstm => "lstm",
            ContextKind::Bilstm => "bilstm",
        }
    }
}

impl fmt::Display for ContextKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ContextKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ContextKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown context kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CosinetConfig {
    pub embedding_dim: usize,
    pub conv_hidden: usize,
    pub kernel_width: usize,
    pub context: ContextKind,
    pub seed: u64,
}

impl Default for CosinetConfig {
    fn default() -> Self {
        Self {
            embedding_dim: EMBEDDING_DIM,
            conv_hidden: 300,
            kernel_width: 5,
            context: ContextKind::None,
            seed: 0,
        }
    }
}

impl CosinetConfig {
    pub fn with_context(context: ContextKind) -> Self {
        Self {
            context,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.conv_hidden == 0 || self.kernel_width == 0 {
            return Err(Error::Config(
                "embedding_dim, conv_hidden and kernel_width must be at least 1".into(),
            ));
        }
        if self.context.is_bidirectional() && !self.conv_hidden.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "bidirectional context needs an even conv_hidden, got {}",
                self.conv_hidden
            )));
        }
        Ok(())
    }

    /// Width of the pair encoding `[q ⊙ c; q − c]`.
    pub fn pair_dim(&self) -> usize {
        2 * self.conv_hidden
    }

    /// Hidden size of each recurrent direction: `conv_hidden` for a single
    /// direction, half of it per direction when bidirectional.
    pub fn context_hidden(&self) -> usize {
        if self.context.is_bidirectional() {
            self.conv_hidden / 2
        } else {
            self.conv_hidden
        }
    }

    /// Width of the vectors the head scores.
    pub fn head_dim(&self) -> usize {
        match self.context {
            ContextKind::None => self.pair_dim(),
            k if k.is_bidirectional() => 2 * self.context_hidden(),
            _ => self.context_hidden(),
        }
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let tower = (self.embedding_dim + 1) * self.kernel_width * self.conv_hidden + self.conv_hidden;
        let context = match self.context {
            ContextKind::None => 0,
            k => {
                let h = self.context_hidden();
                let width = k.gates() * h;
                let cell = self.pair_dim() * width + h * width + width;
                if k.is_bidirectional() {
                    2 * cell
                } else {
                    cell
                }
            }
        };
        2 * tower + context + self.head_dim() + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    /// `[in_channels, width, out_channels]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Recurrent cell weights; LSTM gates are stacked input, forget, cell, output.
#[derive(Clone, Debug, PartialEq)]
pub struct CellParams<T> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ContextParams<T> {
    None,
    Forward(CellParams<T>),
    Bidirectional { forward: CellParams<T>, backward: CellParams<T> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CosinetParams<T> {
    pub question: ConvParams<T>,
    pub candidate: ConvParams<T>,
    pub context: ContextParams<T>,
    pub head_weight: Tensor<T>,
    pub head_bias: Tensor<T>,
}

fn glorot<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

impl<T: Real> CosinetParams<T> {
    /// Seeded Glorot-uniform weights, zero biases.
    pub fn init(config: &CosinetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, h, k) = (config.embedding_dim + 1, config.conv_hidden, config.kernel_width);
        let conv = |rng: &mut ChaCha8Rng| ConvParams {
            weight: glorot(rng, &[d, k, h], d * k, h * k),
            bias: Tensor::zeros(&[h]),
        };
        let question = conv(&mut rng);
        let candidate = conv(&mut rng);
        let ch = config.context_hidden();
        let width = config.context.gates() * ch;
        let input = config.pair_dim();
        let cell = |rng: &mut ChaCha8Rng| CellParams {
            w_ih: glorot(rng, &[input, width], input, width),
            w_hh: glorot(rng, &[ch, width], ch, width),
            bias: Tensor::zeros(&[width]),
        };
        let context = match config.context {
            ContextKind::None => ContextParams::None,
            k if k.is_bidirectional() => ContextParams::Bidirectional {
                forward: cell(&mut rng),
                backward: cell(&mut rng),
            },
            _ => ContextParams::Forward(cell(&mut rng)),
        };
        let hd = config.head_dim();
        Ok(Self {
            question,
            candidate,
            context,
            head_weight: glorot(&mut rng, &[hd, 1], hd, 1),
            head_bias: Tensor::zeros(&[1]),
        })
    }

    /// Tensors in declaration order with stable names.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("question.weight".to_string(), &self.question.weight),
            ("question.bias".to_string(), &self.question.bias),
            ("candidate.weight".to_string(), &self.candidate.weight),
            ("candidate.bias".to_string(), &self.candidate.bias),
        ];
        match &self.context {
            ContextParams::None => {}
            ContextParams::Forward(c) => push_cell(&mut out, "context", c),
            ContextParams::Bidirectional { forward, backward } => {
                push_cell(&mut out, "context.forward", forward);
                push_cell(&mut out, "context.backward", backward);
            }
        }
        out.push(("head.weight".to_string(), &self.head_weight));
        out.push(("head.bias".to_string(), &self.head_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![
            &mut self.question.weight,
            &mut self.question.bias,
            &mut self.candidate.weight,
            &mut self.candidate.bias,
        ];
        match &mut self.context {
            ContextParams::None => {}
            ContextParams::Forward(c) => out.extend([&mut c.w_ih, &mut c.w_hh, &mut c.bias]),
            ContextParams::Bidirectional { forward, backward } => {
                out.extend([&mut forward.w_ih, &mut forward.w_hh, &mut forward.bias]);
                out.extend([&mut backward.w_ih, &mut backward.w_hh, &mut backward.bias]);
            }
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

fn push_cell<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, prefix: &str, c: &'a CellParams<T>) {
    out.push((format!("{prefix}.w_ih"), &c.w_ih));
    out.push((format!("{prefix}.w_hh"), &c.w_hh));
    out.push((format!("{prefix}.bias"), &c.bias));
}

/// Tape handles for one registration of the parameters.
pub struct ParamVars {
    question: (Var, Var),
    candidate: (Var, Var),
    context: ContextVars,
    head: (Var, Var),
    /// Declaration order, aligned with [`CosinetParams::named`].
    pub all: Vec<Var>,
}

enum ContextVars {
    None,
    Forward([Var; 3]),
    Bidirectional([Var; 3], [Var; 3]),
}

/// Model configuration plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Cosinet<T> {
    pub config: CosinetConfig,
    pub params: CosinetParams<T>,
}

impl<T: Real> Cosinet<T> {
    pub fn new(config: CosinetConfig) -> Result<Self> {
        let params = CosinetParams::init(&config)?;
        let model = Self { config, params };
        debug_assert_eq!(model.params.count(), model.config.param_count());
        Ok(model)
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn cast<U: Real>(&self) -> Cosinet<U> {
        let c = |t: &Tensor<T>| t.cast::<U>();
        let conv = |p: &ConvParams<T>| ConvParams {
            weight: c(&p.weight),
            bias: c(&p.bias),
        };
        let cell = |p: &CellParams<T>| CellParams {
            w_ih: c(&p.w_ih),
            w_hh: c(&p.w_hh),
            bias: c(&p.bias),
        };
        Cosinet {
            config: self.config.clone(),
            params: CosinetParams {
                question: conv(&self.params.question),
                candidate: conv(&self.params.candidate),
                context: match &self.params.context {
                    ContextParams::None => ContextParams::None,
                    ContextParams::Forward(p) => ContextParams::Forward(cell(p)),
                    ContextParams::Bidirectional { forward, backward } => ContextParams::Bidirectional {
                        forward: cell(forward),
                        backward: cell(backward),
                    },
                },
                head_weight: c(&self.params.head_weight),
                head_bias: c(&self.params.head_bias),
            },
        }
    }

    /// Records every weight on `tape`, as trainable leaves or as constants.
    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> ParamVars {
        let mut all = Vec::new();
        let mut reg = |t: &Tensor<T>| {
            let v = if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            };
            all.push(v);
            v
        };
        let p = &self.params;
        let question = (reg(&p.question.weight), reg(&p.question.bias));
        let candidate = (reg(&p.candidate.weight), reg(&p.candidate.bias));
        let mut cell = |c: &CellParams<T>| [reg(&c.w_ih), reg(&c.w_hh), reg(&c.bias)];
        let context = match &p.context {
            ContextParams::None => ContextVars::None,
            ContextParams::Forward(c) => ContextVars::Forward(cell(c)),
            ContextParams::Bidirectional { forward, backward } => {
                let f = cell(forward);
                ContextVars::Bidirectional(f, cell(backward))
            }
        };
        let head = (reg(&p.head_weight), reg(&p.head_bias));
        ParamVars {
            question,
            candidate,
            context,
            head,
            all,
        }
    }

    /// Pair encodings `[q ⊙ c; q − c]`, one row per pair: `[batch, 2·conv_hidden]`.
    pub fn encode_pairs(&self, tape: &mut Tape<T>, vars: &ParamVars, batch: &PairBatch<T>) -> Result<Var> {
        let q_in = tape.constant(batch.question.clone());
        let q = tape.conv1d(q_in, vars.question.0, vars.question.1)?;
        let q = tape.masked_max_pool(q, &batch.question_mask)?;
        let c_in = tape.constant(batch.candidate.clone());
        let c = tape.conv1d(c_in, vars.candidate.0, vars.candidate.1)?;
        let c = tape.masked_max_pool(c, &batch.candidate_mask)?;
        let prod = tape.mul(q, c)?;
        let diff = tape.sub(q, c)?;
        Ok(tape.concat(&[prod, diff])?)
    }

    /// Runs the configured recurrent layer over pair encodings `[n, pair_dim]`
    /// given in original rank order.
    pub fn contextualize(&self, tape: &mut Tape<T>, vars: &ParamVars, pairs: Var) -> Result<Var> {
        let n = tape.value(pairs)?.rows();
        let lstm = self.config.context.gates() == 4;
        let h = self.config.context_hidden();
        let run = |tape: &mut Tape<T>, cell: &[Var; 3], order: &mut dyn Iterator<Item = usize>| -> Result<Vec<(usize, Var)>> {
            let mut state = tape.constant(Tensor::zeros(&[1, h]));
            let mut memory = tape.constant(Tensor::zeros(&[1, h]));
            let mut outs = Vec::with_capacity(n);
            for t in order {
                let x = tape.slice_rows(pairs, t, 1)?;
                if lstm {
                    let both = tape.lstm_cell(x, state, memory, cell[0], cell[1], cell[2])?;
                    state = tape.slice_cols(both, 0, h)?;
                    memory = tape.slice_cols(both, h, h)?;
                } else {
                    state = tape.rnn_cell(x, state, cell[0], cell[1], cell[2])?;
                }
                outs.push((t, state));
            }
            Ok(outs)
        };
        match &vars.context {
            ContextVars::None => Ok(pairs),
            ContextVars::Forward(cell) => {
                let outs = run(tape, cell, &mut (0..n))?;
                let rows: Vec<Var> = outs.into_iter().map(|(_, v)| v).collect();
                Ok(tape.stack_rows(&rows)?)
            }
            ContextVars::Bidirectional(fwd, bwd) => {
                let f = run(tape, fwd, &mut (0..n))?;
                let mut b = run(tape, bwd, &mut (0..n).rev())?;
                b.reverse();
                let mut rows = Vec::with_capacity(n);
                for ((_, fv), (_, bv)) in f.into_iter().zip(b) {
                    rows.push(tape.concat(&[fv, bv])?);
                }
                Ok(tape.stack_rows(&rows)?)
            }
        }
    }

    /// Linear head: `[n, head_dim] -> [n, 1]`.
    pub fn head(&self, tape: &mut Tape<T>, vars: &ParamVars, features: Var) -> Result<Var> {
        let s = tape.matmul(features, vars.head.0)?;
        Ok(tape.add_bias(s, vars.head.1)?)
    }

    /// Scores for every candidate of one group, as a `[n, 1]` tape value.
    pub fn forward_group(&self, tape: &mut Tape<T>, vars: &ParamVars, batch: &PairBatch<T>) -> Result<Var> {
        let pairs = self.encode_pairs(tape, vars, batch)?;
        let ctx = self.contextualize(tape, vars, pairs)?;
        self.head(tape, vars, ctx)
    }

    /// Scores for independent pairs; only valid without a recurrent layer.
    pub fn forward_pairs(&self, tape: &mut Tape<T>, vars: &ParamVars, batch: &PairBatch<T>) -> Result<Var> {
        if self.config.context != ContextKind::None {
            return Err(Error::Config(format!(
                "independent pair scoring needs context none, model has {}",
                self.config.context
            )));
        }
        let pairs = self.encode_pairs(tape, vars, batch)?;
        self.head(tape, vars, pairs)
    }

    pub fn group_batch(&self, group: &QuestionGroup, table: &EmbeddingTable) -> Result<PairBatch<T>> {
        if table.dim() != self.config.embedding_dim {
            return Err(Error::Config(format!(
                "embedding table has dim {}, model expects {}",
                table.dim(),
                self.config.embedding_dim
            )));
        }
        let pairs: Vec<(&[String], &[String])> = group
            .candidates
            .iter()
            .map(|c| (group.question_tokens.as_slice(), c.tokens.as_slice()))
            .collect();
        PairBatch::from_tokens(&pairs, table, self.config.kernel_width)
    }

    /// Inference: one score per candidate, in candidate order.
    pub fn score_group(&self, group: &QuestionGroup, table: &EmbeddingTable) -> Result<Vec<f64>> {
        if group.is_empty() {
            return Err(Error::Invalid(format!("question {} has no candidates", group.question_id)));
        }
        let batch = self.group_batch(group, table)?;
        self.score_batch(&batch)
    }

    pub fn score_batch(&self, batch: &PairBatch<T>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let scores = self.forward_group(&mut tape, &vars, batch)?;
        Ok(tape.value(scores)?.to_f64_vec())
    }
}

/// A model paired with the embeddings it reads.
pub struct ModelScorer<'a, T> {
    pub model: &'a Cosinet<T>,
    pub table: &'a EmbeddingTable,
}

impl<T: Real> Scorer for ModelScorer<'_, T> {
    fn score(&self, group: &QuestionGroup) -> Result<Vec<f64>> {
        self.model.score_group(group, self.table)
    }
}
