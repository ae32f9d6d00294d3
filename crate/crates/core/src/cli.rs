//! Command-line interface. Every command writes one JSON object to stdout.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::baselines::Baseline;
use crate::corpus::{self, Ingested, QuestionGroup};
use crate::embed::{load_embeddings_with_dim, EmbeddingTable, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::eval::{evaluate, RankingMetrics};
use crate::model::io::{load_model, save_model};
use crate::model::{ContextKind, Cosinet, CosinetConfig, ModelScorer};
use crate::train::{fit, LossKind, TrainConfig, TrainingReport};

#[derive(Debug, Parser)]
#[command(name = "cosinet", version, about = "Answer sentence selection with a cosine-relatedness CNN ranker")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a dataset to the JSONL interchange format, dropping unanswered questions.
    Ingest(IngestArgs),
    /// Score a dataset with a lexical baseline.
    Baseline(BaselineArgs),
    /// Train a model and write it to --out.
    Train(TrainArgs),
    /// Evaluate a trained model.
    Eval(EvalArgs),
    /// Write per-candidate scores of a trained model.
    Predict(PredictArgs),
    /// Print the parameter count of a configuration.
    Params(ParamsArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Wikiqa,
    Jsonl,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, value_enum)]
    pub dataset: DatasetKind,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub method: Baseline,
    /// WikiQA TSV (by .tsv extension) or JSONL file.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training data, WikiQA TSV or JSONL.
    #[arg(long)]
    pub train: PathBuf,
    /// Evaluated once after training; no early stopping.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Word vectors, one "token v1 .. vD" per line.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Extra data files whose vocabulary is kept from --embeddings.
    #[arg(long = "vocab-data")]
    pub vocab_data: Vec<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file using these flag names in snake_case, plus cut_frac, ratio, beta1, beta2 and eps.
    /// Flags take precedence over the file [default: no file]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// [default: listwise]
    #[arg(long, value_enum)]
    pub loss: Option<LossKind>,
    /// [default: none]
    #[arg(long, value_enum)]
    pub context: Option<ContextKind>,
    /// [default: 3]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seeds initialization and shuffling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Peak learning rate [default: 2e-3 pointwise, 2e-4 listwise]
    #[arg(long = "max-lr")]
    pub max_lr: Option<f64>,
    /// Pairs per pointwise step [default: 64]
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    /// [default: 300]
    #[arg(long = "embedding-dim")]
    pub embedding_dim: Option<usize>,
    /// [default: 300]
    #[arg(long = "conv-hidden")]
    pub conv_hidden: Option<usize>,
    /// [default: 5]
    #[arg(long = "kernel-width")]
    pub kernel_width: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Re-read word vectors for this data instead of the ones stored in the model.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// TSV of question_id, candidate rank and score, in input order.
    #[arg(long = "scores-out")]
    pub scores_out: PathBuf,
    /// Re-read word vectors for this data instead of the ones stored in the model.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long, value_enum, default_value_t = ContextKind::None)]
    pub context: ContextKind,
    #[arg(long = "embedding-dim", default_value_t = EMBEDDING_DIM)]
    pub embedding_dim: usize,
    #[arg(long = "conv-hidden", default_value_t = 300)]
    pub conv_hidden: usize,
    #[arg(long = "kernel-width", default_value_t = 5)]
    pub kernel_width: usize,
}

/// Keys accepted in a `--config` file.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub loss: Option<LossKind>,
    pub context: Option<ContextKind>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub max_lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub cut_frac: Option<f64>,
    pub ratio: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub embedding_dim: Option<usize>,
    pub conv_hidden: Option<usize>,
    pub kernel_width: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }
}

/// Flags over config file over defaults.
pub fn resolve(args: &TrainArgs, file: &FileConfig) -> Result<(CosinetConfig, TrainConfig)> {
    let d = TrainConfig::default();
    let loss = args.loss.or(file.loss).unwrap_or(d.loss);
    let seed = args.seed.or(file.seed).unwrap_or(d.seed);
    let train = TrainConfig {
        loss,
        epochs: args.epochs.or(file.epochs).unwrap_or(d.epochs),
        max_lr: args.max_lr.or(file.max_lr),
        cut_frac: file.cut_frac.unwrap_or(d.cut_frac),
        ratio: file.ratio.unwrap_or(d.ratio),
        beta1: file.beta1.unwrap_or(d.beta1),
        beta2: file.beta2.unwrap_or(d.beta2),
        eps: file.eps.unwrap_or(d.eps),
        batch_size: args.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
        seed,
    };
    let m = CosinetConfig::default();
    let model = CosinetConfig {
        embedding_dim: args.embedding_dim.or(file.embedding_dim).unwrap_or(m.embedding_dim),
        conv_hidden: args.conv_hidden.or(file.conv_hidden).unwrap_or(m.conv_hidden),
        kernel_width: args.kernel_width.or(file.kernel_width).unwrap_or(m.kernel_width),
        context: args.context.or(file.context).unwrap_or(m.context),
        seed,
    };
    model.validate()?;
    train.validate()?;
    if train.loss == LossKind::Pointwise && model.context != ContextKind::None {
        return Err(Error::Config(format!(
            "--loss pointwise scores pairs independently and cannot be combined with --context {}",
            model.context
        )));
    }
    Ok((model, train))
}

#[derive(Debug, Serialize)]
pub struct TrainOutput {
    #[serde(flatten)]
    pub report: TrainingReport,
    pub model: PathBuf,
    pub vocabulary: usize,
    pub dev: Option<RankingMetrics>,
}

#[derive(Debug, Serialize)]
pub struct BaselineOutput {
    pub method: &'static str,
    #[serde(flatten)]
    pub metrics: RankingMetrics,
}

fn load_groups(path: &Path) -> Result<Vec<QuestionGroup>> {
    let Ingested { groups, report } = corpus::ingest_auto(path)?;
    if report.dropped_groups > 0 || report.dropped_empty_candidates > 0 {
        log::info!(
            "{}: dropped {} groups and {} empty candidates",
            path.display(),
            report.dropped_groups,
            report.dropped_empty_candidates
        );
    }
    Ok(groups)
}

fn emit<W: Write, S: Serialize>(out: &mut W, value: &S) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::Invalid(e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

/// Model plus the table to score `groups` with.
fn model_and_table(model: &Path, embeddings: Option<&Path>, groups: &[QuestionGroup]) -> Result<(Cosinet<f32>, EmbeddingTable)> {
    let (model, stored) = load_model(model)?;
    let table = match embeddings {
        Some(path) => {
            let vocab = corpus::vocabulary(groups);
            load_embeddings_with_dim(path, Some(&vocab), model.config.embedding_dim)?
        }
        None => stored,
    };
    Ok((model, table))
}

pub fn run<W: Write>(cli: Cli, out: &mut W) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => {
            let ingested = match a.dataset {
                DatasetKind::Wikiqa => corpus::ingest_wikiqa(&a.input)?,
                DatasetKind::Jsonl => corpus::ingest_jsonl(&a.input)?,
            };
            corpus::export_jsonl(&ingested.groups, &a.output)?;
            emit(out, &ingested.report)
        }
        Command::Baseline(a) => {
            let groups = load_groups(&a.data)?;
            let metrics = evaluate(&a.method, &groups)?;
            emit(
                out,
                &BaselineOutput {
                    method: a.method.name(),
                    metrics,
                },
            )
        }
        Command::Train(a) => {
            let file = match &a.config {
                Some(p) => FileConfig::load(p)?,
                None => FileConfig::default(),
            };
            let (model_cfg, train_cfg) = resolve(&a, &file)?;
            let train = load_groups(&a.train)?;
            let dev = a.dev.as_deref().map(load_groups).transpose()?;
            let mut vocab = corpus::vocabulary(&train);
            if let Some(dev) = &dev {
                vocab.extend(corpus::vocabulary(dev));
            }
            for p in &a.vocab_data {
                vocab.extend(corpus::vocabulary(&load_groups(p)?));
            }
            let table = load_embeddings_with_dim(&a.embeddings, Some(&vocab), model_cfg.embedding_dim)?;
            let mut model = Cosinet::<f32>::new(model_cfg)?;
            let report = fit(&train, &table, &mut model, &train_cfg)?;
            save_model(&a.out, &model, &table)?;
            let dev = match &dev {
                Some(groups) => Some(evaluate(
                    &ModelScorer {
                        model: &model,
                        table: &table,
                    },
                    groups,
                )?),
                None => None,
            };
            emit(
                out,
                &TrainOutput {
                    report,
                    model: a.out,
                    vocabulary: table.len(),
                    dev,
                },
            )
        }
        Command::Eval(a) => {
            let groups = load_groups(&a.data)?;
            let (model, table) = model_and_table(&a.model, a.embeddings.as_deref(), &groups)?;
            let metrics = evaluate(
                &ModelScorer {
                    model: &model,
                    table: &table,
                },
                &groups,
            )?;
            emit(out, &metrics)
        }
        Command::Predict(a) => {
            let groups = load_groups(&a.data)?;
            let (model, table) = model_and_table(&a.model, a.embeddings.as_deref(), &groups)?;
            let mut tsv = String::from("question_id\trank\tscore\n");
            let mut n = 0;
            for g in &groups {
                let scores = model.score_group(g, &table)?;
                for (c, s) in g.candidates.iter().zip(scores) {
                    tsv.push_str(&format!("{}\t{}\t{s}\n", g.question_id, c.original_rank));
                    n += 1;
                }
            }
            fs::write(&a.scores_out, tsv).map_err(|e| Error::io(&a.scores_out, e))?;
            emit(out, &serde_json::json!({ "questions": groups.len(), "scores": n, "path": a.scores_out }))
        }
        Command::Params(a) => {
            let cfg = CosinetConfig {
                embedding_dim: a.embedding_dim,
                conv_hidden: a.conv_hidden,
                kernel_width: a.kernel_width,
                context: a.context,
                seed: 0,
            };
            cfg.validate()?;
            emit(out, &serde_json::json!({ "context": cfg.context, "param_count": cfg.param_count() }))
        }
    }
}
