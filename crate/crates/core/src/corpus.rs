//! Dataset ingestion into ranked candidate groups.
//!
//! Two inputs are understood: the WikiQA TSV release and a line-delimited
//! JSON interchange format (`{question_id, question, candidates: [{text, label}]}`
//! with candidates in document order). Both go through the same
//! normalization: lowercase tokenization, dropping candidates that tokenize
//! to nothing, and removing groups without a positive candidate.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub text: String,
    pub tokens: Vec<String>,
    pub label: bool,
    /// 1-based position in the source document.
    pub original_rank: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuestionGroup {
    pub question_id: String,
    pub question: String,
    pub question_tokens: Vec<String>,
    /// Ordered by `original_rank`.
    pub candidates: Vec<Candidate>,
}

impl QuestionGroup {
    /// Tokenizes the question and candidates, dropping empty candidates and
    /// assigning ranks `1..=n` in the given order. Returns the group and the
    /// number of dropped candidates.
    pub fn build(question_id: impl Into<String>, question: impl Into<String>, candidates: Vec<(String, bool)>) -> (Self, usize) {
        let question = question.into();
        let question_tokens = tokenize(&question);
        let total = candidates.len();
        let candidates: Vec<Candidate> = candidates
            .into_iter()
            .filter_map(|(text, label)| {
                let tokens = tokenize(&text);
                (!tokens.is_empty()).then_some((text, tokens, label))
            })
            .enumerate()
            .map(|(i, (text, tokens, label))| Candidate {
                text,
                tokens,
                label,
                original_rank: i + 1,
            })
            .collect();
        let dropped = total - candidates.len();
        (
            Self {
                question_id: question_id.into(),
                question,
                question_tokens,
                candidates,
            },
            dropped,
        )
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.candidates.iter().map(|c| c.label).collect()
    }

    pub fn positives(&self) -> usize {
        self.candidates.iter().filter(|c| c.label).count()
    }
}

/// Lowercases, splits on whitespace, and splits every non-alphanumeric
/// character into its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    for chunk in lower.split_whitespace() {
        let mut word = String::new();
        for ch in chunk.chars() {
            if ch.is_alphanumeric() {
                word.push(ch);
            } else {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(ch.to_string());
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    /// Distinct questions in the source, before any filtering.
    pub questions: usize,
    /// Candidate rows in the source, before any filtering.
    pub sentences: usize,
    pub kept_groups: usize,
    /// Groups removed because no candidate is labelled positive (or the
    /// question itself tokenizes to nothing).
    pub dropped_groups: usize,
    /// Candidates removed because they tokenize to nothing.
    pub dropped_empty_candidates: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ingested {
    pub groups: Vec<QuestionGroup>,
    pub report: IngestReport,
}

/// Question id, question text and labelled candidates, before filtering.
type RawGroup = (String, String, Vec<(String, bool)>);

fn finish(raw: Vec<RawGroup>, sentences: usize) -> Ingested {
    let mut report = IngestReport {
        questions: raw.len(),
        sentences,
        ..Default::default()
    };
    let mut groups = Vec::with_capacity(raw.len());
    for (qid, question, cands) in raw {
        let (group, dropped) = QuestionGroup::build(qid, question, cands);
        report.dropped_empty_candidates += dropped;
        if group.positives() == 0 || group.question_tokens.is_empty() {
            report.dropped_groups += 1;
        } else {
            groups.push(group);
        }
    }
    report.kept_groups = groups.len();
    if report.dropped_empty_candidates > 0 {
        log::warn!("dropped {} empty candidates", report.dropped_empty_candidates);
    }
    log::info!(
        "kept {} groups, dropped {} without answers",
        report.kept_groups,
        report.dropped_groups
    );
    Ingested { groups, report }
}

const WIKIQA_COLUMNS: [&str; 7] = [
    "QuestionID",
    "Question",
    "DocumentID",
    "DocumentTitle",
    "SentenceID",
    "Sentence",
    "Label",
];

/// Reads the WikiQA TSV release (header row, tab separated, no quoting).
pub fn ingest_wikiqa(path: impl AsRef<Path>) -> Result<Ingested> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_wikiqa(BufReader::new(file), path)
}

pub fn parse_wikiqa<R: BufRead>(reader: R, origin: &Path) -> Result<Ingested> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(origin, e))?,
        None => String::new(),
    };
    let header: Vec<&str> = header.trim_end_matches('\r').split('\t').collect();
    let col = |name: &str| {
        header.iter().position(|h| *h == name).ok_or_else(|| Error::MissingColumn {
            path: origin.to_path_buf(),
            column: name.to_string(),
        })
    };
    for name in WIKIQA_COLUMNS {
        col(name)?;
    }
    let (qid_col, q_col, s_col, l_col) = (col("QuestionID")?, col("Question")?, col("Sentence")?, col("Label")?);
    let width = header.len();

    let mut index: HashMap<String, usize> = HashMap::new();
    let mut raw: Vec<RawGroup> = Vec::new();
    let mut sentences = 0;
    for (i, line) in lines.enumerate() {
        let row = i + 2;
        let line = line.map_err(|e| Error::io(origin, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != width {
            return Err(Error::BadRow {
                path: origin.to_path_buf(),
                row,
                detail: format!("expected {width} fields, got {}", fields.len()),
            });
        }
        let label = match fields[l_col].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::BadRow {
                    path: origin.to_path_buf(),
                    row,
                    detail: format!("non-binary label {other:?}"),
                })
            }
        };
        let qid = fields[qid_col];
        let slot = *index.entry(qid.to_string()).or_insert_with(|| {
            raw.push((qid.to_string(), fields[q_col].to_string(), Vec::new()));
            raw.len() - 1
        });
        raw[slot].2.push((fields[s_col].to_string(), label));
        sentences += 1;
    }
    Ok(finish(raw, sentences))
}

#[derive(Serialize, Deserialize)]
struct Record {
    question_id: String,
    question: String,
    candidates: Vec<RecordCandidate>,
}

#[derive(Serialize, Deserialize)]
struct RecordCandidate {
    text: String,
    label: u8,
}

pub fn ingest_jsonl(path: impl AsRef<Path>) -> Result<Ingested> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(BufReader::new(file), path)
}

pub fn parse_jsonl<R: BufRead>(reader: R, origin: &Path) -> Result<Ingested> {
    let bad = |line: usize, detail: String| Error::BadRecord {
        path: origin.to_path_buf(),
        line,
        detail,
    };
    let mut raw = Vec::new();
    let mut seen = HashSet::new();
    let mut sentences = 0;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| bad(lineno, e.to_string()))?;
        if !seen.insert(rec.question_id.clone()) {
            return Err(bad(lineno, format!("duplicate question_id {:?}", rec.question_id)));
        }
        let mut cands = Vec::with_capacity(rec.candidates.len());
        for c in rec.candidates {
            let label = match c.label {
                0 => false,
                1 => true,
                other => return Err(bad(lineno, format!("non-binary label {other}"))),
            };
            cands.push((c.text, label));
        }
        sentences += cands.len();
        raw.push((rec.question_id, rec.question, cands));
    }
    Ok(finish(raw, sentences))
}

pub fn write_jsonl<W: Write>(groups: &[QuestionGroup], mut out: W) -> std::io::Result<()> {
    for g in groups {
        let rec = Record {
            question_id: g.question_id.clone(),
            question: g.question.clone(),
            candidates: g
                .candidates
                .iter()
                .map(|c| RecordCandidate {
                    text: c.text.clone(),
                    label: u8::from(c.label),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn export_jsonl(groups: &[QuestionGroup], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl(groups, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Reads either format, choosing WikiQA for `.tsv` files and JSONL otherwise.
pub fn ingest_auto(path: impl AsRef<Path>) -> Result<Ingested> {
    let path = path.as_ref();
    if is_tsv(path) {
        ingest_wikiqa(path)
    } else {
        ingest_jsonl(path)
    }
}

fn is_tsv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv"))
}

/// Every token appearing in any question or candidate.
pub fn vocabulary<'a>(groups: impl IntoIterator<Item = &'a QuestionGroup>) -> HashSet<String> {
    let mut vocab = HashSet::new();
    for g in groups {
        vocab.extend(g.question_tokens.iter().cloned());
        for c in &g.candidates {
            vocab.extend(c.tokens.iter().cloned());
        }
    }
    vocab
}

/// Conventional WikiQA split file names inside a release directory.
pub fn wikiqa_split(dir: impl AsRef<Path>, split: &str) -> PathBuf {
    dir.as_ref().join(format!("WikiQA-{split}.tsv"))
}
