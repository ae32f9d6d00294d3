//! Frozen pretrained word vectors.
//!
//! The text format is one entry per line: a token followed by its components,
//! whitespace separated. An optional `count dim` header line is accepted.
//! ConceptNet-style `/c/en/` prefixes are stripped so that URIs and plain
//! words share one namespace.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

pub const EMBEDDING_DIM: usize = 300;

const CONCEPT_PREFIX: &str = "/c/en/";

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vocab: HashMap<String, usize>,
    tokens: Vec<String>,
    matrix: Vec<f32>,
    oov: Vec<f32>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vocab: HashMap::new(),
            tokens: Vec::new(),
            matrix: Vec::new(),
            oov: vec![0.0; dim],
        }
    }

    /// Builds a table from `(token, vector)` pairs. Later duplicates are ignored.
    pub fn from_entries<I>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f32>)>,
    {
        let mut table = Self::new(dim);
        for (i, (token, vector)) in entries.into_iter().enumerate() {
            if vector.len() != dim {
                return Err(Error::Embeddings {
                    line: i + 1,
                    detail: format!("expected {dim} components, got {}", vector.len()),
                });
            }
            table.insert(token, &vector);
        }
        Ok(table)
    }

    fn insert(&mut self, token: String, vector: &[f32]) {
        if self.vocab.contains_key(&token) {
            return;
        }
        self.vocab.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.matrix.extend_from_slice(vector);
    }

    /// Parses the text format, keeping only tokens in `filter` when given.
    pub fn parse<R: BufRead>(reader: R, filter: Option<&HashSet<String>>, dim: usize) -> Result<Self> {
        let mut table = Self::new(dim);
        let mut vector = Vec::with_capacity(dim);
        for (i, line) in reader.split(b'\n').enumerate() {
            let lineno = i + 1;
            let raw = line.map_err(|e| Error::Embeddings {
                line: lineno,
                detail: e.to_string(),
            })?;
            let text = std::str::from_utf8(&raw).map_err(|e| Error::Embeddings {
                line: lineno,
                detail: format!("invalid UTF-8: {e}"),
            })?;
            let text = text.strip_suffix('\r').unwrap_or(text);
            if text.trim().is_empty() {
                continue;
            }
            let mut fields = text.split_whitespace();
            let head = fields.next().unwrap_or_default();
            if lineno == 1 && is_header(text) {
                continue;
            }
            let token = head.strip_prefix(CONCEPT_PREFIX).unwrap_or(head);
            let wanted = filter.is_none_or(|f| f.contains(token)) && !table.vocab.contains_key(token);
            if !wanted {
                let n = fields.count();
                if n != dim {
                    return Err(Error::Embeddings {
                        line: lineno,
                        detail: format!("expected {dim} components, got {n}"),
                    });
                }
                continue;
            }
            vector.clear();
            for f in fields {
                let v: f32 = f.parse().map_err(|_| Error::Embeddings {
                    line: lineno,
                    detail: format!("not a number: {f:?}"),
                })?;
                vector.push(v);
            }
            if vector.len() != dim {
                return Err(Error::Embeddings {
                    line: lineno,
                    detail: format!("expected {dim} components, got {}", vector.len()),
                });
            }
            table.insert(token.to_string(), &vector);
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.contains_key(token)
    }

    /// Tokens in insertion order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Vector for `token`; unknown tokens map to the zero vector.
    pub fn lookup(&self, token: &str) -> &[f32] {
        match self.vocab.get(token) {
            Some(&row) => &self.matrix[row * self.dim..(row + 1) * self.dim],
            None => &self.oov,
        }
    }

    /// `len × dim` matrix of the token vectors plus a mask marking OOV rows.
    pub fn embed_sequence(&self, tokens: &[String]) -> Result<(Tensor<f32>, Vec<bool>)> {
        if tokens.is_empty() {
            return Err(Error::Invalid("embed_sequence: empty token list".into()));
        }
        let mut data = Vec::with_capacity(tokens.len() * self.dim);
        let mut oov = Vec::with_capacity(tokens.len());
        for t in tokens {
            data.extend_from_slice(self.lookup(t));
            oov.push(!self.contains(t));
        }
        Ok((Tensor::new(vec![tokens.len(), self.dim], data)?, oov))
    }

    /// SHA-256 over dimension, tokens and raw vector bits.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for t in &self.tokens {
            h.update((t.len() as u64).to_le_bytes());
            h.update(t.as_bytes());
        }
        for v in &self.matrix {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }
}

fn is_header(line: &str) -> bool {
    let fields: Vec<&str> = line.split_whitespace().collect();
    fields.len() == 2 && fields.iter().all(|f| f.parse::<u64>().is_ok())
}

/// Loads a 300-dimensional table from `path`.
pub fn load_embeddings(path: impl AsRef<Path>, vocab_filter: Option<&HashSet<String>>) -> Result<EmbeddingTable> {
    load_embeddings_with_dim(path, vocab_filter, EMBEDDING_DIM)
}

pub fn load_embeddings_with_dim(
    path: impl AsRef<Path>,
    vocab_filter: Option<&HashSet<String>>,
    dim: usize,
) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let table = EmbeddingTable::parse(BufReader::with_capacity(1 << 20, file), vocab_filter, dim)?;
    log::info!("loaded {} vectors of dim {} from {}", table.len(), dim, path.display());
    Ok(table)
}

pub fn embed_sequence(tokens: &[String], table: &EmbeddingTable) -> Result<(Tensor<f32>, Vec<bool>)> {
    table.embed_sequence(tokens)
}
