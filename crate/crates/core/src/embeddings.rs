//! Pre-trained word vectors, smooth-inverse-frequency weights, and the
//! per-document embedding matrix.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Document;
use crate::error::{Error, Result};

pub const DEFAULT_SIF_A: f64 = 1e-3;
pub const DEFAULT_OOV_SEED: u64 = 17;
/// Out-of-vocabulary components are drawn from `[-OOV_RANGE, OOV_RANGE]`.
pub const OOV_RANGE: f64 = 0.05;

/// Word vectors in GloVe text format.
///
/// Unknown tokens get a vector derived from a hash of the token and
/// `oov_seed`, so they are stable across calls and processes without a
/// mutable cache.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    oov_seed: u64,
    skipped_lines: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize, oov_seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingTable {
            dim,
            index: HashMap::new(),
            data: Vec::new(),
            oov_seed,
            skipped_lines: 0,
        })
    }

    /// Insert or overwrite a vector.
    pub fn insert(&mut self, token: &str, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Validation(format!(
                "vector for {token:?} has {} components, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "vector for {token:?} is not finite"
            )));
        }
        match self.index.get(token) {
            Some(&row) => self.data[row * self.dim..(row + 1) * self.dim].copy_from_slice(vector),
            None => {
                self.index.insert(token.to_string(), self.index.len());
                self.data.extend_from_slice(vector);
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn oov_seed(&self) -> u64 {
        self.oov_seed
    }

    /// Lines dropped while loading.
    pub fn skipped_lines(&self) -> usize {
        self.skipped_lines
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn stored(&self, token: &str) -> Option<&[f64]> {
        self.index
            .get(token)
            .map(|&row| &self.data[row * self.dim..(row + 1) * self.dim])
    }

    /// Stored vector, or the deterministic OOV vector.
    pub fn vector(&self, token: &str) -> Vec<f64> {
        match self.stored(token) {
            Some(v) => v.to_vec(),
            None => self.oov_vector(token),
        }
    }

    pub fn oov_vector(&self, token: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.oov_seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dim)
            .map(|_| rng.gen_range(-OOV_RANGE..=OOV_RANGE))
            .collect()
    }

    /// Multiply every stored vector by `c`.
    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }
}

/// Load GloVe text format: a token followed by `dim` floats per line.
/// Malformed lines (wrong arity, unparsable or non-finite numbers) are
/// skipped and counted.
pub fn load_embeddings(path: &Path, dim: usize, oov_seed: u64) -> Result<EmbeddingTable> {
    let file = File::open(path)
        .map_err(|e| Error::Load(format!("cannot open embeddings {}: {e}", path.display())))?;
    let mut table = EmbeddingTable::new(dim, oov_seed)?;
    let mut buf = Vec::with_capacity(dim);
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else {
            continue;
        };
        buf.clear();
        let mut ok = true;
        for p in parts {
            match p.parse::<f64>() {
                Ok(v) if v.is_finite() => buf.push(v),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok || buf.len() != dim {
            table.skipped_lines += 1;
            continue;
        }
        table.insert(token, &buf)?;
    }
    if table.skipped_lines > 0 {
        log::warn!(
            "{}: skipped {} malformed embedding line(s)",
            path.display(),
            table.skipped_lines
        );
    }
    if table.is_empty() {
        return Err(Error::Load(format!(
            "{} contains no valid {dim}-dimensional vectors",
            path.display()
        )));
    }
    Ok(table)
}

/// Smooth inverse frequency weights `a / (a + p(w))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SifWeights {
    pub a: f64,
    pub frequencies: HashMap<String, f64>,
    pub default_weight: f64,
}

impl SifWeights {
    /// Every token weighs 1.
    pub fn uniform() -> Self {
        SifWeights {
            a: DEFAULT_SIF_A,
            frequencies: HashMap::new(),
            default_weight: 1.0,
        }
    }

    pub fn weight(&self, token: &str) -> f64 {
        match self.frequencies.get(token) {
            Some(&p) => self.a / (self.a + p),
            None => self.default_weight,
        }
    }
}

/// Relative token frequencies over `docs` turned into SIF weights.
pub fn compute_sif<'a>(docs: impl IntoIterator<Item = &'a Document>, a: f64) -> Result<SifWeights> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Config(format!(
            "SIF constant a must be positive, got {a}"
        )));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut total = 0usize;
    for doc in docs {
        for t in &doc.tokens {
            *counts.entry(t.clone()).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Validation(
            "cannot compute SIF weights on an empty corpus".into(),
        ));
    }
    let frequencies = counts
        .into_iter()
        .map(|(t, c)| (t, c as f64 / total as f64))
        .collect();
    Ok(SifWeights {
        a,
        frequencies,
        default_weight: 1.0,
    })
}

/// A document as a token-major matrix: row `t` is the SIF-weighted vector of token `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedDoc {
    pub id: String,
    pub matrix: Array2<f64>,
    pub score: u8,
}

impl EmbeddedDoc {
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }
}

pub fn embed_document(
    doc: &Document,
    table: &EmbeddingTable,
    sif: &SifWeights,
) -> Result<EmbeddedDoc> {
    if doc.tokens.is_empty() {
        return Err(Error::Validation(format!(
            "document {:?} has no tokens",
            doc.id
        )));
    }
    let mut matrix = Array2::zeros((doc.tokens.len(), table.dim()));
    for (mut row, token) in matrix.rows_mut().into_iter().zip(&doc.tokens) {
        let w = sif.weight(token);
        match table.stored(token) {
            Some(v) => row.iter_mut().zip(v).for_each(|(r, x)| *r = w * x),
            None => row
                .iter_mut()
                .zip(table.oov_vector(token))
                .for_each(|(r, x)| *r = w * x),
        }
    }
    Ok(EmbeddedDoc {
        id: doc.id.clone(),
        matrix,
        score: doc.score,
    })
}

pub fn embed_all(
    docs: &[Document],
    table: &EmbeddingTable,
    sif: &SifWeights,
) -> Result<Vec<EmbeddedDoc>> {
    docs.iter().map(|d| embed_document(d, table, sif)).collect()
}
