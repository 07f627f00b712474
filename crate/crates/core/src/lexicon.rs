//! Word vectors, trainable linear heads and the literal listener.
//!
//! A listener interprets a clue by the cosine similarity between the clue's
//! embedding and each candidate word's embedding, pushed through a softmax.
//! Embeddings are either raw table rows or rows transformed by a
//! [`LinearHead`].

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking that a distribution is normalized.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: expected dimension {expected}, found {found}")]
    Dimension {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("embedding file is empty")]
    Empty,
    #[error("word `{0}` is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("zero-norm vector for `{0}`")]
    Degenerate(String),
    #[error("candidate list is empty")]
    NoCandidates,
    #[error("duplicate candidate `{0}`")]
    DuplicateCandidate(String),
    #[error("head shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid head file: {0}")]
    HeadFormat(#[from] serde_json::Error),
}

/// Lowercases and trims a word before lookup.
pub fn normalize_word(word: &str) -> String {
    word.trim().to_ascii_lowercase()
}

/// Base word vectors in file order (most frequent first for GloVe-style files).
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    /// Builds a table from `(word, vector)` pairs. Words are normalized and
    /// the first occurrence of a duplicate wins.
    pub fn from_entries<I, S>(entries: I) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut table = EmbeddingTable {
            vocab: Vec::new(),
            index: HashMap::new(),
            dim: 0,
            data: Vec::new(),
        };
        for (i, (word, vector)) in entries.into_iter().enumerate() {
            table.push(word.as_ref(), &vector, i + 1)?;
        }
        if table.vocab.is_empty() {
            return Err(LexiconError::Empty);
        }
        Ok(table)
    }

    fn push(&mut self, word: &str, vector: &[f64], line: usize) -> Result<(), LexiconError> {
        if vector.is_empty() {
            return Err(LexiconError::Malformed {
                line,
                reason: "no vector components".into(),
            });
        }
        if self.vocab.is_empty() && self.dim == 0 {
            self.dim = vector.len();
        } else if vector.len() != self.dim {
            return Err(LexiconError::Dimension {
                line,
                expected: self.dim,
                found: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(LexiconError::Malformed {
                line,
                reason: "non-finite component".into(),
            });
        }
        let word = normalize_word(word);
        if self.index.contains_key(&word) {
            return Ok(());
        }
        self.index.insert(word.clone(), self.vocab.len());
        self.vocab.push(word);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    /// Reads a whitespace-separated word-vector text file. A word2vec
    /// `count dim` header on the first line is skipped.
    pub fn load(path: impl AsRef<Path>, vocab_limit: Option<usize>) -> Result<Self, LexiconError> {
        Self::read(BufReader::new(File::open(path)?), vocab_limit)
    }

    pub fn read<R: BufRead>(reader: R, vocab_limit: Option<usize>) -> Result<Self, LexiconError> {
        let mut table = EmbeddingTable {
            vocab: Vec::new(),
            index: HashMap::new(),
            dim: 0,
            data: Vec::new(),
        };
        let limit = vocab_limit.unwrap_or(usize::MAX);
        for (i, line) in reader.lines().enumerate() {
            if table.vocab.len() >= limit {
                break;
            }
            let line = line?;
            let lineno = i + 1;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            if i == 0 && is_word2vec_header(&line) {
                continue;
            }
            let vector = parts
                .map(|p| p.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| LexiconError::Malformed {
                    line: lineno,
                    reason: format!("bad component: {e}"),
                })?;
            table.push(word, &vector, lineno)?;
        }
        if table.vocab.is_empty() {
            return Err(LexiconError::Empty);
        }
        Ok(table)
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, word) in self.vocab.iter().enumerate() {
            write!(out, "{word}")?;
            for v in self.row(i) {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index
            .get(word)
            .or_else(|| self.index.get(&normalize_word(word)))
            .copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index_of(word).is_some()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector(&self, word: &str) -> Option<&[f64]> {
        self.index_of(word).map(|i| self.row(i))
    }
}

/// Affine map applied on top of base vectors, plus the log-temperature `t`
/// whose exponential scales cosine logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weight: DMatrix<f64>,
    pub bias: Option<DVector<f64>>,
    pub temperature: f64,
}

#[derive(Serialize, Deserialize)]
struct HeadFile {
    d_in: usize,
    d_out: usize,
    weight: Vec<Vec<f64>>,
    bias: Option<Vec<f64>>,
    temperature: f64,
}

impl LinearHead {
    pub fn identity(dim: usize) -> Self {
        LinearHead {
            weight: DMatrix::identity(dim, dim),
            bias: None,
            temperature: 0.0,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.nrows()
    }

    /// `exp(t)`, the factor applied to cosine similarities.
    pub fn logit_scale(&self) -> f64 {
        self.temperature.exp()
    }

    pub fn apply(&self, x: &[f64]) -> DVector<f64> {
        let mut out = &self.weight * DVector::from_column_slice(x);
        if let Some(b) = &self.bias {
            out += b;
        }
        out
    }

    pub fn validate(&self) -> Result<(), LexiconError> {
        if self.weight.nrows() == 0 || self.weight.ncols() == 0 {
            return Err(LexiconError::Shape("empty weight matrix".into()));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.d_out() {
                return Err(LexiconError::Shape(format!(
                    "bias has length {}, expected {}",
                    b.len(),
                    self.d_out()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(LexiconError::NonFinite("bias".into()));
            }
        }
        if self.weight.iter().any(|v| !v.is_finite()) {
            return Err(LexiconError::NonFinite("weight".into()));
        }
        if !self.temperature.is_finite() {
            return Err(LexiconError::NonFinite("temperature".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = HeadFile {
            d_in: self.d_in(),
            d_out: self.d_out(),
            weight: self
                .weight
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            bias: self.bias.as_ref().map(|b| b.iter().copied().collect()),
            temperature: self.temperature,
        };
        serde_json::to_string(&file).expect("head serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LexiconError> {
        let file: HeadFile = serde_json::from_str(text)?;
        if file.weight.len() != file.d_out || file.weight.iter().any(|r| r.len() != file.d_in) {
            return Err(LexiconError::Shape(format!(
                "weight is not {}x{}",
                file.d_out, file.d_in
            )));
        }
        let weight = DMatrix::from_fn(file.d_out, file.d_in, |r, c| file.weight[r][c]);
        let head = LinearHead {
            weight,
            bias: file.bias.map(DVector::from_vec),
            temperature: file.temperature,
        };
        head.validate()?;
        Ok(head)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LexiconError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// `E(x)`: the raw row when `head` is absent, otherwise `W x (+ b)`.
pub fn embed(
    table: &EmbeddingTable,
    head: Option<&LinearHead>,
    word: &str,
) -> Result<DVector<f64>, LexiconError> {
    let row = table
        .vector(word)
        .ok_or_else(|| LexiconError::OutOfVocabulary(word.to_string()))?;
    match head {
        None => Ok(DVector::from_column_slice(row)),
        Some(h) => {
            if h.d_in() != table.dim() {
                return Err(LexiconError::Shape(format!(
                    "head expects d_in={}, table has d={}",
                    h.d_in(),
                    table.dim()
                )));
            }
            Ok(h.apply(row))
        }
    }
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64, LexiconError> {
    assert_eq!(a.len(), b.len(), "cosine_sim on vectors of different length");
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(LexiconError::Degenerate("cosine argument".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A normalized probability vector over an ordered word list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    support: Vec<String>,
    probs: Vec<f64>,
}

impl Distribution {
    /// Validates and wraps an already-normalized probability vector.
    pub fn new(support: Vec<String>, probs: Vec<f64>) -> Result<Self, LexiconError> {
        if support.is_empty() {
            return Err(LexiconError::NoCandidates);
        }
        if support.len() != probs.len() {
            return Err(LexiconError::Shape(format!(
                "{} words but {} probabilities",
                support.len(),
                probs.len()
            )));
        }
        check_unique(&support)?;
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(LexiconError::NonFinite("probabilities".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(LexiconError::Shape(format!("probabilities sum to {total}")));
        }
        Ok(Distribution { support, probs })
    }

    /// Softmax of `logits` over `support`.
    pub fn from_logits(support: Vec<String>, logits: &[f64]) -> Result<Self, LexiconError> {
        if support.is_empty() {
            return Err(LexiconError::NoCandidates);
        }
        check_unique(&support)?;
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs = exps.into_iter().map(|e| e / z).collect();
        Ok(Distribution { support, probs })
    }

    pub fn support(&self) -> &[String] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn prob_of(&self, word: &str) -> Option<f64> {
        self.support
            .iter()
            .position(|w| w == word)
            .map(|i| self.probs[i])
    }

    /// Most probable word; exact ties go to the lexicographically smallest.
    pub fn argmax(&self) -> &str {
        argmax_by_score(self.support.iter().map(String::as_str), &self.probs)
    }
}

pub(crate) fn argmax_by_score<'a>(words: impl Iterator<Item = &'a str>, scores: &[f64]) -> &'a str {
    let mut best: Option<(&str, f64)> = None;
    for (w, &s) in words.zip(scores) {
        best = match best {
            None => Some((w, s)),
            Some((bw, bs)) if s > bs || (s == bs && w < bw) => Some((w, s)),
            keep => keep,
        };
    }
    best.expect("argmax over empty set").0
}

fn check_unique(words: &[String]) -> Result<(), LexiconError> {
    let mut seen = std::collections::HashSet::with_capacity(words.len());
    for w in words {
        if !seen.insert(w.as_str()) {
            return Err(LexiconError::DuplicateCandidate(w.clone()));
        }
    }
    Ok(())
}

/// `P_L0(g|c)`: softmax over candidates of raw cosine similarities between
/// the clue and each candidate.
pub fn listener_distribution(
    table: &EmbeddingTable,
    head: Option<&LinearHead>,
    clue: &str,
    candidates: &[String],
) -> Result<Distribution, LexiconError> {
    if candidates.is_empty() {
        return Err(LexiconError::NoCandidates);
    }
    let c = embed(table, head, clue)?;
    let sims = candidates
        .iter()
        .map(|w| {
            let v = embed(table, head, w)?;
            cosine_sim(c.as_slice(), v.as_slice()).map_err(|_| degenerate_pair(clue, w, &c))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Distribution::from_logits(candidates.to_vec(), &sims)
}

fn degenerate_pair(clue: &str, word: &str, clue_vec: &DVector<f64>) -> LexiconError {
    if clue_vec.norm() == 0.0 {
        LexiconError::Degenerate(clue.to_string())
    } else {
        LexiconError::Degenerate(word.to_string())
    }
}

/// A shareable literal listener: a table, an optional head, and the scale
/// applied to cosine logits.
///
/// When built from a head the scale is the head's learned `exp(t)`; a bare
/// table uses scale 1, which is exactly [`listener_distribution`]. Unit
/// embeddings are computed lazily and cached, so cloning is cheap and clones
/// share the cache.
#[derive(Clone)]
pub struct Listener {
    table: Arc<EmbeddingTable>,
    head: Option<Arc<LinearHead>>,
    scale: f64,
    cache: Arc<[OnceLock<Option<Box<[f64]>>>]>,
}

impl std::fmt::Debug for Listener {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Listener")
            .field("vocab", &self.table.len())
            .field("head", &self.head.as_ref().map(|h| (h.d_out(), h.d_in())))
            .field("scale", &self.scale)
            .finish()
    }
}

impl Listener {
    pub fn new(table: Arc<EmbeddingTable>, head: Option<Arc<LinearHead>>) -> Result<Self, LexiconError> {
        if let Some(h) = &head {
            h.validate()?;
            if h.d_in() != table.dim() {
                return Err(LexiconError::Shape(format!(
                    "head expects d_in={}, table has d={}",
                    h.d_in(),
                    table.dim()
                )));
            }
        }
        let scale = head.as_ref().map_or(1.0, |h| h.logit_scale());
        let cache = (0..table.len()).map(|_| OnceLock::new()).collect();
        Ok(Listener {
            table,
            head,
            scale,
            cache,
        })
    }

    /// Overrides the logit scale. `1.0` gives the untempered listener.
    pub fn with_scale(mut self, scale: f64) -> Self {
        assert!(scale > 0.0 && scale.is_finite(), "listener scale must be positive");
        self.scale = scale;
        self
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn table_arc(&self) -> &Arc<EmbeddingTable> {
        &self.table
    }

    pub fn head(&self) -> Option<&LinearHead> {
        self.head.as_deref()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Unit-length embedding of `word`.
    pub fn unit(&self, word: &str) -> Result<&[f64], LexiconError> {
        let i = self
            .table
            .index_of(word)
            .ok_or_else(|| LexiconError::OutOfVocabulary(word.to_string()))?;
        let slot = self.cache[i].get_or_init(|| {
            let v = match &self.head {
                None => DVector::from_column_slice(self.table.row(i)),
                Some(h) => h.apply(self.table.row(i)),
            };
            let n = v.norm();
            (n > 0.0).then(|| v.iter().map(|x| x / n).collect())
        });
        slot.as_deref()
            .ok_or_else(|| LexiconError::Degenerate(word.to_string()))
    }

    pub fn similarity(&self, a: &str, b: &str) -> Result<f64, LexiconError> {
        Ok(dot(self.unit(a)?, self.unit(b)?).clamp(-1.0, 1.0))
    }

    pub fn similarities(&self, clue: &str, candidates: &[String]) -> Result<Vec<f64>, LexiconError> {
        let c = self.unit(clue)?;
        candidates
            .iter()
            .map(|w| Ok(dot(c, self.unit(w)?).clamp(-1.0, 1.0)))
            .collect()
    }

    /// Softmax of `scale * cos(clue, w)` over the candidates.
    pub fn distribution(&self, clue: &str, candidates: &[String]) -> Result<Distribution, LexiconError> {
        if candidates.is_empty() {
            return Err(LexiconError::NoCandidates);
        }
        let logits: Vec<f64> = self
            .similarities(clue, candidates)?
            .into_iter()
            .map(|s| s * self.scale)
            .collect();
        Distribution::from_logits(candidates.to_vec(), &logits)
    }
}

fn is_word2vec_header(line: &str) -> bool {
    let parts: Vec<&str> = line.split_whitespace().collect();
    parts.len() == 2 && parts.iter().all(|p| p.parse::<usize>().is_ok())
}
