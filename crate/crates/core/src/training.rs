//! Contrastive training of listener heads.
//!
//! For a clue `c` and candidates `w_1..w_n` with selected set `S`:
//!
//! ```text
//! u_i  = exp(t) * cos(E(w_i), E(c)),   E(x) = W x + b
//! loss = -(1/|S|) * sum_{i in S} log softmax(u)_i
//! ```
//!
//! Gradients for `W`, `b` and `t` are computed analytically. With
//! `g_j = softmax(u)_j - 1{j in S}/|S|` and `s = exp(t)`:
//!
//! ```text
//! dL/dt   = sum_j g_j u_j
//! dL/da_j = s g_j (q/(|a_j||q|) - cos_j a_j/|a_j|^2)
//! dL/dq   = sum_j s g_j (a_j/(|a_j||q|) - cos_j q/|q|^2)
//! dL/dW   = sum_j dL/da_j x_j^T + dL/dq x_c^T
//! dL/db   = sum_j dL/da_j + dL/dq
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::GameRecord;
use crate::lexicon::{normalize_word, EmbeddingTable, LexiconError, LinearHead};
use crate::par::{self, Parallelism};

/// Bounds on `exp(t)`.
pub const MIN_LOGIT_SCALE: f64 = 1.0;
pub const MAX_LOGIT_SCALE: f64 = 100.0;

/// Bucket for records without a usable attribute value.
pub const UNASSIGNED: &str = "unassigned";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error("no training examples")]
    Empty,
    #[error("invalid example {index}: {reason}")]
    InvalidExample { index: usize, reason: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("training diverged in epoch {epoch} after {} complete epochs", trace.len())]
    Diverged { epoch: usize, trace: Vec<EpochStats> },
    #[error("unknown demographic attribute `{0}`")]
    UnknownAttribute(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnExample {
    pub clue: String,
    pub board_words: Vec<String>,
    /// Indices into `board_words`.
    pub selected: Vec<usize>,
}

impl TurnExample {
    pub fn validate(&self, table: &EmbeddingTable) -> Result<(), String> {
        if self.board_words.is_empty() {
            return Err("no candidate words".into());
        }
        if self.selected.is_empty() {
            return Err("empty selection".into());
        }
        if let Some(i) = self.selected.iter().find(|&&i| i >= self.board_words.len()) {
            return Err(format!("selected index {i} out of range"));
        }
        if self.selected.iter().collect::<BTreeSet<_>>().len() != self.selected.len() {
            return Err("duplicate selected index".into());
        }
        if let Some(w) = std::iter::once(&self.clue)
            .chain(&self.board_words)
            .find(|w| !table.contains(w))
        {
            return Err(format!("`{w}` is not in the vocabulary"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Initial `t`; `exp(t)` is the initial logit scale.
    pub temperature_init: f64,
    pub optimizer: Optimizer,
    /// Output width of the head; defaults to the embedding width.
    pub d_out: Option<usize>,
    pub bias: bool,
    pub parallelism: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            learning_rate: 1e-2,
            batch_size: 32,
            seed: 0,
            temperature_init: 10f64.ln(),
            optimizer: Optimizer::Sgd,
            d_out: None,
            bias: false,
            parallelism: Parallelism::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(MIN_LOGIT_SCALE.ln()..=MAX_LOGIT_SCALE.ln()).contains(&self.temperature_init) {
            return bad("temperature_init must satisfy 1 <= exp(t) <= 100");
        }
        if self.d_out == Some(0) {
            return bad("d_out must be at least 1");
        }
        Ok(())
    }
}

/// Gradient with the same shape as a [`LinearHead`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub weight: DMatrix<f64>,
    pub bias: Option<DVector<f64>>,
    pub temperature: f64,
}

impl HeadGradient {
    pub fn zeros_like(head: &LinearHead) -> Self {
        HeadGradient {
            weight: DMatrix::zeros(head.d_out(), head.d_in()),
            bias: head.bias.as_ref().map(|b| DVector::zeros(b.len())),
            temperature: 0.0,
        }
    }

    pub fn add_assign(&mut self, other: &HeadGradient) {
        self.weight += &other.weight;
        if let (Some(a), Some(b)) = (&mut self.bias, &other.bias) {
            *a += b;
        }
        self.temperature += other.temperature;
    }

    pub fn scale(&mut self, k: f64) {
        self.weight *= k;
        if let Some(b) = &mut self.bias {
            *b *= k;
        }
        self.temperature *= k;
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().all(|v| v.is_finite())
            && self.bias.as_ref().is_none_or(|b| b.iter().all(|v| v.is_finite()))
            && self.temperature.is_finite()
    }
}

struct Forward {
    xs: Vec<DVector<f64>>,
    xq: DVector<f64>,
    a: Vec<DVector<f64>>,
    q: DVector<f64>,
    cos: Vec<f64>,
    u: Vec<f64>,
    p: Vec<f64>,
    loss: f64,
}

fn row(table: &EmbeddingTable, word: &str) -> Result<DVector<f64>, LexiconError> {
    table
        .vector(word)
        .map(DVector::from_column_slice)
        .ok_or_else(|| LexiconError::OutOfVocabulary(word.to_string()))
}

fn forward(head: &LinearHead, table: &EmbeddingTable, ex: &TurnExample) -> Result<Forward, LexiconError> {
    if head.d_in() != table.dim() {
        return Err(LexiconError::Shape(format!(
            "head expects d_in={}, table has d={}",
            head.d_in(),
            table.dim()
        )));
    }
    if ex.selected.is_empty() || ex.selected.iter().any(|&i| i >= ex.board_words.len()) {
        return Err(LexiconError::Shape("selected indices must be nonempty and in range".into()));
    }
    let xq = row(table, &ex.clue)?;
    let xs = ex
        .board_words
        .iter()
        .map(|w| row(table, w))
        .collect::<Result<Vec<_>, _>>()?;
    let q = head.apply(xq.as_slice());
    let a: Vec<DVector<f64>> = xs.iter().map(|x| head.apply(x.as_slice())).collect();
    let qn = q.norm();
    if qn == 0.0 {
        return Err(LexiconError::Degenerate(ex.clue.clone()));
    }
    let mut cos = Vec::with_capacity(a.len());
    for (aj, w) in a.iter().zip(&ex.board_words) {
        let an = aj.norm();
        if an == 0.0 {
            return Err(LexiconError::Degenerate(w.clone()));
        }
        cos.push(aj.dot(&q) / (an * qn));
    }
    let s = head.logit_scale();
    let u: Vec<f64> = cos.iter().map(|c| s * c).collect();
    let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = u.iter().map(|v| (v - m).exp()).sum();
    let lse = m + z.ln();
    let p: Vec<f64> = u.iter().map(|v| (v - lse).exp()).collect();
    let mean_sel = ex.selected.iter().map(|&i| u[i]).sum::<f64>() / ex.selected.len() as f64;
    // Rounding can push a zero loss slightly negative; NaN must pass through.
    let loss = lse - mean_sel;
    let loss = if loss < 0.0 { 0.0 } else { loss };
    Ok(Forward { xs, xq, a, q, cos, u, p, loss })
}

/// Loss only, without gradients.
pub fn loss_value(head: &LinearHead, table: &EmbeddingTable, ex: &TurnExample) -> Result<f64, LexiconError> {
    forward(head, table, ex).map(|f| f.loss)
}

pub fn contrastive_loss(
    head: &LinearHead,
    table: &EmbeddingTable,
    ex: &TurnExample,
) -> Result<(f64, HeadGradient), LexiconError> {
    let f = forward(head, table, ex)?;
    let s = head.logit_scale();
    let k = 1.0 / ex.selected.len() as f64;
    let mut g = f.p.clone();
    for &i in &ex.selected {
        g[i] -= k;
    }
    let mut grad = HeadGradient::zeros_like(head);
    grad.temperature = g.iter().zip(&f.u).map(|(gj, uj)| gj * uj).sum();

    let qn = f.q.norm();
    let mut dq = DVector::zeros(f.q.len());
    for j in 0..f.a.len() {
        let an = f.a[j].norm();
        let dcos = s * g[j];
        let da = (&f.q / (an * qn) - &f.a[j] * (f.cos[j] / (an * an))) * dcos;
        dq += (&f.a[j] / (an * qn) - &f.q * (f.cos[j] / (qn * qn))) * dcos;
        grad.weight.ger(1.0, &da, &f.xs[j], 1.0);
        if let Some(b) = &mut grad.bias {
            *b += &da;
        }
    }
    grad.weight.ger(1.0, &dq, &f.xq, 1.0);
    if let Some(b) = &mut grad.bias {
        *b += &dq;
    }
    Ok((f.loss, grad))
}

/// Index of the most probable candidate under `head`, ties to the lowest index.
pub fn predict(head: &LinearHead, table: &EmbeddingTable, ex: &TurnExample) -> Result<usize, LexiconError> {
    let f = forward(head, table, ex)?;
    let mut best = 0;
    for (i, c) in f.cos.iter().enumerate() {
        if *c > f.cos[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Share of examples whose top prediction is one of the selected words.
/// Returns `None` for an empty slice.
pub fn guess_accuracy(
    head: &LinearHead,
    table: &EmbeddingTable,
    examples: &[TurnExample],
) -> Result<Option<f64>, LexiconError> {
    if examples.is_empty() {
        return Ok(None);
    }
    let mut hits = 0;
    for ex in examples {
        if ex.selected.contains(&predict(head, table, ex)?) {
            hits += 1;
        }
    }
    Ok(Some(hits as f64 / examples.len() as f64))
}

/// Identity-like starting head: the identity when `d_out == d_in`, otherwise
/// a seeded matrix with orthonormal rows (`d_out < d_in`) or columns.
pub fn init_head(d_in: usize, cfg: &TrainConfig) -> LinearHead {
    let d_out = cfg.d_out.unwrap_or(d_in);
    let weight = if d_out == d_in {
        DMatrix::identity(d_in, d_in)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (tall, short) = (d_out.max(d_in), d_out.min(d_in));
        let m = DMatrix::from_fn(tall, short, |_, _| rng.random_range(-1.0..1.0));
        let qm = m.qr().q();
        if d_out > d_in {
            qm
        } else {
            qm.transpose()
        }
    };
    LinearHead {
        weight,
        bias: cfg.bias.then(|| DVector::zeros(d_out)),
        temperature: cfg.temperature_init,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub head: LinearHead,
    pub trace: Vec<EpochStats>,
}

struct Adam {
    m: HeadGradient,
    v: HeadGradient,
    step: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(head: &LinearHead) -> Self {
        Adam {
            m: HeadGradient::zeros_like(head),
            v: HeadGradient::zeros_like(head),
            step: 0,
        }
    }

    /// Turns a raw gradient into the step direction in place.
    fn direction(&mut self, g: &mut HeadGradient) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        let upd = |m: &mut f64, v: &mut f64, g: &mut f64| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * *g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * *g * *g;
            *g = (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        };
        for ((m, v), g) in self.m.weight.iter_mut().zip(self.v.weight.iter_mut()).zip(g.weight.iter_mut()) {
            upd(m, v, g);
        }
        if let (Some(mb), Some(vb), Some(gb)) = (&mut self.m.bias, &mut self.v.bias, &mut g.bias) {
            for ((m, v), g) in mb.iter_mut().zip(vb.iter_mut()).zip(gb.iter_mut()) {
                upd(m, v, g);
            }
        }
        upd(&mut self.m.temperature, &mut self.v.temperature, &mut g.temperature);
    }
}

fn apply_step(head: &mut LinearHead, step: &HeadGradient, lr: f64) {
    head.weight -= &step.weight * lr;
    if let (Some(b), Some(gb)) = (&mut head.bias, &step.bias) {
        *b -= gb * lr;
    }
    head.temperature = (head.temperature - lr * step.temperature).clamp(MIN_LOGIT_SCALE.ln(), MAX_LOGIT_SCALE.ln());
}

/// Mini-batch training from [`init_head`]. Each epoch visits the examples in
/// a seeded shuffled order; per-example gradients in a batch may be computed
/// in parallel but are always summed in batch order.
pub fn train(examples: &[TurnExample], table: &EmbeddingTable, cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(TrainError::Empty);
    }
    for (index, ex) in examples.iter().enumerate() {
        ex.validate(table)
            .map_err(|reason| TrainError::InvalidExample { index, reason })?;
    }
    let mut head = init_head(table.dim(), cfg);
    let mut adam = (cfg.optimizer == Optimizer::Adam).then(|| Adam::new(&head));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results = par::map(cfg.parallelism, batch, |&i| contrastive_loss(&head, table, &examples[i]));
            let mut grad = HeadGradient::zeros_like(&head);
            for r in results {
                let (loss, g) = r?;
                total += loss;
                grad.add_assign(&g);
            }
            grad.scale(1.0 / batch.len() as f64);
            if !total.is_finite() || !grad.is_finite() {
                return Err(TrainError::Diverged { epoch, trace });
            }
            if let Some(adam) = &mut adam {
                adam.direction(&mut grad);
            }
            apply_step(&mut head, &grad, cfg.learning_rate);
        }
        let mean_loss = total / examples.len() as f64;
        log::debug!("epoch {epoch}: mean loss {mean_loss:.6}");
        trace.push(EpochStats { epoch, mean_loss });
    }
    Ok(TrainReport { head, trace })
}

pub fn write_loss_csv<W: Write>(trace: &[EpochStats], out: W) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    for s in trace {
        w.serialize(s)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Whose demographics a split is keyed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Giver,
    #[default]
    Guesser,
}

/// Groups records by a demographic attribute. Values are compared after
/// lowercasing; values missing from `grouping`, and records without the
/// attribute, land in [`UNASSIGNED`].
pub fn split_by_attribute(
    records: &[GameRecord],
    side: Side,
    attribute: &str,
    grouping: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, Vec<GameRecord>>, TrainError> {
    let attribute = normalize_word(attribute);
    let demo = |r: &GameRecord| match side {
        Side::Giver => r.giver_demographics.get(&attribute).cloned(),
        Side::Guesser => r.guesser_demographics.get(&attribute).cloned(),
    };
    let known = crate::dataset::keys::ALL.contains(&attribute.as_str()) || records.iter().any(|r| demo(r).is_some());
    if !known {
        return Err(TrainError::UnknownAttribute(attribute));
    }
    let grouping: BTreeMap<String, &String> = grouping.iter().map(|(k, v)| (normalize_word(k), v)).collect();
    let mut groups: BTreeMap<String, Vec<GameRecord>> = BTreeMap::new();
    for r in records {
        let group = demo(r)
            .and_then(|v| grouping.get(&normalize_word(&v)).map(|g| g.to_string()))
            .unwrap_or_else(|| UNASSIGNED.to_string());
        groups.entry(group).or_default().push(r.clone());
    }
    Ok(groups)
}
