//! Fixtures and independent reference computations shared by the
//! integration tests. Nothing here calls into the library's scoring code.

#![allow(dead_code)]

use std::sync::Arc;

use codenames_core::game::{Board, Role, WordPool};
use codenames_core::harness::ModelStore;
use codenames_core::lexicon::{EmbeddingTable, LinearHead};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const POOL_SIZE: usize = 60;
pub const LOGIT_SCALE: f64 = 10.0;
const CLUE_SUFFIX: &str = "abcdefghi";

/// `naa`, `nab`, ... : same length, so no pool word contains another.
pub fn pool_words() -> Vec<String> {
    (0..POOL_SIZE)
        .map(|i| format!("n{}{}", char::from(b'a' + (i / 26) as u8), char::from(b'a' + (i % 26) as u8)))
        .collect()
}

pub fn pool() -> WordPool {
    WordPool::unchecked(&pool_words()).unwrap()
}

pub fn basis(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

pub fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn clue_name(prefix: &str, k: usize) -> String {
    format!("{prefix}{}", &CLUE_SUFFIX[k..k + 1])
}

pub fn tempered_identity(dim: usize) -> LinearHead {
    LinearHead {
        temperature: LOGIT_SCALE.ln(),
        ..LinearHead::identity(dim)
    }
}

/// Every pool word on its own axis. For the k-th goal word `g`:
/// `trap<k>` leans towards `g` but harder towards an avoid word, and
/// `safe<k>` points at `g` plus a private axis no board word uses.
/// The `tempered` culture is the identity head with logit scale 10.
pub fn trap_fixture(board: &Board) -> ModelStore {
    let words = pool_words();
    let dim = POOL_SIZE + 9;
    let axis = |w: &str| words.iter().position(|x| x == w).unwrap();
    let goals = board.words_with_role(Role::Goal);
    let avoids = board.words_with_role(Role::Avoid);
    let mut entries: Vec<(String, Vec<f64>)> = words.iter().enumerate().map(|(i, w)| (w.clone(), basis(dim, i))).collect();
    for (k, g) in goals.iter().enumerate() {
        let mut trap = vec![0.0; dim];
        trap[axis(g)] = 0.8;
        trap[axis(&avoids[k % 3])] = 1.0;
        entries.push((clue_name("trap", k), normalized(trap)));
        let mut safe = vec![0.0; dim];
        safe[axis(g)] = 0.6;
        safe[POOL_SIZE + k] = 0.8;
        entries.push((clue_name("safe", k), safe));
    }
    let table = Arc::new(EmbeddingTable::from_entries(entries).unwrap());
    ModelStore::new(table).with_head("tempered", tempered_identity(dim)).unwrap()
}

/// Base space: pool words, then `alpha<k>` and `bravo<k>` clue words, each
/// on its own axis. Both heads keep the pool words in place and give every
/// clue word its own private output axis.
///
/// * culture `a`: `alpha<k>` points at goal k, `bravo<k>` at nothing.
/// * culture `b`: `bravo<k>` points at goal k, `alpha<k>` at the k-th
///   neutral word.
pub fn two_culture_fixture(board: &Board) -> ModelStore {
    let words = pool_words();
    let dim = POOL_SIZE + 18;
    let axis = |w: &str| words.iter().position(|x| x == w).unwrap();
    let goals = board.words_with_role(Role::Goal);
    let neutrals = board.words_with_role(Role::Neutral);
    let mut entries: Vec<(String, Vec<f64>)> = words.iter().enumerate().map(|(i, w)| (w.clone(), basis(dim, i))).collect();
    for k in 0..9 {
        entries.push((clue_name("alpha", k), basis(dim, POOL_SIZE + k)));
    }
    for k in 0..9 {
        entries.push((clue_name("bravo", k), basis(dim, POOL_SIZE + 9 + k)));
    }
    let table = Arc::new(EmbeddingTable::from_entries(entries).unwrap());
    let mut a = DMatrix::identity(dim, dim);
    let mut b = DMatrix::identity(dim, dim);
    for k in 0..9 {
        let (alpha, bravo) = (POOL_SIZE + k, POOL_SIZE + 9 + k);
        a[(axis(&goals[k]), alpha)] = 0.6;
        a[(alpha, alpha)] = 0.8;
        b[(axis(&goals[k]), bravo)] = 0.6;
        b[(bravo, bravo)] = 0.8;
        b[(axis(&neutrals[k]), alpha)] = 0.6;
        b[(alpha, alpha)] = 0.8;
    }
    let head = |weight| LinearHead {
        weight,
        bias: None,
        temperature: LOGIT_SCALE.ln(),
    };
    ModelStore::new(table)
        .with_head("a", head(a))
        .unwrap()
        .with_head("b", head(b))
        .unwrap()
}

/// Reference listener: `softmax(scale * cos(W x_c, W x_w))` computed from
/// raw table rows with plain loops.
pub fn reference_distribution(
    table: &EmbeddingTable,
    head: Option<&LinearHead>,
    scale: f64,
    clue: &str,
    candidates: &[String],
) -> Vec<f64> {
    let logits = reference_cosines(table, head, clue, candidates);
    softmax(&logits.iter().map(|c| scale * c).collect::<Vec<_>>())
}

/// Raw `exp(t) * cos` logits of `head` with plain loops.
pub fn reference_logits(table: &EmbeddingTable, head: &LinearHead, clue: &str, candidates: &[String]) -> Vec<f64> {
    let scale = head.temperature.exp();
    reference_cosines(table, Some(head), clue, candidates).into_iter().map(|c| scale * c).collect()
}

fn reference_cosines(table: &EmbeddingTable, head: Option<&LinearHead>, clue: &str, candidates: &[String]) -> Vec<f64> {
    let project = |w: &str| -> Vec<f64> {
        let x = table.vector(w).unwrap();
        match head {
            None => x.to_vec(),
            Some(h) => (0..h.d_out())
                .map(|r| (0..h.d_in()).map(|c| h.weight[(r, c)] * x[c]).sum::<f64>() + h.bias.as_ref().map_or(0.0, |b| b[r]))
                .collect(),
        }
    };
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let q = project(clue);
    candidates.iter().map(|w| cos(&q, &project(w))).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Synthetic human turns: the "human" picks the candidate closest to the
/// clue under a hidden random teacher head.
pub struct TeacherData {
    pub table: EmbeddingTable,
    pub teacher: DMatrix<f64>,
}

impl TeacherData {
    pub fn new(vocab: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = EmbeddingTable::from_entries((0..vocab).map(|i| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            (format!("v{i}"), v)
        }))
        .unwrap();
        let teacher = DMatrix::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
        TeacherData { table, teacher }
    }

    pub fn examples(&self, count: usize, candidates: usize, seed: u64) -> Vec<codenames_core::training::TurnExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = self.table.len();
        let proj = |w: &str| {
            let x = nalgebra::DVector::from_column_slice(self.table.vector(w).unwrap());
            let y = &self.teacher * x;
            let n = y.norm();
            y / n
        };
        (0..count)
            .map(|_| {
                let mut idx = rand::seq::index::sample(&mut rng, vocab, candidates + 1).into_vec();
                let clue = format!("v{}", idx.pop().unwrap());
                let board_words: Vec<String> = idx.iter().map(|i| format!("v{i}")).collect();
                let q = proj(&clue);
                let best = board_words
                    .iter()
                    .enumerate()
                    .map(|(i, w)| (i, proj(w).dot(&q)))
                    .fold((0, f64::NEG_INFINITY), |a, c| if c.1 > a.1 { c } else { a })
                    .0;
                codenames_core::training::TurnExample {
                    clue,
                    board_words,
                    selected: vec![best],
                }
            })
            .collect()
    }
}
