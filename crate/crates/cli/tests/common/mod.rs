#![allow(dead_code)]

use std::fs::File;
use std::path::PathBuf;
use std::sync::Arc;

use codenames_core::game::WordPool;
use codenames_core::harness::ModelStore;
use codenames_core::lexicon::{EmbeddingTable, LinearHead};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

pub const DIM: usize = 10;

fn names(prefix: char, n: usize) -> Vec<String> {
    (0..n)
        .map(|i| format!("{prefix}{}{}", char::from(b'a' + (i / 26) as u8), char::from(b'a' + (i % 26) as u8)))
        .collect()
}

/// Embeddings, a word pool and two culture heads `a` and `b`, on disk.
pub struct World {
    pub dir: TempDir,
    pub embeddings: PathBuf,
    pub wordpool: PathBuf,
    pub heads_dir: PathBuf,
    pub pool_words: Vec<String>,
    pub store: ModelStore,
}

impl World {
    pub fn pool(&self) -> WordPool {
        WordPool::new(&self.pool_words, self.store.table()).unwrap()
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

pub fn world() -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let pool_words = names('p', 40);
    let words: Vec<String> = pool_words.iter().cloned().chain(names('q', 150)).collect();
    let table = EmbeddingTable::from_entries(
        words
            .iter()
            .map(|w| (w.clone(), (0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>())),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let embeddings = dir.path().join("vectors.txt");
    table.write(File::create(&embeddings).unwrap()).unwrap();
    let wordpool = dir.path().join("pool.txt");
    std::fs::write(&wordpool, format!("# board words\n{}\n", pool_words.join("\n"))).unwrap();
    let heads_dir = dir.path().join("heads");
    std::fs::create_dir(&heads_dir).unwrap();
    let mut store = ModelStore::new(Arc::new(table));
    for id in ["a", "b"] {
        let head = LinearHead {
            weight: DMatrix::identity(DIM, DIM) + DMatrix::from_fn(DIM, DIM, |_, _| 0.8 * rng.random_range(-1.0..1.0)),
            bias: None,
            temperature: 10f64.ln(),
        };
        head.save(heads_dir.join(format!("{id}.json"))).unwrap();
        store.insert(id, head).unwrap();
    }
    World {
        dir,
        embeddings,
        wordpool,
        heads_dir,
        pool_words,
        store,
    }
}
