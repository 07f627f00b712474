//! Codenames Duet boards and the single-giver, single-guesser turn loop.
//!
//! # Board sampling
//!
//! Boards are drawn with ChaCha8 (`rand_chacha`) seeded through
//! `SeedableRng::seed_from_u64(seed)`. Uniform indices below `n` come from
//! rejection sampling on raw `next_u64` output: draws in the top
//! `2^64 mod n` values are discarded and the rest are reduced `mod n`.
//!
//! 1. Partial Fisher-Yates over the pool indices: for `i` in `0..25`, swap
//!    position `i` with `i + uniform(len - i)`. The first 25 entries, in that
//!    order, are the board words.
//! 2. Fisher-Yates over the board positions `0..25`: for `i` from 24 down to
//!    1, swap `i` with `uniform(i + 1)`. The first 9 shuffled positions are
//!    goal words, the next 3 avoid words, the remaining 13 neutral.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{normalize_word, EmbeddingTable};

pub const BOARD_SIZE: usize = 25;
pub const GOAL_COUNT: usize = 9;
pub const AVOID_COUNT: usize = 3;
pub const NEUTRAL_COUNT: usize = 13;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GameError {
    #[error("word pool has {0} unique words, need at least {BOARD_SIZE}")]
    PoolTooSmall(usize),
    #[error("pool word `{0}` is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("`{0}` is not on the board")]
    OffBoard(String),
    #[error("`{0}` has already been revealed")]
    AlreadyRevealed(String),
    #[error("game is over ({0:?})")]
    Finished(GameStatus),
    #[error("no clue has been given for this turn")]
    NoActiveClue,
    #[error("a clue is already active for this turn")]
    ClueActive,
    #[error("invalid board: {0}")]
    InvalidBoard(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Goal,
    Avoid,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GameStatus {
    Ongoing,
    Won,
    Lost,
}

/// Deduplicated candidate words for board generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordPool {
    words: Vec<String>,
}

impl WordPool {
    /// Normalizes and deduplicates `words`, rejecting any word missing from `table`.
    pub fn new<S: AsRef<str>>(words: &[S], table: &EmbeddingTable) -> Result<Self, GameError> {
        let pool = Self::unchecked(words)?;
        if let Some(w) = pool.words.iter().find(|w| !table.contains(w)) {
            return Err(GameError::OutOfVocabulary(w.clone()));
        }
        Ok(pool)
    }

    /// Like [`WordPool::new`] without the vocabulary check.
    pub fn unchecked<S: AsRef<str>>(words: &[S]) -> Result<Self, GameError> {
        let mut seen = HashSet::new();
        let words: Vec<String> = words
            .iter()
            .map(|w| normalize_word(w.as_ref()))
            .filter(|w| !w.is_empty() && seen.insert(w.clone()))
            .collect();
        if words.len() < BOARD_SIZE {
            return Err(GameError::PoolTooSmall(words.len()));
        }
        Ok(WordPool { words })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Board {
    pub seed: u64,
    pub words: Vec<String>,
    pub roles: BTreeMap<String, Role>,
}

impl Board {
    /// Builds a board from explicit roles, checking the 9/3/13 partition.
    pub fn from_roles(seed: u64, assignments: Vec<(String, Role)>) -> Result<Self, GameError> {
        let words: Vec<String> = assignments.iter().map(|(w, _)| w.clone()).collect();
        let roles: BTreeMap<String, Role> = assignments.into_iter().collect();
        let board = Board { seed, words, roles };
        board.validate()?;
        Ok(board)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        if self.words.len() != BOARD_SIZE || self.roles.len() != BOARD_SIZE {
            return Err(GameError::InvalidBoard(format!(
                "expected {BOARD_SIZE} unique words, found {}",
                self.roles.len()
            )));
        }
        if let Some(w) = self.words.iter().find(|w| !self.roles.contains_key(*w)) {
            return Err(GameError::InvalidBoard(format!("`{w}` has no role")));
        }
        let count = |r| self.roles.values().filter(|&&x| x == r).count();
        let counts = (count(Role::Goal), count(Role::Avoid), count(Role::Neutral));
        if counts != (GOAL_COUNT, AVOID_COUNT, NEUTRAL_COUNT) {
            return Err(GameError::InvalidBoard(format!("role counts {counts:?}")));
        }
        Ok(())
    }

    pub fn role_of(&self, word: &str) -> Option<Role> {
        self.roles.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.roles.contains_key(word)
    }

    /// Board words with `role`, in board order.
    pub fn words_with_role(&self, role: Role) -> Vec<String> {
        self.words
            .iter()
            .filter(|w| self.roles[*w] == role)
            .cloned()
            .collect()
    }
}

fn uniform_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let n = n as u64;
    let rejected = (u64::MAX % n).wrapping_add(1) % n;
    let threshold = 0u64.wrapping_sub(rejected);
    loop {
        let v = rng.next_u64();
        if rejected == 0 || v < threshold {
            return (v % n) as usize;
        }
    }
}

/// Deterministically samples a board from `pool`; see the module docs for the procedure.
pub fn generate_board(pool: &WordPool, seed: u64) -> Result<Board, GameError> {
    let words = pool.words();
    if words.len() < BOARD_SIZE {
        return Err(GameError::PoolTooSmall(words.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..words.len()).collect();
    for i in 0..BOARD_SIZE {
        let j = i + uniform_index(&mut rng, idx.len() - i);
        idx.swap(i, j);
    }
    let chosen: Vec<String> = idx[..BOARD_SIZE].iter().map(|&i| words[i].clone()).collect();

    let mut order: Vec<usize> = (0..BOARD_SIZE).collect();
    for i in (1..BOARD_SIZE).rev() {
        let j = uniform_index(&mut rng, i + 1);
        order.swap(i, j);
    }
    let mut roles = BTreeMap::new();
    for (rank, &pos) in order.iter().enumerate() {
        let role = if rank < GOAL_COUNT {
            Role::Goal
        } else if rank < GOAL_COUNT + AVOID_COUNT {
            Role::Avoid
        } else {
            Role::Neutral
        };
        roles.insert(chosen[pos].clone(), role);
    }
    Ok(Board {
        seed,
        words: chosen,
        roles,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuessRecord {
    pub word: String,
    pub outcome: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnLog {
    pub clue: String,
    pub targets: Vec<String>,
    pub guesses: Vec<GuessRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameRules {
    /// Turns allowed before the game is lost by exhaustion.
    pub max_turns: usize,
    /// Guesses allowed per clue. A neutral guess always ends the turn.
    pub guesses_per_turn: usize,
}

impl Default for GameRules {
    fn default() -> Self {
        GameRules {
            max_turns: 15,
            guesses_per_turn: 1,
        }
    }
}

/// Serialized form of a game: board, turns and final status.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub seed: u64,
    pub words: Vec<String>,
    pub roles: BTreeMap<String, Role>,
    pub turns: Vec<TurnLog>,
    pub status: GameStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GameState {
    board: Board,
    rules: GameRules,
    revealed: BTreeSet<String>,
    turn: usize,
    history: Vec<TurnLog>,
    status: GameStatus,
    turn_open: bool,
}

impl GameState {
    pub fn new(board: Board, rules: GameRules) -> Self {
        GameState {
            board,
            rules,
            revealed: BTreeSet::new(),
            turn: 0,
            history: Vec::new(),
            status: GameStatus::Ongoing,
            turn_open: false,
        }
    }

    /// A state between turns on `board` with `revealed` already face-up, as
    /// in a recorded mid-game snapshot.
    pub fn resume<I>(board: Board, revealed: I, rules: GameRules) -> Result<Self, GameError>
    where
        I: IntoIterator<Item = String>,
    {
        let mut state = GameState::new(board, rules);
        for word in revealed {
            if !state.board.contains(&word) {
                return Err(GameError::OffBoard(word));
            }
            state.revealed.insert(word);
        }
        if state.revealed.iter().any(|w| state.board.roles[w] == Role::Avoid) {
            state.status = GameStatus::Lost;
        } else if state.unrevealed_with_role(Role::Goal).is_empty() {
            state.status = GameStatus::Won;
        }
        Ok(state)
    }

    pub fn board(&self) -> &Board {
        &self.board
    }

    pub fn rules(&self) -> GameRules {
        self.rules
    }

    pub fn revealed(&self) -> &BTreeSet<String> {
        &self.revealed
    }

    pub fn is_revealed(&self, word: &str) -> bool {
        self.revealed.contains(word)
    }

    /// Number of clues given so far.
    pub fn turn(&self) -> usize {
        self.turn
    }

    pub fn history(&self) -> &[TurnLog] {
        &self.history
    }

    pub fn status(&self) -> GameStatus {
        self.status
    }

    pub fn is_over(&self) -> bool {
        self.status != GameStatus::Ongoing
    }

    pub fn awaiting_guess(&self) -> bool {
        self.turn_open
    }

    pub fn current_clue(&self) -> Option<&TurnLog> {
        if self.turn_open {
            self.history.last()
        } else {
            None
        }
    }

    /// Unrevealed board words in board order.
    pub fn unrevealed(&self) -> Vec<String> {
        self.board
            .words
            .iter()
            .filter(|w| !self.revealed.contains(*w))
            .cloned()
            .collect()
    }

    pub fn unrevealed_with_role(&self, role: Role) -> Vec<String> {
        self.board
            .words
            .iter()
            .filter(|w| !self.revealed.contains(*w) && self.board.roles[*w] == role)
            .cloned()
            .collect()
    }

    /// Opens a turn with `clue` aimed at `targets`.
    pub fn give_clue(&mut self, clue: &str, targets: Vec<String>) -> Result<(), GameError> {
        if self.is_over() {
            return Err(GameError::Finished(self.status));
        }
        if self.turn_open {
            return Err(GameError::ClueActive);
        }
        self.turn += 1;
        self.turn_open = true;
        self.history.push(TurnLog {
            clue: clue.to_string(),
            targets,
            guesses: Vec::new(),
        });
        Ok(())
    }

    /// Reveals `word` and applies the win/loss rules.
    pub fn apply_guess(&mut self, word: &str) -> Result<Role, GameError> {
        if self.is_over() {
            return Err(GameError::Finished(self.status));
        }
        let role = self
            .board
            .role_of(word)
            .ok_or_else(|| GameError::OffBoard(word.to_string()))?;
        if self.revealed.contains(word) {
            return Err(GameError::AlreadyRevealed(word.to_string()));
        }
        if !self.turn_open {
            return Err(GameError::NoActiveClue);
        }
        self.revealed.insert(word.to_string());
        let log = self.history.last_mut().expect("open turn has a log");
        log.guesses.push(GuessRecord {
            word: word.to_string(),
            outcome: role,
        });
        let used = log.guesses.len();
        match role {
            Role::Avoid => {
                self.status = GameStatus::Lost;
                self.turn_open = false;
            }
            Role::Goal if self.unrevealed_with_role(Role::Goal).is_empty() => {
                self.status = GameStatus::Won;
                self.turn_open = false;
            }
            Role::Goal if used < self.rules.guesses_per_turn => {}
            Role::Goal | Role::Neutral => self.end_turn(),
        }
        Ok(role)
    }

    /// Ends the open turn early (a guesser passing).
    pub fn pass(&mut self) -> Result<(), GameError> {
        if self.is_over() {
            return Err(GameError::Finished(self.status));
        }
        if !self.turn_open {
            return Err(GameError::NoActiveClue);
        }
        self.end_turn();
        Ok(())
    }

    /// Marks the game lost without a guess (e.g. the giver has no legal clue).
    pub fn forfeit(&mut self) {
        if !self.is_over() {
            self.turn_open = false;
            self.status = GameStatus::Lost;
        }
    }

    fn end_turn(&mut self) {
        self.turn_open = false;
        if self.turn >= self.rules.max_turns {
            self.status = GameStatus::Lost;
        }
    }

    pub fn transcript(&self) -> Transcript {
        Transcript {
            seed: self.board.seed,
            words: self.board.words.clone(),
            roles: self.board.roles.clone(),
            turns: self.history.clone(),
            status: self.status,
        }
    }
}

/// True iff `clue` is a single lowercase alphabetic token in the vocabulary
/// that is not a board word and shares no substring relation with any
/// unrevealed board word.
pub fn legal_clue(clue: &str, state: &GameState, table: &EmbeddingTable) -> bool {
    let banned = state
        .board()
        .words
        .iter()
        .filter(|w| !state.is_revealed(w));
    is_token(clue)
        && table.contains(clue)
        && !state.board().contains(clue)
        && banned.into_iter().all(|w| !overlaps(clue, w))
}

/// Legality against every board word, revealed or not. Anything passing
/// this also passes [`legal_clue`] for any state of the same board.
pub fn legal_for_board(clue: &str, board: &Board) -> bool {
    is_token(clue) && board.words.iter().all(|w| w != clue && !overlaps(clue, w))
}

fn is_token(clue: &str) -> bool {
    !clue.is_empty() && clue.chars().all(|c| c.is_alphabetic() && c.is_lowercase())
}

fn overlaps(a: &str, b: &str) -> bool {
    a.contains(b) || b.contains(a)
}
