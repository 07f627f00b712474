//! A live game between an RSA+C3 giver and a human guesser. Shared by the
//! HTTP service and the terminal loop.

use std::time::{SystemTime, UNIX_EPOCH};

use codenames_core::agents::{c3_clue, AgentError, ClueChoice, CulturePosterior, RsaConfig};
use codenames_core::game::{generate_board, GameRules, GameState, GameStatus, GuessRecord, Role, Transcript, WordPool};
use codenames_core::harness::{HarnessError, ModelStore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{0}")]
    BadRequest(String),
    #[error("game is over ({0:?})")]
    Finished(GameStatus),
    #[error("illegal guess: {0}")]
    IllegalGuess(String),
    #[error("{0}")]
    Internal(String),
}

impl From<HarnessError> for SessionError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::MissingCulture(_) | HarnessError::Config(_) | HarnessError::Agent(AgentError::Config(_)) => {
                SessionError::BadRequest(e.to_string())
            }
            other => SessionError::Internal(other.to_string()),
        }
    }
}

impl From<AgentError> for SessionError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Config(_) => SessionError::BadRequest(e.to_string()),
            other => SessionError::Internal(other.to_string()),
        }
    }
}

fn default_beta() -> f64 {
    0.5
}

/// Body of `POST /sessions`. Empty `cultures` means every loaded culture.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub cultures: Vec<String>,
    #[serde(default)]
    pub rsa: RsaConfig,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellView {
    pub word: String,
    pub revealed: bool,
    /// Present only once the word is revealed.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub role: Option<Role>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CultureWeight {
    pub culture: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub board: Vec<CellView>,
    pub clue: Option<String>,
    pub target_count: usize,
    pub status: GameStatus,
    pub posterior: Vec<CultureWeight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuessResult {
    pub outcome: Role,
    pub status: GameStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub next_clue: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_count: Option<usize>,
    pub posterior: Vec<CultureWeight>,
}

/// A played turn as a guesser may see it: no intended targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnView {
    pub clue: String,
    pub guesses: Vec<GuessRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub seed: u64,
    pub board: Vec<CellView>,
    pub clue: Option<String>,
    pub target_count: usize,
    pub status: GameStatus,
    pub turn: usize,
    pub history: Vec<TurnView>,
    pub posterior: Vec<CultureWeight>,
    pub created_at: u64,
    pub updated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorView {
    pub posterior: Vec<CultureWeight>,
    /// Weights before the first guess and after every guess since.
    pub trace: Vec<Vec<f64>>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    state: GameState,
    posterior: CulturePosterior,
    rsa: RsaConfig,
    clue: Option<ClueChoice>,
    trace: Vec<Vec<f64>>,
    created_at: u64,
    updated_at: u64,
}

impl Session {
    /// Deals the board for `req.seed` and gives the first clue.
    pub fn start(id: String, store: &ModelStore, pool: &WordPool, req: &CreateSession) -> Result<Self, SessionError> {
        req.rsa.validate()?;
        let ids = if req.cultures.is_empty() {
            store.culture_ids()
        } else {
            req.cultures.clone()
        };
        let posterior = CulturePosterior::uniform(store.cultures(&ids)?, req.beta)?;
        let board = generate_board(pool, req.seed).map_err(|e| SessionError::BadRequest(e.to_string()))?;
        let t = now();
        let mut session = Session {
            id,
            state: GameState::new(board, GameRules::default()),
            trace: vec![posterior.weights().to_vec()],
            posterior,
            rsa: req.rsa.clone(),
            clue: None,
            created_at: t,
            updated_at: t,
        };
        session.next_clue()?;
        Ok(session)
    }

    fn next_clue(&mut self) -> Result<(), SessionError> {
        self.clue = None;
        match c3_clue(&self.posterior, &self.state, &self.rsa) {
            Ok(choice) => {
                self.state
                    .give_clue(&choice.clue, vec![choice.target.clone()])
                    .map_err(|e| SessionError::Internal(e.to_string()))?;
                self.clue = Some(choice);
            }
            Err(AgentError::EmptyClueVocabulary | AgentError::NoGoals) => self.state.forfeit(),
            Err(e) => return Err(e.into()),
        }
        Ok(())
    }

    /// Reveals `word`, updates the culture posterior with it, then gives the
    /// next clue if the game goes on.
    pub fn guess(&mut self, word: &str) -> Result<GuessResult, SessionError> {
        let word = codenames_core::lexicon::normalize_word(word);
        if self.state.is_over() {
            return Err(SessionError::Finished(self.state.status()));
        }
        if !self.state.board().contains(&word) {
            return Err(SessionError::IllegalGuess(format!("`{word}` is not on the board")));
        }
        if self.state.is_revealed(&word) {
            return Err(SessionError::IllegalGuess(format!("`{word}` is already revealed")));
        }
        let clue = self
            .clue
            .clone()
            .ok_or_else(|| SessionError::Internal("no active clue".into()))?;
        let unrevealed = self.state.unrevealed();
        let outcome = self
            .state
            .apply_guess(&word)
            .map_err(|e| SessionError::Internal(e.to_string()))?;
        self.posterior.update(&clue.clue, &word, &unrevealed)?;
        self.trace.push(self.posterior.weights().to_vec());
        let mut next_clue = None;
        if !self.state.is_over() && !self.state.awaiting_guess() {
            self.next_clue()?;
            next_clue = self.current_clue().map(str::to_string);
        }
        self.updated_at = now();
        Ok(GuessResult {
            outcome,
            status: self.state.status(),
            target_count: next_clue.as_ref().map(|_| 1),
            next_clue,
            posterior: self.weights(),
        })
    }

    pub fn status(&self) -> GameStatus {
        self.state.status()
    }

    pub fn is_over(&self) -> bool {
        self.state.is_over()
    }

    pub fn posterior(&self) -> &CulturePosterior {
        &self.posterior
    }

    /// The clue the human is currently answering.
    pub fn current_clue(&self) -> Option<&str> {
        self.state.awaiting_guess().then(|| self.clue.as_ref().map(|c| c.clue.as_str())).flatten()
    }

    pub fn unrevealed(&self) -> Vec<String> {
        self.state.unrevealed()
    }

    pub fn weights(&self) -> Vec<CultureWeight> {
        self.posterior
            .cultures()
            .iter()
            .zip(self.posterior.weights())
            .map(|(c, &w)| CultureWeight {
                culture: c.id.clone(),
                weight: w,
            })
            .collect()
    }

    pub fn board(&self) -> Vec<CellView> {
        let board = self.state.board();
        board
            .words
            .iter()
            .map(|w| {
                let revealed = self.state.is_revealed(w);
                CellView {
                    word: w.clone(),
                    revealed,
                    role: revealed.then(|| board.roles[w]),
                }
            })
            .collect()
    }

    pub fn created(&self) -> Created {
        Created {
            id: self.id.clone(),
            board: self.board(),
            clue: self.current_clue().map(str::to_string),
            target_count: usize::from(self.current_clue().is_some()),
            status: self.status(),
            posterior: self.weights(),
        }
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            id: self.id.clone(),
            seed: self.state.board().seed,
            board: self.board(),
            clue: self.current_clue().map(str::to_string),
            target_count: usize::from(self.current_clue().is_some()),
            status: self.status(),
            turn: self.state.turn(),
            history: self
                .state
                .history()
                .iter()
                .map(|t| TurnView {
                    clue: t.clue.clone(),
                    guesses: t.guesses.clone(),
                })
                .collect(),
            posterior: self.weights(),
            created_at: self.created_at,
            updated_at: self.updated_at,
        }
    }

    pub fn posterior_view(&self) -> PosteriorView {
        PosteriorView {
            posterior: self.weights(),
            trace: self.trace.clone(),
        }
    }

    pub fn transcript(&self) -> Transcript {
        self.state.transcript()
    }
}
