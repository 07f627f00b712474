//! Seeded board suites, batch giver-vs-guesser games and parameter sweeps.
//!
//! Boards come from seeds `base_seed..base_seed + board_count` and are the
//! same for every run of every experiment with those two values. Run `r`
//! seeds agent randomness with `agent_seed + r` on the ChaCha stream named
//! by the board seed, so parallel and sequential execution agree.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    AgentError, Culture, CulturePosterior, EmbeddingGuesser, Giver, GiverKind, GuessRequest, GuesserPolicy, RsaConfig,
    TargetGuesser,
};
use crate::dataset::{GameRecord, RecordTurn};
use crate::game::{generate_board, Board, GameError, GameRules, GameState, GameStatus, Role, Transcript, WordPool};
use crate::lexicon::{EmbeddingTable, LexiconError, LinearHead, Listener};
use crate::metrics::{win_rate, GameOutcome, MetricsError, SimulatedTurn, WinRateReport};
use crate::par::{self, Parallelism};

/// Culture id that stands for the untransformed embedding table.
pub const BASE_CULTURE: &str = "base";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("unknown culture `{0}`")]
    MissingCulture(String),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("guesser_kind is external but no external guesser was supplied")]
    MissingExternalGuesser,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuesserKind {
    /// Argmax (or sample) of a culture's listener.
    #[default]
    Embedding,
    /// Always guesses the giver's target.
    Scripted,
    /// Supplied by the caller, e.g. an HTTP adapter.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub giver_kind: GiverKind,
    /// Cultures the giver reasons about. Literal and RSA givers use the first.
    pub giver_cultures: Vec<String>,
    pub guesser_kind: GuesserKind,
    pub guesser_culture: String,
    /// Sample embedding guesses instead of taking the argmax.
    pub guesser_sample: bool,
    pub board_count: usize,
    pub base_seed: u64,
    pub runs: usize,
    pub agent_seed: u64,
    pub rsa: RsaConfig,
    pub beta: f64,
    pub renormalize: bool,
    pub rules: GameRules,
    pub parallelism: Parallelism,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            giver_kind: GiverKind::Rsa,
            giver_cultures: vec![BASE_CULTURE.into()],
            guesser_kind: GuesserKind::Embedding,
            guesser_culture: BASE_CULTURE.into(),
            guesser_sample: false,
            board_count: 100,
            base_seed: 0,
            runs: 3,
            agent_seed: 0,
            rsa: RsaConfig::default(),
            beta: 0.5,
            renormalize: false,
            rules: GameRules::default(),
            parallelism: Parallelism::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if self.board_count == 0 {
            return bad("board_count must be at least 1");
        }
        if self.runs == 0 {
            return bad("runs must be at least 1");
        }
        if self.giver_cultures.is_empty() {
            return bad("at least one giver culture is required");
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta must lie in [0, 1]");
        }
        if self.rules.max_turns == 0 || self.rules.guesses_per_turn == 0 {
            return bad("max_turns and guesses_per_turn must be at least 1");
        }
        self.rsa.validate()?;
        Ok(())
    }
}

/// The embedding table plus the named listener heads experiments can use.
#[derive(Debug, Clone)]
pub struct ModelStore {
    table: Arc<EmbeddingTable>,
    heads: BTreeMap<String, Arc<LinearHead>>,
}

impl ModelStore {
    pub fn new(table: Arc<EmbeddingTable>) -> Self {
        ModelStore {
            table,
            heads: BTreeMap::new(),
        }
    }

    /// Loads every `<id>.json` head in `dir`.
    pub fn from_dir(table: Arc<EmbeddingTable>, dir: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let mut store = Self::new(table);
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            store.insert(id, LinearHead::load(&p)?)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, id: impl Into<String>, head: LinearHead) -> Result<(), HarnessError> {
        let id = id.into();
        if id == BASE_CULTURE {
            return Err(HarnessError::Config(format!("`{BASE_CULTURE}` is reserved")));
        }
        head.validate()?;
        if head.d_in() != self.table.dim() {
            return Err(LexiconError::Shape(format!(
                "head `{id}` expects d_in={}, table has d={}",
                head.d_in(),
                self.table.dim()
            ))
            .into());
        }
        self.heads.insert(id, Arc::new(head));
        Ok(())
    }

    pub fn with_head(mut self, id: impl Into<String>, head: LinearHead) -> Result<Self, HarnessError> {
        self.insert(id, head)?;
        Ok(self)
    }

    pub fn table(&self) -> &Arc<EmbeddingTable> {
        &self.table
    }

    /// Known culture ids, `base` first.
    pub fn culture_ids(&self) -> Vec<String> {
        std::iter::once(BASE_CULTURE.to_string())
            .chain(self.heads.keys().cloned())
            .collect()
    }

    pub fn head(&self, id: &str) -> Option<&Arc<LinearHead>> {
        self.heads.get(id)
    }

    pub fn listener(&self, id: &str) -> Result<Listener, HarnessError> {
        let head = match id {
            BASE_CULTURE => None,
            _ => Some(
                self.heads
                    .get(id)
                    .cloned()
                    .ok_or_else(|| HarnessError::MissingCulture(id.to_string()))?,
            ),
        };
        Ok(Listener::new(self.table.clone(), head)?)
    }

    pub fn cultures(&self, ids: &[String]) -> Result<Vec<Culture>, HarnessError> {
        ids.iter()
            .map(|id| {
                Ok(Culture {
                    id: id.clone(),
                    listener: self.listener(id)?,
                })
            })
            .collect()
    }
}

/// Boards for seeds `base_seed..base_seed + board_count`.
pub fn board_suite(cfg: &ExperimentConfig, pool: &WordPool) -> Result<Vec<Board>, HarnessError> {
    (0..cfg.board_count as u64)
        .map(|i| Ok(generate_board(pool, cfg.base_seed + i)?))
        .collect()
}

/// One finished (or aborted) game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameResult {
    pub run: usize,
    pub outcome: GameOutcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Culture weights before the first clue and after every guess.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub posterior_trace: Vec<Vec<f64>>,
    #[serde(flatten)]
    pub transcript: Transcript,
}

/// Plays one game: the giver emits a clue and a target, the guesser answers,
/// and an RSA+C3 giver updates its posterior on every guess before the next
/// clue. Agent failures end the game as [`GameOutcome::Errored`].
pub fn run_game(
    giver: &mut Giver,
    guesser: &dyn GuesserPolicy,
    board: Board,
    rsa: &RsaConfig,
    rules: GameRules,
    rng: &mut ChaCha8Rng,
) -> GameResult {
    let mut state = GameState::new(board, rules);
    let mut trace = Vec::new();
    let snapshot = |g: &Giver, trace: &mut Vec<Vec<f64>>| {
        if let Some(p) = g.posterior() {
            trace.push(p.weights().to_vec());
        }
    };
    snapshot(giver, &mut trace);
    let error = play(giver, guesser, &mut state, rsa, rng, |g| snapshot(g, &mut trace)).err();
    let outcome = match (&error, state.status()) {
        (Some(_), _) => GameOutcome::Errored,
        (None, GameStatus::Won) => GameOutcome::Won,
        (None, _) => GameOutcome::Lost,
    };
    GameResult {
        run: 0,
        outcome,
        error: error.map(|e| e.to_string()),
        posterior_trace: trace,
        transcript: state.transcript(),
    }
}

fn play(
    giver: &mut Giver,
    guesser: &dyn GuesserPolicy,
    state: &mut GameState,
    rsa: &RsaConfig,
    rng: &mut ChaCha8Rng,
    mut after_guess: impl FnMut(&Giver),
) -> Result<(), HarnessError> {
    while !state.is_over() {
        let choice = giver.give_clue(state, rsa)?;
        let targets = vec![choice.target.clone()];
        state.give_clue(&choice.clue, targets.clone())?;
        while state.awaiting_guess() {
            let unrevealed = state.unrevealed();
            let request = GuessRequest {
                clue: &choice.clue,
                unrevealed: &unrevealed,
                targets: &targets,
            };
            let guess = guesser.guess(&request, rng)?;
            state.apply_guess(&guess.word)?;
            giver.observe(&choice.clue, &guess.word, &unrevealed)?;
            after_guess(giver);
        }
    }
    Ok(())
}

/// A fresh giver as configured, with a uniform posterior for RSA+C3.
pub fn build_giver(cfg: &ExperimentConfig, store: &ModelStore) -> Result<Giver, HarnessError> {
    let first = cfg
        .giver_cultures
        .first()
        .ok_or_else(|| HarnessError::Config("at least one giver culture is required".into()))?;
    Ok(match cfg.giver_kind {
        GiverKind::Literal => Giver::Literal(store.listener(first)?),
        GiverKind::Rsa => Giver::Rsa(store.listener(first)?),
        GiverKind::RsaC3 => Giver::RsaC3(
            CulturePosterior::uniform(store.cultures(&cfg.giver_cultures)?, cfg.beta)?.renormalized(cfg.renormalize),
        ),
    })
}

pub fn build_guesser(
    cfg: &ExperimentConfig,
    store: &ModelStore,
    external: Option<Arc<dyn GuesserPolicy>>,
) -> Result<Arc<dyn GuesserPolicy>, HarnessError> {
    Ok(match cfg.guesser_kind {
        GuesserKind::Embedding => Arc::new(EmbeddingGuesser {
            listener: store.listener(&cfg.guesser_culture)?,
            sample: cfg.guesser_sample,
        }),
        GuesserKind::Scripted => Arc::new(TargetGuesser),
        GuesserKind::External => external.ok_or(HarnessError::MissingExternalGuesser)?,
    })
}

/// Agent randomness for `run` on the board with `board_seed`.
pub fn agent_rng(agent_seed: u64, run: usize, board_seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(agent_seed.wrapping_add(run as u64));
    rng.set_stream(board_seed);
    rng
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub report: WinRateReport,
    /// Ordered by run, then board seed.
    #[serde(skip)]
    pub games: Vec<GameResult>,
}

impl ExperimentOutcome {
    pub fn win_rate(&self) -> f64 {
        self.report.rate
    }

    /// One game per line in the transcript format, with run and outcome.
    pub fn write_transcripts<W: Write>(&self, mut out: W) -> Result<(), HarnessError> {
        for g in &self.games {
            serde_json::to_writer(&mut out, g)?;
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Plays `runs x board_count` games on the fixed suite.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    store: &ModelStore,
    pool: &WordPool,
    external: Option<Arc<dyn GuesserPolicy>>,
) -> Result<ExperimentOutcome, HarnessError> {
    let boards = board_suite(cfg, pool)?;
    run_on_boards(cfg, store, &boards, external)
}

/// As [`run_experiment`] on an explicit board list.
pub fn run_on_boards(
    cfg: &ExperimentConfig,
    store: &ModelStore,
    boards: &[Board],
    external: Option<Arc<dyn GuesserPolicy>>,
) -> Result<ExperimentOutcome, HarnessError> {
    cfg.validate()?;
    if boards.is_empty() {
        return Err(HarnessError::Config("no boards".into()));
    }
    let template = build_giver(cfg, store)?;
    let guesser = build_guesser(cfg, store, external)?;
    let jobs: Vec<(usize, &Board)> = (0..cfg.runs).flat_map(|r| boards.iter().map(move |b| (r, b))).collect();
    let games = par::map(cfg.parallelism, &jobs, |&(run, board)| {
        let mut giver = template.clone();
        let mut rng = agent_rng(cfg.agent_seed, run, board.seed);
        let mut result = run_game(&mut giver, guesser.as_ref(), board.clone(), &cfg.rsa, cfg.rules, &mut rng);
        result.run = run;
        result
    });
    let errored = games.iter().filter(|g| g.outcome == GameOutcome::Errored).count();
    if errored > 0 {
        log::warn!("{errored} of {} games errored", games.len());
    }
    let per_run: Vec<Vec<GameOutcome>> = games
        .chunks(boards.len())
        .map(|c| c.iter().map(|g| g.outcome).collect())
        .collect();
    Ok(ExperimentOutcome {
        config: cfg.clone(),
        report: win_rate(&per_run)?,
        games,
    })
}

/// Replays human games turn by turn against simulated agents, for the
/// alignment metrics.
///
/// At every recorded board the configured giver proposes its own clue. Its
/// target list starts with the chosen target and is padded with the goal
/// words its listener ranks highest for that clue, up to the human target
/// count. The guesser hears the human clue and names as many words as the
/// human guessed, in descending listener probability. An RSA+C3 giver then
/// observes the human guesses, so its posterior tracks the human guesser.
/// A clue or guess the agents cannot embed leaves that slot empty.
pub fn simulate_turns(
    cfg: &ExperimentConfig,
    store: &ModelStore,
    records: &[GameRecord],
) -> Result<Vec<Vec<SimulatedTurn>>, HarnessError> {
    cfg.validate()?;
    if cfg.guesser_kind != GuesserKind::Embedding {
        return Err(HarnessError::Config("replay needs an embedding guesser".into()));
    }
    let template = build_giver(cfg, store)?;
    let guesser = store.listener(&cfg.guesser_culture)?;
    let games = par::map(cfg.parallelism, records, |record| {
        let mut giver = template.clone();
        record
            .turns
            .iter()
            .map(|turn| simulate_turn(&mut giver, &guesser, turn, cfg))
            .collect::<Result<Vec<_>, HarnessError>>()
    });
    games.into_iter().collect()
}

fn simulate_turn(
    giver: &mut Giver,
    guesser: &Listener,
    turn: &RecordTurn,
    cfg: &ExperimentConfig,
) -> Result<SimulatedTurn, HarnessError> {
    let board = Board::from_roles(0, turn.board.iter().map(|c| (c.word.clone(), c.role)).collect())?;
    let revealed = turn.board.iter().filter(|c| c.revealed).map(|c| c.word.clone());
    let state = GameState::resume(board, revealed, cfg.rules)?;
    let unrevealed = state.unrevealed();

    let (clue, targets) = match giver.give_clue(&state, &cfg.rsa) {
        Ok(choice) => {
            let want = turn.targets.len().max(1);
            let goals = state.unrevealed_with_role(Role::Goal);
            let mut targets = vec![choice.target.clone()];
            if want > 1 {
                let dist = giver.listener().distribution(&choice.clue, &goals)?;
                targets.extend(
                    ranked(dist.support(), dist.probs())
                        .filter(|w| **w != choice.target)
                        .take(want - 1)
                        .cloned(),
                );
            }
            (Some(choice.clue), targets)
        }
        Err(AgentError::EmptyClueVocabulary | AgentError::NoGoals) => (None, Vec::new()),
        Err(e) => return Err(e.into()),
    };

    let guesses = match guesser.distribution(&turn.clue, &unrevealed) {
        Ok(dist) => ranked(dist.support(), dist.probs())
            .take(turn.guesses.len())
            .cloned()
            .collect(),
        Err(LexiconError::OutOfVocabulary(_)) => Vec::new(),
        Err(e) => return Err(e.into()),
    };

    let mut remaining = unrevealed;
    for g in &turn.guesses {
        match giver.observe(&turn.clue, &g.word, &remaining) {
            Ok(()) | Err(AgentError::Lexicon(LexiconError::OutOfVocabulary(_))) => {}
            Err(e) => return Err(e.into()),
        }
        remaining.retain(|w| w != &g.word);
    }
    Ok(SimulatedTurn { clue, targets, guesses })
}

/// Words by descending probability, board order on ties.
fn ranked<'a>(words: &'a [String], probs: &[f64]) -> impl Iterator<Item = &'a String> {
    let mut order: Vec<usize> = (0..words.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    order.into_iter().map(move |i| &words[i])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub alpha: f64,
    pub delta: f64,
    pub wins: usize,
    pub games: usize,
    pub errored: usize,
    pub runs: usize,
    pub rate: f64,
    pub stderr: f64,
}

/// Every `(alpha, delta)` pair on the same board suite, alpha-major.
pub fn sweep(
    alphas: &[f64],
    deltas: &[f64],
    base: &ExperimentConfig,
    store: &ModelStore,
    pool: &WordPool,
    external: Option<Arc<dyn GuesserPolicy>>,
) -> Result<Vec<SweepCell>, HarnessError> {
    if alphas.is_empty() || deltas.is_empty() {
        return Err(HarnessError::Config("sweep grid is empty".into()));
    }
    let boards = board_suite(base, pool)?;
    let mut cells = Vec::with_capacity(alphas.len() * deltas.len());
    for &alpha in alphas {
        for &delta in deltas {
            let mut cfg = base.clone();
            cfg.rsa.alpha = alpha;
            cfg.rsa.delta = delta;
            let r = run_on_boards(&cfg, store, &boards, external.clone())?.report;
            cells.push(SweepCell {
                alpha,
                delta,
                wins: r.wins,
                games: r.games,
                errored: r.errored,
                runs: r.runs,
                rate: r.rate,
                stderr: r.stderr,
            });
        }
    }
    Ok(cells)
}

pub fn write_sweep_csv<W: Write>(cells: &[SweepCell], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for c in cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}
