//! Clue givers and guessers.
//!
//! The literal giver maximizes raw similarity between clue and target. The
//! RSA giver scores each `(clue, target)` pair with
//!
//! ```text
//! U(c, g) = ln P_L(g | c) - cost(c)
//! cost(c) = max_{a in avoid} P_L(a | c) + delta * max_{n in neutral} P_L(n | c)
//! ```
//!
//! and the pragmatic speaker is `P_S1(c | g) ∝ exp(alpha * U(c, g))`. Since
//! `exp(alpha * x)` is monotone for `alpha > 0`, the chosen clue is the
//! argmax of `U` and does not depend on `alpha`. The RSA+C3 giver keeps one
//! listener per culture, tracks a smoothed likelihood weight for each, and
//! plays RSA against the currently heaviest culture.
//!
//! Ties are broken toward the lexicographically smallest `(clue, target)`
//! pair, the smallest guessed word, or the first-listed culture.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{legal_for_board, Board, GameState, Role};
use crate::lexicon::{Distribution, EmbeddingTable, LexiconError, Listener};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error("no unrevealed goal words")]
    NoGoals,
    #[error("no unrevealed words")]
    NoUnrevealed,
    #[error("no legal clue in the candidate vocabulary")]
    EmptyClueVocabulary,
    #[error("`{0}` is not among the candidate words")]
    NotACandidate(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("guesser failed: {0}")]
    Guesser(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RsaConfig {
    /// Speaker rationality.
    pub alpha: f64,
    /// Weight on the most likely neutral word in the clue cost.
    pub delta: f64,
    /// Number of most frequent legal vocabulary words considered as clues.
    pub clue_vocab_size: usize,
    pub max_targets: usize,
}

impl Default for RsaConfig {
    fn default() -> Self {
        RsaConfig {
            alpha: 0.5,
            delta: 0.1,
            clue_vocab_size: 2000,
            max_targets: 1,
        }
    }
}

impl RsaConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(AgentError::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(AgentError::Config(format!("delta must be >= 0, got {}", self.delta)));
        }
        if self.clue_vocab_size == 0 {
            return Err(AgentError::Config("clue_vocab_size must be >= 1".into()));
        }
        if self.max_targets != 1 {
            return Err(AgentError::Config("only single-target clues are supported".into()));
        }
        Ok(())
    }
}

/// A clue aimed at one target, with the score that selected it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClueChoice {
    pub clue: String,
    pub target: String,
    pub score: f64,
}

impl ClueChoice {
    fn beats(&self, other: &ClueChoice) -> bool {
        self.score > other.score
            || (self.score == other.score
                && (self.clue.as_str(), self.target.as_str()) < (other.clue.as_str(), other.target.as_str()))
    }
}

fn keep_best(best: &mut Option<ClueChoice>, cand: ClueChoice) {
    if best.as_ref().is_none_or(|b| cand.beats(b)) {
        *best = Some(cand);
    }
}

/// The clue search space for a board: the first `limit` vocabulary words (in
/// table order) that are legal against every board word.
pub fn clue_candidates(table: &EmbeddingTable, board: &Board, limit: usize) -> Vec<String> {
    table
        .vocab()
        .iter()
        .filter(|w| legal_for_board(w, board))
        .take(limit)
        .cloned()
        .collect()
}

fn search_space(listener: &Listener, state: &GameState, cfg: &RsaConfig) -> Result<(Vec<String>, Vec<String>), AgentError> {
    let goals = state.unrevealed_with_role(Role::Goal);
    if goals.is_empty() {
        return Err(AgentError::NoGoals);
    }
    let clues = clue_candidates(listener.table(), state.board(), cfg.clue_vocab_size);
    if clues.is_empty() {
        return Err(AgentError::EmptyClueVocabulary);
    }
    Ok((clues, goals))
}

/// Argmax of the listener distribution over `unrevealed`.
pub fn literal_guess(listener: &Listener, clue: &str, unrevealed: &[String]) -> Result<String, AgentError> {
    Ok(listener.distribution(clue, unrevealed)?.argmax().to_string())
}

/// The `(clue, target)` pair of maximal cosine similarity over legal clues
/// and unrevealed goal words.
pub fn literal_clue(listener: &Listener, state: &GameState, cfg: &RsaConfig) -> Result<ClueChoice, AgentError> {
    let (clues, goals) = search_space(listener, state, cfg)?;
    let mut best = None;
    for c in &clues {
        let sims = listener.similarities(c, &goals)?;
        for (g, s) in goals.iter().zip(sims) {
            keep_best(
                &mut best,
                ClueChoice {
                    clue: c.clone(),
                    target: g.clone(),
                    score: s,
                },
            );
        }
    }
    best.ok_or(AgentError::EmptyClueVocabulary)
}

fn cost_of(dist: &Distribution, state: &GameState, delta: f64) -> f64 {
    let max_role = |role| {
        dist.support()
            .iter()
            .zip(dist.probs())
            .filter(|(w, _)| state.board().role_of(w) == Some(role))
            .map(|(_, &p)| p)
            .fold(0.0, f64::max)
    };
    max_role(Role::Avoid) + delta * max_role(Role::Neutral)
}

/// Probability of the likeliest unrevealed avoid word plus `delta` times that
/// of the likeliest unrevealed neutral word. Empty maxima count as 0.
pub fn rsa_cost(listener: &Listener, clue: &str, state: &GameState, delta: f64) -> Result<f64, AgentError> {
    let unrevealed = state.unrevealed();
    if unrevealed.is_empty() {
        return Err(AgentError::NoUnrevealed);
    }
    let dist = listener.distribution(clue, &unrevealed)?;
    Ok(cost_of(&dist, state, delta))
}

/// `ln P_L(g|c) - cost(c)` for every unrevealed goal `g`, in board order.
pub fn utilities(
    listener: &Listener,
    clue: &str,
    state: &GameState,
    delta: f64,
) -> Result<Vec<(String, f64)>, AgentError> {
    let unrevealed = state.unrevealed();
    if unrevealed.is_empty() {
        return Err(AgentError::NoUnrevealed);
    }
    let dist = listener.distribution(clue, &unrevealed)?;
    let cost = cost_of(&dist, state, delta);
    Ok(dist
        .support()
        .iter()
        .zip(dist.probs())
        .filter(|(w, _)| state.board().role_of(w) == Some(Role::Goal))
        .map(|(w, &p)| (w.clone(), p.ln() - cost))
        .collect())
}

/// The pragmatic speaker's choice: argmax over `(clue, target)` of utility.
pub fn rsa_clue(listener: &Listener, state: &GameState, cfg: &RsaConfig) -> Result<ClueChoice, AgentError> {
    let (clues, _) = search_space(listener, state, cfg)?;
    let mut best = None;
    for c in &clues {
        for (target, score) in utilities(listener, c, state, cfg.delta)? {
            keep_best(
                &mut best,
                ClueChoice {
                    clue: c.clone(),
                    target,
                    score,
                },
            );
        }
    }
    best.ok_or(AgentError::EmptyClueVocabulary)
}

/// `P_S1(c | target)` over the clue search space, using `alpha`.
pub fn speaker_distribution(
    listener: &Listener,
    state: &GameState,
    target: &str,
    cfg: &RsaConfig,
) -> Result<Distribution, AgentError> {
    let (clues, goals) = search_space(listener, state, cfg)?;
    if !goals.iter().any(|g| g == target) {
        return Err(AgentError::NotACandidate(target.to_string()));
    }
    let logits = clues
        .iter()
        .map(|c| {
            let u = utilities(listener, c, state, cfg.delta)?
                .into_iter()
                .find(|(g, _)| g == target)
                .map(|(_, u)| u)
                .expect("target is an unrevealed goal");
            Ok(cfg.alpha * u)
        })
        .collect::<Result<Vec<f64>, AgentError>>()?;
    Ok(Distribution::from_logits(clues, &logits)?)
}

/// A candidate interlocutor culture and its literal listener.
#[derive(Debug, Clone)]
pub struct Culture {
    pub id: String,
    pub listener: Listener,
}

/// Smoothed per-culture weights `P(w_i)`.
#[derive(Debug, Clone)]
pub struct CulturePosterior {
    cultures: Vec<Culture>,
    weights: Vec<f64>,
    beta: f64,
    renormalize: bool,
}

impl CulturePosterior {
    /// Uniform initial weights `1/n`.
    pub fn uniform(cultures: Vec<Culture>, beta: f64) -> Result<Self, AgentError> {
        let n = cultures.len();
        Self::with_weights(cultures, vec![1.0 / n.max(1) as f64; n], beta)
    }

    pub fn with_weights(cultures: Vec<Culture>, weights: Vec<f64>, beta: f64) -> Result<Self, AgentError> {
        if cultures.is_empty() {
            return Err(AgentError::Config("at least one culture is required".into()));
        }
        if weights.len() != cultures.len() {
            return Err(AgentError::Config("one weight per culture is required".into()));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(AgentError::Config("weights must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(AgentError::Config(format!("beta must lie in [0, 1], got {beta}")));
        }
        for (i, c) in cultures.iter().enumerate() {
            if cultures[..i].iter().any(|o| o.id == c.id) {
                return Err(AgentError::Config(format!("duplicate culture `{}`", c.id)));
            }
        }
        Ok(CulturePosterior {
            cultures,
            weights,
            beta,
            renormalize: false,
        })
    }

    /// Rescale weights to sum to one after each update. Off by default.
    pub fn renormalized(mut self, on: bool) -> Self {
        self.renormalize = on;
        self
    }

    pub fn cultures(&self) -> &[Culture] {
        &self.cultures
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn weight_of(&self, id: &str) -> Option<f64> {
        self.cultures.iter().position(|c| c.id == id).map(|i| self.weights[i])
    }

    /// Each culture's probability of `guess` given `clue`, over `unrevealed`.
    pub fn likelihoods(&self, clue: &str, guess: &str, unrevealed: &[String]) -> Result<Vec<f64>, AgentError> {
        if !unrevealed.iter().any(|w| w == guess) {
            return Err(AgentError::NotACandidate(guess.to_string()));
        }
        self.cultures
            .iter()
            .map(|c| {
                let d = c.listener.distribution(clue, unrevealed)?;
                Ok(d.prob_of(guess).expect("guess is a candidate"))
            })
            .collect()
    }

    /// `w_i <- beta * w_i + (1 - beta) * P_Li(guess | clue)`. Returns the likelihoods used.
    pub fn update(&mut self, clue: &str, guess: &str, unrevealed: &[String]) -> Result<Vec<f64>, AgentError> {
        let lik = self.likelihoods(clue, guess, unrevealed)?;
        for (w, l) in self.weights.iter_mut().zip(&lik) {
            *w = self.beta * *w + (1.0 - self.beta) * l;
        }
        if self.renormalize {
            let z: f64 = self.weights.iter().sum();
            if z > 0.0 {
                self.weights.iter_mut().for_each(|w| *w /= z);
            }
        }
        Ok(lik)
    }

    /// Index of the heaviest culture; ties go to the first listed.
    pub fn selected_index(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }

    pub fn selected(&self) -> &Culture {
        &self.cultures[self.selected_index()]
    }
}

/// Functional form of [`CulturePosterior::update`].
pub fn c3_update(
    posterior: &CulturePosterior,
    clue: &str,
    observed_guess: &str,
    unrevealed: &[String],
) -> Result<CulturePosterior, AgentError> {
    let mut next = posterior.clone();
    next.update(clue, observed_guess, unrevealed)?;
    Ok(next)
}

pub fn c3_select_culture(posterior: &CulturePosterior) -> &str {
    &posterior.selected().id
}

/// RSA under the listener of the currently selected culture.
pub fn c3_clue(posterior: &CulturePosterior, state: &GameState, cfg: &RsaConfig) -> Result<ClueChoice, AgentError> {
    rsa_clue(&posterior.selected().listener, state, cfg)
}

/// Pragmatic-listener posterior when the usual prior may not hold: the prior
/// is mixed with a uniform backoff, `(1 - p) * prior + p * uniform`, then
/// multiplied by the utterance likelihood and renormalized.
pub fn wonky_listener(
    prior_usual: &Distribution,
    utterance_likelihood: &[f64],
    p_wonky: f64,
) -> Result<Distribution, AgentError> {
    if utterance_likelihood.len() != prior_usual.len() {
        return Err(AgentError::Config(format!(
            "likelihood has {} entries for {} meanings",
            utterance_likelihood.len(),
            prior_usual.len()
        )));
    }
    if !(0.0..=1.0).contains(&p_wonky) {
        return Err(AgentError::Config(format!("p_wonky must lie in [0, 1], got {p_wonky}")));
    }
    if utterance_likelihood.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(AgentError::Config("likelihoods must be finite and non-negative".into()));
    }
    let uniform = 1.0 / prior_usual.len() as f64;
    let joint: Vec<f64> = prior_usual
        .probs()
        .iter()
        .zip(utterance_likelihood)
        .map(|(p, l)| l * ((1.0 - p_wonky) * p + p_wonky * uniform))
        .collect();
    let z: f64 = joint.iter().sum();
    if z <= 0.0 {
        return Err(AgentError::Config("utterance has zero probability under every meaning".into()));
    }
    let probs = joint.into_iter().map(|j| j / z).collect();
    Ok(Distribution::new(prior_usual.support().to_vec(), probs)?)
}

/// What a guesser sees on its turn.
///
/// `targets` carries the giver's intent for scripted policies; policies
/// standing in for a real interlocutor must ignore it.
#[derive(Debug, Clone, Copy)]
pub struct GuessRequest<'a> {
    pub clue: &'a str,
    pub unrevealed: &'a [String],
    pub targets: &'a [String],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuessOutput {
    pub word: String,
    pub distribution: Option<Distribution>,
}

/// Anything that maps a clue and the unrevealed words to one guess.
pub trait GuesserPolicy: Send + Sync {
    fn guess(&self, request: &GuessRequest<'_>, rng: &mut ChaCha8Rng) -> Result<GuessOutput, AgentError>;
}

/// The embedding guesser: argmax of its listener, or a draw from it when
/// `sample` is set.
#[derive(Debug, Clone)]
pub struct EmbeddingGuesser {
    pub listener: Listener,
    pub sample: bool,
}

impl EmbeddingGuesser {
    pub fn new(listener: Listener) -> Self {
        EmbeddingGuesser { listener, sample: false }
    }
}

impl GuesserPolicy for EmbeddingGuesser {
    fn guess(&self, req: &GuessRequest<'_>, rng: &mut ChaCha8Rng) -> Result<GuessOutput, AgentError> {
        let dist = self.listener.distribution(req.clue, req.unrevealed)?;
        let word = if self.sample {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = dist.support().last().expect("nonempty");
            for (w, p) in dist.support().iter().zip(dist.probs()) {
                acc += p;
                if u < acc {
                    pick = w;
                    break;
                }
            }
            pick.clone()
        } else {
            dist.argmax().to_string()
        };
        Ok(GuessOutput {
            word,
            distribution: Some(dist),
        })
    }
}

/// Guesses the giver's first intended target (or the first unrevealed word).
#[derive(Debug, Clone, Copy, Default)]
pub struct TargetGuesser;

impl GuesserPolicy for TargetGuesser {
    fn guess(&self, req: &GuessRequest<'_>, _rng: &mut ChaCha8Rng) -> Result<GuessOutput, AgentError> {
        let word = req
            .targets
            .iter()
            .find(|t| req.unrevealed.contains(t))
            .or_else(|| req.unrevealed.first())
            .ok_or(AgentError::NoUnrevealed)?;
        Ok(GuessOutput {
            word: word.clone(),
            distribution: None,
        })
    }
}

/// Adapts a closure into a [`GuesserPolicy`].
pub struct FnGuesser<F>(pub F);

impl<F> GuesserPolicy for FnGuesser<F>
where
    F: Fn(&GuessRequest<'_>) -> Result<String, AgentError> + Send + Sync,
{
    fn guess(&self, req: &GuessRequest<'_>, _rng: &mut ChaCha8Rng) -> Result<GuessOutput, AgentError> {
        Ok(GuessOutput {
            word: (self.0)(req)?,
            distribution: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GiverKind {
    Literal,
    Rsa,
    RsaC3,
}

/// A clue giver with its per-game state.
#[derive(Debug, Clone)]
pub enum Giver {
    Literal(Listener),
    Rsa(Listener),
    RsaC3(CulturePosterior),
}

impl Giver {
    pub fn kind(&self) -> GiverKind {
        match self {
            Giver::Literal(_) => GiverKind::Literal,
            Giver::Rsa(_) => GiverKind::Rsa,
            Giver::RsaC3(_) => GiverKind::RsaC3,
        }
    }

    pub fn give_clue(&self, state: &GameState, cfg: &RsaConfig) -> Result<ClueChoice, AgentError> {
        match self {
            Giver::Literal(l) => literal_clue(l, state, cfg),
            Giver::Rsa(l) => rsa_clue(l, state, cfg),
            Giver::RsaC3(p) => c3_clue(p, state, cfg),
        }
    }

    /// Feeds an observed guess back to the giver. Only RSA+C3 learns from it.
    pub fn observe(&mut self, clue: &str, guess: &str, unrevealed: &[String]) -> Result<(), AgentError> {
        if let Giver::RsaC3(p) = self {
            p.update(clue, guess, unrevealed)?;
        }
        Ok(())
    }

    /// The listener the next clue will be scored with.
    pub fn listener(&self) -> &Listener {
        match self {
            Giver::Literal(l) | Giver::Rsa(l) => l,
            Giver::RsaC3(p) => &p.selected().listener,
        }
    }

    pub fn posterior(&self) -> Option<&CulturePosterior> {
        match self {
            Giver::RsaC3(p) => Some(p),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{Board, GameRules};
    use crate::lexicon::{EmbeddingTable, LinearHead};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use std::sync::Arc;

    fn w(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    /// One axis per board word plus `extra` axes; returns unit basis rows.
    fn basis(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    fn board_words() -> Vec<String> {
        (0..25).map(|i| format!("b{}", (b'a' + i as u8) as char)).collect()
    }

    fn roles_for(words: &[String]) -> Vec<(String, Role)> {
        words
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let r = if i < 9 {
                    Role::Goal
                } else if i < 12 {
                    Role::Avoid
                } else {
                    Role::Neutral
                };
                (w.clone(), r)
            })
            .collect()
    }

    /// Board words on orthogonal axes; `extra` clues given as explicit vectors.
    fn fixture(extra: Vec<(&str, Vec<(usize, f64)>)>) -> (Listener, GameState) {
        let words = board_words();
        let dim = 30;
        let mut entries: Vec<(String, Vec<f64>)> = Vec::new();
        for (name, parts) in extra {
            let mut v = vec![0.0; dim];
            for (i, x) in parts {
                v[i] = x;
            }
            entries.push((name.to_string(), v));
        }
        for (i, word) in words.iter().enumerate() {
            entries.push((word.clone(), basis(dim, i)));
        }
        let table = Arc::new(EmbeddingTable::from_entries(entries).unwrap());
        let board = Board::from_roles(0, roles_for(&words)).unwrap();
        let listener = Listener::new(table, None).unwrap();
        (listener, GameState::new(board, GameRules::default()))
    }

    #[test]
    fn literal_guess_cases() {
        let t = Arc::new(
            EmbeddingTable::from_entries(vec![
                ("dog", vec![1.0, 0.2, 0.0]),
                ("puppy", vec![0.9, 0.3, 0.1]),
                ("brick", vec![0.0, 0.1, 1.0]),
                ("same", vec![1.0, 0.0, 0.0]),
                ("x", vec![0.0, 1.0, 0.0]),
                ("y", vec![0.0, 0.0, 1.0]),
            ])
            .unwrap(),
        );
        let l = Listener::new(t, None).unwrap();
        assert_eq!(literal_guess(&l, "dog", &w(&["brick"])).unwrap(), "brick");
        assert_eq!(literal_guess(&l, "dog", &w(&["brick", "puppy"])).unwrap(), "puppy");
        assert_eq!(literal_guess(&l, "same", &w(&["y", "x"])).unwrap(), "x");
    }

    #[test]
    fn literal_clue_picks_nearest_pair() {
        // clue0 sits on goal ba's axis with 0.9, clue1 on bb with 0.8.
        let (l, s) = fixture(vec![
            ("circle", vec![(0, 0.9), (27, 0.1)]),
            ("square", vec![(1, 0.8), (28, 0.2)]),
        ]);
        let c = literal_clue(&l, &s, &RsaConfig::default()).unwrap();
        assert_eq!((c.clue.as_str(), c.target.as_str()), ("circle", "ba"));
    }

    #[test]
    fn empty_clue_vocabulary() {
        let (l, s) = fixture(vec![]);
        assert!(matches!(
            literal_clue(&l, &s, &RsaConfig::default()),
            Err(AgentError::EmptyClueVocabulary)
        ));
        assert!(matches!(
            rsa_clue(&l, &s, &RsaConfig::default()),
            Err(AgentError::EmptyClueVocabulary)
        ));
    }

    #[test]
    fn cost_formula() {
        // Probabilities chosen by solving the softmax for the logits; verified via the distribution.
        let (l, s) = fixture(vec![("hint", vec![(9, 1.0), (12, 0.5), (0, 0.3)])]);
        let unrevealed = s.unrevealed();
        let d = l.distribution("hint", &unrevealed).unwrap();
        let pa = d.prob_of("bj").unwrap();
        let pn = d.prob_of("bm").unwrap();
        let got = rsa_cost(&l, "hint", &s, 0.1).unwrap();
        assert!((got - (pa + 0.1 * pn)).abs() < 1e-12);
        assert!((rsa_cost(&l, "hint", &s, 0.0).unwrap() - pa).abs() < 1e-12);
    }

    #[test]
    fn empty_role_sets_contribute_zero() {
        let (l, s) = fixture(vec![("hint", vec![(0, 1.0)])]);
        let mut played = GameState::new(s.board().clone(), GameRules { max_turns: 100, guesses_per_turn: 1 });
        for word in s.board().words_with_role(Role::Neutral) {
            played.give_clue("hint", vec![]).unwrap();
            played.apply_guess(&word).unwrap();
        }
        // No neutral words left: delta no longer matters.
        let d = l.distribution("hint", &played.unrevealed()).unwrap();
        let pa = ["bj", "bk", "bl"].iter().map(|x| d.prob_of(x).unwrap()).fold(0.0, f64::max);
        assert!((rsa_cost(&l, "hint", &played, 0.5).unwrap() - pa).abs() < 1e-12);

        // Only goal words in the support: both maxima are empty.
        let goals = s.board().words_with_role(Role::Goal);
        let only_goals = l.distribution("hint", &goals).unwrap();
        assert_eq!(cost_of(&only_goals, &s, 0.1), 0.0);
    }

    #[test]
    fn rsa_avoids_risky_clue() {
        // "trap" is nearest to goal ba but even nearer to avoid bj.
        let (l, s) = fixture(vec![
            ("trap", vec![(0, 0.8), (9, 1.0)]),
            ("safe", vec![(0, 0.6), (27, 0.8)]),
        ]);
        let l = l.with_scale(10.0);
        let cfg = RsaConfig::default();
        let lit = literal_clue(&l, &s, &cfg).unwrap();
        assert_eq!(lit.clue, "trap");
        let d = l.distribution("trap", &s.unrevealed()).unwrap();
        assert!(d.prob_of("bj").unwrap() >= 0.5);
        let rsa = rsa_clue(&l, &s, &cfg).unwrap();
        assert_eq!((rsa.clue.as_str(), rsa.target.as_str()), ("safe", "ba"));
    }

    #[test]
    fn zero_cost_reduces_to_max_listener_probability() {
        let (l, s) = fixture(vec![
            ("one", vec![(0, 1.0), (1, 0.2)]),
            ("two", vec![(2, 1.0), (3, 0.9)]),
        ]);
        let cfg = RsaConfig { delta: 0.0, ..RsaConfig::default() };
        let rsa = rsa_clue(&l, &s, &cfg).unwrap();
        // Neither clue touches avoid words, so cost is ~0 and RSA maximizes P_L0(g|c).
        let mut best = ("".to_string(), "".to_string(), f64::NEG_INFINITY);
        for c in ["one", "two"] {
            let d = l.distribution(c, &s.unrevealed()).unwrap();
            for g in s.unrevealed_with_role(Role::Goal) {
                let p = d.prob_of(&g).unwrap();
                if p > best.2 {
                    best = (c.to_string(), g, p);
                }
            }
        }
        assert_eq!((rsa.clue, rsa.target), (best.0, best.1));
    }

    #[test]
    fn speaker_distribution_uses_alpha() {
        let (l, s) = fixture(vec![
            ("one", vec![(0, 1.0), (1, 0.2)]),
            ("two", vec![(0, 0.7), (9, 0.5)]),
        ]);
        let lo = speaker_distribution(&l, &s, "ba", &RsaConfig { alpha: 0.1, ..Default::default() }).unwrap();
        let hi = speaker_distribution(&l, &s, "ba", &RsaConfig { alpha: 5.0, ..Default::default() }).unwrap();
        assert_eq!(lo.argmax(), hi.argmax());
        assert!(hi.probs().iter().cloned().fold(0.0, f64::max) > lo.probs().iter().cloned().fold(0.0, f64::max));
    }

    fn two_cultures() -> CulturePosterior {
        // Two cultures over the same table: identity head vs a head swapping axes 0 and 1.
        let t = Arc::new(
            EmbeddingTable::from_entries(vec![
                ("clue", vec![1.0, 0.0, 0.0]),
                ("p", vec![1.0, 0.0, 0.0]),
                ("q", vec![0.0, 1.0, 0.0]),
                ("r", vec![0.0, 0.0, 1.0]),
            ])
            .unwrap(),
        );
        let mut swap = LinearHead::identity(3);
        swap.weight = nalgebra::DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let a = Culture { id: "a".into(), listener: Listener::new(t.clone(), Some(Arc::new(LinearHead::identity(3)))).unwrap() };
        let b = Culture { id: "b".into(), listener: Listener::new(t, Some(Arc::new(swap))).unwrap() };
        CulturePosterior::uniform(vec![a, b], 0.5).unwrap()
    }

    #[test]
    fn c3_update_formula() {
        let p = two_cultures();
        let cands = w(&["p", "q", "r"]);
        let lik = p.likelihoods("clue", "q", &cands).unwrap();
        let next = c3_update(&p, "clue", "q", &cands).unwrap();
        for i in 0..2 {
            assert!((next.weights()[i] - (0.5 * 0.5 + 0.5 * lik[i])).abs() < 1e-15);
        }
        let frozen = CulturePosterior::uniform(p.cultures().to_vec(), 1.0).unwrap();
        assert_eq!(c3_update(&frozen, "clue", "q", &cands).unwrap().weights(), frozen.weights());
        let raw = CulturePosterior::uniform(p.cultures().to_vec(), 0.0).unwrap();
        assert_eq!(c3_update(&raw, "clue", "q", &cands).unwrap().weights(), lik.as_slice());
        assert!(matches!(
            p.likelihoods("clue", "zzz", &cands),
            Err(AgentError::NotACandidate(_))
        ));

        let direct = CulturePosterior::with_weights(p.cultures()[..1].to_vec(), vec![0.4], 0.5).unwrap();
        // single-culture hand check: 0.5 * 0.4 + 0.5 * 0.8 = 0.6
        let w_new = direct.beta() * 0.4 + (1.0 - direct.beta()) * 0.8;
        assert!((w_new - 0.6).abs() < 1e-15);
    }

    #[test]
    fn selection_and_ties() {
        let p = two_cultures();
        assert_eq!(c3_select_culture(&p), "a");
        let q = CulturePosterior::with_weights(p.cultures().to_vec(), vec![0.2, 0.7], 0.5).unwrap();
        assert_eq!(c3_select_culture(&q), "b");
        let single = CulturePosterior::uniform(p.cultures()[1..].to_vec(), 0.5).unwrap();
        assert_eq!(c3_select_culture(&single), "b");
    }

    #[test]
    fn renormalized_weights_sum_to_one() {
        let mut p = two_cultures().renormalized(true);
        p.update("clue", "q", &w(&["p", "q", "r"])).unwrap();
        assert!((p.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wonky_cases() {
        let prior = Distribution::new(w(&["m1", "m2"]), vec![0.9, 0.1]).unwrap();
        let post = wonky_listener(&prior, &[0.5, 0.5], 0.5).unwrap();
        assert!((post.probs()[0] - 0.7).abs() < 1e-9);
        assert!((post.probs()[1] - 0.3).abs() < 1e-9);

        let normal = wonky_listener(&prior, &[0.2, 0.6], 0.0).unwrap();
        let z = 0.9 * 0.2 + 0.1 * 0.6;
        assert!((normal.probs()[0] - 0.18 / z).abs() < 1e-12);
        let wonky = wonky_listener(&prior, &[0.2, 0.6], 1.0).unwrap();
        assert!((wonky.probs()[0] - 0.25).abs() < 1e-12);
        assert!(wonky_listener(&prior, &[0.2], 0.5).is_err());
    }

    #[test]
    fn guessers() {
        let (l, s) = fixture(vec![("hint", vec![(3, 1.0)])]);
        let un = s.unrevealed();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let req = GuessRequest { clue: "hint", unrevealed: &un, targets: &[] };
        let g = EmbeddingGuesser::new(l.clone().with_scale(50.0));
        assert_eq!(g.guess(&req, &mut rng).unwrap().word, "bd");
        let sampler = EmbeddingGuesser { listener: l.with_scale(50.0), sample: true };
        assert_eq!(sampler.guess(&req, &mut rng).unwrap().word, "bd");
        let targets = w(&["bq"]);
        let req = GuessRequest { clue: "hint", unrevealed: &un, targets: &targets };
        assert_eq!(TargetGuesser.guess(&req, &mut rng).unwrap().word, "bq");
    }

    fn random_table(seed: u64) -> (Listener, GameState) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = board_words();
        let dim = 6;
        let mut entries: Vec<(String, Vec<f64>)> = (0..12)
            .map(|i| (format!("clue{}", (b'a' + i as u8) as char), (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        for word in &words {
            entries.push((word.clone(), (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()));
        }
        let table = Arc::new(EmbeddingTable::from_entries(entries).unwrap());
        let board = Board::from_roles(seed, roles_for(&words)).unwrap();
        (Listener::new(table, None).unwrap().with_scale(5.0), GameState::new(board, GameRules::default()))
    }

    proptest! {
        #[test]
        fn alpha_never_changes_the_choice(seed in any::<u64>(), a1 in 0.01f64..10.0, a2 in 0.01f64..10.0) {
            let (l, s) = random_table(seed);
            let c1 = rsa_clue(&l, &s, &RsaConfig { alpha: a1, ..Default::default() }).unwrap();
            let c2 = rsa_clue(&l, &s, &RsaConfig { alpha: a2, ..Default::default() }).unwrap();
            prop_assert_eq!((c1.clue, c1.target), (c2.clue, c2.target));
        }

        #[test]
        fn single_culture_c3_equals_rsa(seed in any::<u64>()) {
            let (l, s) = random_table(seed);
            let p = CulturePosterior::uniform(vec![Culture { id: "only".into(), listener: l.clone() }], 0.5).unwrap();
            let cfg = RsaConfig::default();
            prop_assert_eq!(c3_clue(&p, &s, &cfg).unwrap(), rsa_clue(&l, &s, &cfg).unwrap());
        }

        #[test]
        fn weights_stay_in_unit_interval(seed in any::<u64>(), beta in 0.0f64..=1.0, pick in 0usize..25) {
            let (l, s) = random_table(seed);
            let other = l.clone().with_scale(1.0);
            let mut p = CulturePosterior::uniform(vec![
                Culture { id: "x".into(), listener: l },
                Culture { id: "y".into(), listener: other },
            ], beta).unwrap();
            let un = s.unrevealed();
            for clue in ["cluea", "clueb", "cluec"] {
                p.update(clue, &un[pick], &un).unwrap();
                prop_assert!(p.weights().iter().all(|w| (0.0..=1.0).contains(w) && w.is_finite()));
            }
        }

        #[test]
        fn literal_guess_matches_brute_force_scan(seed in any::<u64>(), ci in 0usize..12) {
            let (l, s) = random_table(seed);
            let clue = format!("clue{}", (b'a' + ci as u8) as char);
            let un = s.unrevealed();
            let table = l.table();
            let cv = table.vector(&clue).unwrap();
            let mut best: Option<(&String, f64)> = None;
            for word in &un {
                let v = table.vector(word).unwrap();
                let sim = crate::lexicon::cosine_sim(cv, v).unwrap();
                if best.is_none_or(|(bw, bs)| sim > bs || (sim == bs && word < bw)) {
                    best = Some((word, sim));
                }
            }
            prop_assert_eq!(literal_guess(&l, &clue, &un).unwrap(), best.unwrap().0.clone());
        }
    }
}
