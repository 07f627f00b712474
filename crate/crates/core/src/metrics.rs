//! Alignment metrics against human play and win-rate aggregation.
//!
//! Counts are summed over all turns before dividing. A ratio with a zero
//! denominator is undefined and reported as `null`, never as 0.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::GameRecord;
use crate::lexicon::normalize_word;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{simulated} simulated games for {human} human games")]
    GameCount { simulated: usize, human: usize },
    #[error("game `{game_id}`: {simulated} simulated turns for {human} human turns")]
    TurnCount {
        game_id: String,
        simulated: usize,
        human: usize,
    },
    #[error("no runs")]
    NoRuns,
    #[error("run {0} has no games")]
    EmptyRun(usize),
    #[error("every game errored")]
    NoCompletedGames,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub numerator: usize,
    pub denominator: usize,
    pub value: Option<f64>,
}

impl Ratio {
    pub fn new(numerator: usize, denominator: usize) -> Self {
        Ratio {
            numerator,
            denominator,
            value: (denominator > 0).then(|| numerator as f64 / denominator as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// Human giver targets also chosen by the simulated giver.
    pub giver_target_accuracy: Ratio,
    /// Human clues also produced by the simulated giver.
    pub clue_accuracy: Ratio,
    /// Human guesses also produced by the simulated guesser.
    pub guess_accuracy: Ratio,
    /// Human giver targets guessed by the simulated guesser.
    pub guesser_target_accuracy: Ratio,
}

/// Flat form of [`AlignmentReport`] for CSV output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub giver_target_accuracy: Option<f64>,
    pub giver_target_hits: usize,
    pub human_targets: usize,
    pub clue_accuracy: Option<f64>,
    pub clue_hits: usize,
    pub human_clues: usize,
    pub guess_accuracy: Option<f64>,
    pub guess_hits: usize,
    pub human_guesses: usize,
    pub guesser_target_accuracy: Option<f64>,
    pub guesser_target_hits: usize,
}

impl AlignmentReport {
    pub fn row(&self) -> AlignmentRow {
        AlignmentRow {
            giver_target_accuracy: self.giver_target_accuracy.value,
            giver_target_hits: self.giver_target_accuracy.numerator,
            human_targets: self.giver_target_accuracy.denominator,
            clue_accuracy: self.clue_accuracy.value,
            clue_hits: self.clue_accuracy.numerator,
            human_clues: self.clue_accuracy.denominator,
            guess_accuracy: self.guess_accuracy.value,
            guess_hits: self.guess_accuracy.numerator,
            human_guesses: self.guess_accuracy.denominator,
            guesser_target_accuracy: self.guesser_target_accuracy.value,
            guesser_target_hits: self.guesser_target_accuracy.numerator,
        }
    }
}

/// What the simulated giver and guesser produced for one human turn. The
/// giver fields and guesser fields may come from separate runs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulatedTurn {
    pub clue: Option<String>,
    #[serde(default)]
    pub targets: Vec<String>,
    #[serde(default)]
    pub guesses: Vec<String>,
}

fn word_set<'a>(words: impl IntoIterator<Item = &'a String>) -> BTreeSet<String> {
    words.into_iter().map(|w| normalize_word(w)).collect()
}

/// `simulated[g][t]` is the simulated output for turn `t` of `human[g]`.
pub fn alignment(simulated: &[Vec<SimulatedTurn>], human: &[GameRecord]) -> Result<AlignmentReport, MetricsError> {
    if simulated.len() != human.len() {
        return Err(MetricsError::GameCount {
            simulated: simulated.len(),
            human: human.len(),
        });
    }
    let mut c = [0usize; 7];
    for (sim, rec) in simulated.iter().zip(human) {
        if sim.len() != rec.turns.len() {
            return Err(MetricsError::TurnCount {
                game_id: rec.game_id.clone(),
                simulated: sim.len(),
                human: rec.turns.len(),
            });
        }
        for (s, h) in sim.iter().zip(&rec.turns) {
            let human_targets = word_set(&h.targets);
            let human_guesses = word_set(h.guesses.iter().map(|g| &g.word));
            let sim_targets = word_set(&s.targets);
            let sim_guesses = word_set(&s.guesses);
            c[0] += sim_targets.intersection(&human_targets).count();
            c[1] += human_targets.len();
            c[2] += usize::from(s.clue.as_deref().map(normalize_word) == Some(normalize_word(&h.clue)));
            c[3] += 1;
            c[4] += sim_guesses.intersection(&human_guesses).count();
            c[5] += human_guesses.len();
            c[6] += sim_guesses.intersection(&human_targets).count();
        }
    }
    Ok(AlignmentReport {
        giver_target_accuracy: Ratio::new(c[0], c[1]),
        clue_accuracy: Ratio::new(c[2], c[3]),
        guess_accuracy: Ratio::new(c[4], c[5]),
        guesser_target_accuracy: Ratio::new(c[6], c[1]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GameOutcome {
    Won,
    Lost,
    /// Aborted by an agent failure; excluded from the rate.
    Errored,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinRateReport {
    pub wins: usize,
    /// Completed games; errored games are not counted.
    pub games: usize,
    pub errored: usize,
    pub runs: usize,
    pub rate: f64,
    /// Sample standard deviation of per-run rates over `sqrt(runs)`.
    pub stderr: f64,
    /// Set when only one run had completed games, so `stderr` is 0 by convention.
    pub single_run: bool,
}

/// Pooled win rate over `runs`, each a list of game outcomes.
pub fn win_rate(runs: &[Vec<GameOutcome>]) -> Result<WinRateReport, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::NoRuns);
    }
    if let Some(i) = runs.iter().position(|r| r.is_empty()) {
        return Err(MetricsError::EmptyRun(i));
    }
    let count = |r: &[GameOutcome], o| r.iter().filter(|&&x| x == o).count();
    let per_run: Vec<(usize, usize)> = runs
        .iter()
        .map(|r| (count(r, GameOutcome::Won), r.len() - count(r, GameOutcome::Errored)))
        .collect();
    let wins: usize = per_run.iter().map(|p| p.0).sum();
    let games: usize = per_run.iter().map(|p| p.1).sum();
    let errored: usize = runs.iter().map(|r| count(r, GameOutcome::Errored)).sum();
    if games == 0 {
        return Err(MetricsError::NoCompletedGames);
    }
    let rates: Vec<f64> = per_run
        .iter()
        .filter(|p| p.1 > 0)
        .map(|&(w, g)| w as f64 / g as f64)
        .collect();
    let n = rates.len();
    let stderr = if n < 2 {
        0.0
    } else {
        // Shifted by the first rate so equal rates give exactly zero.
        let d: Vec<f64> = rates.iter().map(|x| x - rates[0]).collect();
        let sum = d.iter().sum::<f64>();
        let var = (d.iter().map(|x| x * x).sum::<f64>() - sum * sum / n as f64) / (n - 1) as f64;
        var.max(0.0).sqrt() / (n as f64).sqrt()
    };
    Ok(WinRateReport {
        wins,
        games,
        errored,
        runs: runs.len(),
        rate: wins as f64 / games as f64,
        stderr,
        single_run: n == 1,
    })
}
