//! Human gameplay records in JSON Lines.
//!
//! One [`GameRecord`] per line:
//!
//! ```json
//! {"game_id":"g1","split":"train",
//!  "giver_demographics":{"education":"graduate"},"guesser_demographics":{},
//!  "giver_id":"p1","guesser_id":"p2",
//!  "turns":[{"clue":"season","targets":["fall"],
//!            "guesses":[{"word":"fall","outcome":"goal"}],
//!            "board":[{"word":"fall","role":"goal","revealed":false}, ...]}]}
//! ```
//!
//! `board` is the full 25-word board at the start of the turn, so the
//! unrevealed words a guesser chose from can be recovered for every turn.
//! `giver_id` and `guesser_id` are optional.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{GuessRecord, Role, Transcript, AVOID_COUNT, BOARD_SIZE, GOAL_COUNT, NEUTRAL_COUNT};
use crate::lexicon::{normalize_word, EmbeddingTable};
use crate::training::TurnExample;

/// Canonical demographic keys.
pub mod keys {
    pub const EDUCATION: &str = "education";
    pub const COUNTRY: &str = "country";
    pub const NATIVE: &str = "native";
    pub const POLITICAL: &str = "political";
    pub const AGE: &str = "age";
    pub const RELIGION: &str = "religion";
    pub const ALL: [&str; 6] = [EDUCATION, COUNTRY, NATIVE, POLITICAL, AGE, RELIGION];
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoardCell {
    pub word: String,
    pub role: Role,
    #[serde(default)]
    pub revealed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordTurn {
    pub clue: String,
    #[serde(default)]
    pub targets: Vec<String>,
    #[serde(default)]
    pub guesses: Vec<GuessRecord>,
    pub board: Vec<BoardCell>,
}

impl RecordTurn {
    /// Words still face-down when the clue was given, in board order.
    pub fn unrevealed(&self) -> Vec<String> {
        self.board
            .iter()
            .filter(|c| !c.revealed)
            .map(|c| c.word.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameRecord {
    pub game_id: String,
    pub turns: Vec<RecordTurn>,
    #[serde(default)]
    pub giver_demographics: BTreeMap<String, String>,
    #[serde(default)]
    pub guesser_demographics: BTreeMap<String, String>,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub giver_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guesser_id: Option<String>,
}

impl GameRecord {
    /// Lowercases every word in place.
    pub fn normalize(&mut self) {
        for t in &mut self.turns {
            t.clue = normalize_word(&t.clue);
            t.targets.iter_mut().for_each(|w| *w = normalize_word(w));
            t.guesses.iter_mut().for_each(|g| g.word = normalize_word(&g.word));
            t.board.iter_mut().for_each(|c| c.word = normalize_word(&c.word));
        }
    }

    /// A record of a simulated game, with a board snapshot per turn and no
    /// demographics.
    pub fn from_transcript(game_id: impl Into<String>, transcript: &Transcript, split: Split) -> Self {
        let mut revealed = BTreeSet::new();
        let turns = transcript
            .turns
            .iter()
            .map(|t| {
                let board = transcript
                    .words
                    .iter()
                    .map(|w| BoardCell {
                        word: w.clone(),
                        role: transcript.roles[w],
                        revealed: revealed.contains(w),
                    })
                    .collect();
                revealed.extend(t.guesses.iter().map(|g| g.word.clone()));
                RecordTurn {
                    clue: t.clue.clone(),
                    targets: t.targets.clone(),
                    guesses: t.guesses.clone(),
                    board,
                }
            })
            .collect();
        GameRecord {
            game_id: game_id.into(),
            turns,
            giver_demographics: BTreeMap::new(),
            guesser_demographics: BTreeMap::new(),
            split,
            giver_id: None,
            guesser_id: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.turns.is_empty() {
            return Err(format!("game `{}` has no turns", self.game_id));
        }
        for (i, t) in self.turns.iter().enumerate() {
            let ctx = |msg: String| format!("game `{}` turn {}: {msg}", self.game_id, i + 1);
            if t.board.len() != BOARD_SIZE {
                return Err(ctx(format!("board has {} words", t.board.len())));
            }
            let mut roles = BTreeMap::new();
            for c in &t.board {
                if roles.insert(c.word.as_str(), (c.role, c.revealed)).is_some() {
                    return Err(ctx(format!("duplicate board word `{}`", c.word)));
                }
            }
            let count = |r| t.board.iter().filter(|c| c.role == r).count();
            let counts = (count(Role::Goal), count(Role::Avoid), count(Role::Neutral));
            if counts != (GOAL_COUNT, AVOID_COUNT, NEUTRAL_COUNT) {
                return Err(ctx(format!("role counts (goal, avoid, neutral) = {counts:?}")));
            }
            if let Some(w) = t.targets.iter().find(|w| !roles.contains_key(w.as_str())) {
                return Err(ctx(format!("target `{w}` is not on the board")));
            }
            for g in &t.guesses {
                match roles.get(g.word.as_str()) {
                    None => return Err(ctx(format!("guess `{}` is not on the board", g.word))),
                    Some((_, true)) => return Err(ctx(format!("guess `{}` was already revealed", g.word))),
                    Some((role, _)) if *role != g.outcome => {
                        return Err(ctx(format!("guess `{}` outcome disagrees with its role", g.word)))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub records: usize,
    pub blank_lines: usize,
    /// `(line, reason)` for lines dropped in lenient mode.
    pub dropped: Vec<(usize, String)>,
    pub split_counts: BTreeMap<Split, usize>,
    /// Whether no player in the train split appears in validation or test.
    /// `None` when records carry no player ids.
    pub players_disjoint: Option<bool>,
    pub notes: Vec<String>,
}

/// Reads and validates a JSONL file; any invalid line is an error.
pub fn load_records(path: impl AsRef<Path>) -> Result<(Vec<GameRecord>, LoadReport), DatasetError> {
    read_records(BufReader::new(File::open(path)?), true)
}

/// Reads JSONL records. With `strict` off, invalid lines are dropped and
/// listed in the report instead of failing the load.
pub fn read_records<R: BufRead>(reader: R, strict: bool) -> Result<(Vec<GameRecord>, LoadReport), DatasetError> {
    let mut records = Vec::new();
    let mut report = LoadReport::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            report.blank_lines += 1;
            continue;
        }
        let parsed = serde_json::from_str::<GameRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|mut r| {
                r.normalize();
                r.validate().map(|_| r)
            });
        match parsed {
            Ok(r) => records.push(r),
            Err(reason) if strict => return Err(DatasetError::Invalid { line: lineno, reason }),
            Err(reason) => report.dropped.push((lineno, reason)),
        }
    }
    report.records = records.len();
    for r in &records {
        *report.split_counts.entry(r.split).or_default() += 1;
    }
    report.players_disjoint = players_disjoint(&records);
    match report.players_disjoint {
        Some(true) => report
            .notes
            .push("players in train are disjoint from validation/test".into()),
        Some(false) => report
            .notes
            .push("some players appear in both train and validation/test".into()),
        None => {}
    }
    Ok((records, report))
}

fn players_disjoint(records: &[GameRecord]) -> Option<bool> {
    let ids = |r: &GameRecord| -> Vec<String> { r.giver_id.iter().chain(r.guesser_id.iter()).cloned().collect() };
    if records.iter().all(|r| ids(r).is_empty()) {
        return None;
    }
    let train: HashSet<String> = records
        .iter()
        .filter(|r| r.split == Split::Train)
        .flat_map(ids)
        .collect();
    Some(
        records
            .iter()
            .filter(|r| r.split != Split::Train)
            .flat_map(ids)
            .all(|p| !train.contains(&p)),
    )
}

pub fn write_records<W: Write>(records: &[GameRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        writeln!(out)?;
    }
    Ok(())
}

/// Which words count as "selected" when turning a record turn into a training example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    HumanGuesses,
    GiverTargets,
}

/// One example per turn over the turn's unrevealed words. Turns with no
/// selected word are skipped; the skip count is returned alongside.
pub fn to_turn_examples(records: &[GameRecord], selection: Selection) -> (Vec<TurnExample>, usize) {
    let mut examples = Vec::new();
    let mut skipped = 0;
    for t in records.iter().flat_map(|r| &r.turns) {
        let board_words = t.unrevealed();
        let chosen: BTreeSet<&str> = match selection {
            Selection::HumanGuesses => t.guesses.iter().map(|g| g.word.as_str()).collect(),
            Selection::GiverTargets => t.targets.iter().map(String::as_str).collect(),
        };
        let selected: Vec<usize> = board_words
            .iter()
            .enumerate()
            .filter(|(_, w)| chosen.contains(w.as_str()))
            .map(|(i, _)| i)
            .collect();
        if selected.is_empty() {
            skipped += 1;
            continue;
        }
        examples.push(TurnExample {
            clue: t.clue.clone(),
            board_words,
            selected,
        });
    }
    (examples, skipped)
}

/// Drops examples whose clue or board words are missing from `table`.
/// Returns the number dropped.
pub fn retain_embeddable(examples: &mut Vec<TurnExample>, table: &EmbeddingTable) -> usize {
    let before = examples.len();
    examples.retain(|e| table.contains(&e.clue) && e.board_words.iter().all(|w| table.contains(w)));
    before - examples.len()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn board_cells(words: &[String], revealed: &[&str]) -> Vec<BoardCell> {
        words
            .iter()
            .enumerate()
            .map(|(i, w)| BoardCell {
                word: w.clone(),
                role: if i < 9 {
                    Role::Goal
                } else if i < 12 {
                    Role::Avoid
                } else {
                    Role::Neutral
                },
                revealed: revealed.contains(&w.as_str()),
            })
            .collect()
    }

    pub(crate) fn sample_record(id: &str, split: Split) -> GameRecord {
        let mut words: Vec<String> = vec!["fall".into(), "spring".into()];
        words.extend((0..23).map(|i| format!("word{i}")));
        let mut record = GameRecord {
            game_id: id.into(),
            turns: vec![RecordTurn {
                clue: "season".into(),
                targets: vec!["fall".into()],
                guesses: vec![
                    GuessRecord { word: "fall".into(), outcome: Role::Goal },
                    GuessRecord { word: "spring".into(), outcome: Role::Goal },
                ],
                board: board_cells(&words, &[]),
            }],
            giver_demographics: BTreeMap::from([("education".to_string(), "graduate".to_string())]),
            guesser_demographics: BTreeMap::new(),
            split,
            giver_id: None,
            guesser_id: None,
        };
        // 15 of the 25 words were revealed earlier, leaving 10 to choose from.
        for c in record.turns[0].board.iter_mut().skip(10) {
            c.revealed = true;
        }
        record
    }

    fn to_line(r: &GameRecord) -> String {
        serde_json::to_string(r).unwrap()
    }

    #[test]
    fn loads_one_game() {
        let text = to_line(&sample_record("g1", Split::Train));
        let (recs, report) = read_records(text.as_bytes(), true).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(report.split_counts[&Split::Train], 1);
        assert_eq!(report.players_disjoint, None);
    }

    #[test]
    fn rejects_bad_role_counts() {
        let mut r = sample_record("g1", Split::Train);
        r.turns[0].board[0].role = Role::Neutral;
        let text = format!("\n{}", to_line(&r));
        match read_records(text.as_bytes(), true) {
            Err(DatasetError::Invalid { line: 2, reason }) => assert!(reason.contains("role counts")),
            other => panic!("unexpected {other:?}"),
        }
        let (recs, report) = read_records(text.as_bytes(), false).unwrap();
        assert!(recs.is_empty());
        assert_eq!(report.dropped.len(), 1);
        assert!(read_records("{not json".as_bytes(), true).is_err());
    }

    #[test]
    fn reports_player_disjointness() {
        let mut a = sample_record("g1", Split::Train);
        a.giver_id = Some("p1".into());
        let mut b = sample_record("g2", Split::Validation);
        b.giver_id = Some("p2".into());
        let text = format!("{}\n{}\n", to_line(&a), to_line(&b));
        let (_, report) = read_records(text.as_bytes(), true).unwrap();
        assert_eq!(report.players_disjoint, Some(true));
        b.guesser_id = Some("p1".into());
        let text = format!("{}\n{}\n", to_line(&a), to_line(&b));
        let (_, report) = read_records(text.as_bytes(), true).unwrap();
        assert_eq!(report.players_disjoint, Some(false));
    }

    #[test]
    fn examples_from_turns() {
        let r = sample_record("g1", Split::Train);
        let (ex, skipped) = to_turn_examples(std::slice::from_ref(&r), Selection::HumanGuesses);
        assert_eq!(skipped, 0);
        assert_eq!(ex[0].board_words.len(), 10);
        assert_eq!(ex[0].selected, vec![0, 1]);
        let (ex, _) = to_turn_examples(std::slice::from_ref(&r), Selection::GiverTargets);
        assert_eq!(ex[0].selected.len(), 1);
        assert!(to_turn_examples(&[], Selection::HumanGuesses).0.is_empty());

        let mut none = r.clone();
        none.turns[0].guesses.clear();
        let (ex, skipped) = to_turn_examples(&[none, r], Selection::HumanGuesses);
        assert_eq!((ex.len(), skipped), (1, 1));
    }

    #[test]
    fn write_then_read_is_identity() {
        let mut a = sample_record("g1", Split::Train);
        a.guesser_id = Some("x".into());
        let recs = vec![a, sample_record("g2", Split::Test)];
        let mut buf = Vec::new();
        write_records(&recs, &mut buf).unwrap();
        let (back, _) = read_records(buf.as_slice(), true).unwrap();
        assert_eq!(back, recs);
    }
}
