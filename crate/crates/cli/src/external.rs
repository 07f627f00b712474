//! A guesser behind an HTTP endpoint.
//!
//! Each guess is a `POST` of `{"clue": ..., "unrevealed": [...]}` to the
//! configured URL, answered by `{"guess": word}`. The giver's targets are
//! never sent. Transport errors, timeouts and words that are not unrevealed
//! fail the game, which the harness then counts as errored.

use std::time::Duration;

use codenames_core::agents::{AgentError, GuessOutput, GuessRequest, GuesserPolicy};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize)]
struct Ask<'a> {
    clue: &'a str,
    unrevealed: &'a [String],
}

#[derive(Debug, Deserialize)]
struct Answer {
    guess: String,
}

pub struct HttpGuesser {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpGuesser {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self, reqwest::Error> {
        Ok(HttpGuesser {
            url: url.into(),
            client: reqwest::blocking::Client::builder().timeout(timeout).build()?,
        })
    }
}

impl GuesserPolicy for HttpGuesser {
    fn guess(&self, req: &GuessRequest<'_>, _rng: &mut ChaCha8Rng) -> Result<GuessOutput, AgentError> {
        let fail = |e: reqwest::Error| AgentError::Guesser(format!("{}: {e}", self.url));
        let answer: Answer = self
            .client
            .post(&self.url)
            .json(&Ask {
                clue: req.clue,
                unrevealed: req.unrevealed,
            })
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(fail)?;
        let word = codenames_core::lexicon::normalize_word(&answer.guess);
        if !req.unrevealed.contains(&word) {
            return Err(AgentError::Guesser(format!("`{word}` is not an unrevealed word")));
        }
        Ok(GuessOutput {
            word,
            distribution: None,
        })
    }
}
