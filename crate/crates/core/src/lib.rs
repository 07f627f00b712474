//! Pragmatic clue giving for Codenames Duet.
//!
//! Embedding-based literal listeners ([`lexicon`]), the game itself
//! ([`game`]), literal, RSA and culture-adaptive RSA+C3 clue givers
//! ([`agents`]), contrastive training of listener heads ([`training`]),
//! gameplay records ([`dataset`]), alignment and win-rate metrics
//! ([`metrics`]), the seeded evaluation harness ([`harness`]) and a small
//! representation-analysis toolkit ([`analysis`]).

pub mod agents;
pub mod analysis;
pub mod dataset;
pub mod game;
pub mod harness;
pub mod lexicon;
pub mod metrics;
pub mod par;
pub mod training;

pub use par::Parallelism;
