//! Deterministic toolkit for contextual biasing in CTC speech recognition.
//!
//! The crate covers the full loop at desk scale:
//!
//! * [`model`]: a biasing layer (BLSTM context encoder, multi-head attention
//!   over the phrase list, combiner) plus a context-phrase prediction head
//!   that shares its output layer with the CTC head.
//! * [`ctc`]: CTC loss with analytic gradients, greedy and prefix beam
//!   decoding, and trie-driven shallow-fusion boosting of phrase prefixes.
//! * [`filter`]: two-stage posterior-driven filtering that shrinks large
//!   biasing lists to the phrases the audio plausibly contains.
//! * [`eval`]: word error rates split by biased/unbiased words and phrase
//!   precision/recall, plus biasing-list construction helpers.
//! * [`synth`]: a seeded synthetic scenario generator used by the acceptance
//!   tests and the `selfcheck` suites.
//! * [`files`]: small binary and text formats so every artifact round-trips
//!   byte-identically.
//!
//! Everything computes in `f64`, iterates in a fixed order, and seeds every
//! random draw, so equal inputs give bit-equal outputs.

pub mod ctc;
pub mod error;
pub mod eval;
pub mod files;
pub mod filter;
pub mod model;
pub mod nn;
pub mod posterior;
pub mod selfcheck;
pub mod synth;
pub mod vocab;

pub use error::{Error, Result};
