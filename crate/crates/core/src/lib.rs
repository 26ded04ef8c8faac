//! Authorship de-anonymization at corpus scale.
//!
//! Two stages: an embedding prefilter shrinks the candidate universe to a
//! top-K pool ([`filter`]), then an LLM-judged elimination tournament ranks
//! the pool ([`tournament`], using [`llm`] for group verdicts). [`eval`]
//! scores shortlists against author labels and the closed-form chance baseline.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod filter;
pub mod llm;
pub mod manifest;
pub mod synth;
pub mod tournament;

pub use error::{DasError, Result};
