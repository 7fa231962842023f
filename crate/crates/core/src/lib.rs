//! Pronoun coreference resolution with a contextual scorer, softmax pruning
//! and a knowledge-attention layer over plurality, animacy & gender and
//! selectional-preference features.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod neural;
pub mod spkb;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
