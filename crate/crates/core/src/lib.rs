//! Transformer text classification supervised by human attention.
//!
//! Documents carry word-level highlights from annotators. Highlights are
//! aggregated into a normalized attention distribution and used to steer the
//! classifier-token attention of a compact encoder, via one of three
//! strategies (see [`humal::StrategyKind`]).

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod experiments;
pub mod humal;
pub mod model;
pub mod tokenizer;

pub use error::{Error, Result};
