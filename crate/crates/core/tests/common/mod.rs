#![allow(dead_code)]

use humal_core::corpus::{generate_synthetic, AnnotatedDocument, SyntheticSpec};
use humal_core::experiments::{prepare_documents, PreparedDoc};
use humal_core::model::ModelConfig;
use humal_core::tokenizer::{train_vocab, SubwordVocab};

/// Merges learned on top of the character inventory.
pub const MERGES: usize = 400;

pub fn vocab_for(docs: &[AnnotatedDocument]) -> SubwordVocab {
    let words: Vec<&str> = docs
        .iter()
        .flat_map(|d| d.words.iter().map(String::as_str))
        .collect();
    let chars: std::collections::BTreeSet<char> = words.iter().flat_map(|w| w.chars()).collect();
    train_vocab(&words, chars.len() + MERGES, 5).unwrap()
}

pub fn synthetic(spec: &SyntheticSpec) -> (Vec<AnnotatedDocument>, SubwordVocab, Vec<PreparedDoc>) {
    let docs = generate_synthetic(spec).unwrap();
    let vocab = vocab_for(&docs);
    let prepared = prepare_documents(&docs, &vocab, 128).unwrap();
    (docs, vocab, prepared)
}

pub fn small_model(vocab_size: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        width: 16,
        ff_width: 32,
        max_len: 64,
        vocab_size,
        seed,
        ..ModelConfig::default()
    }
}
