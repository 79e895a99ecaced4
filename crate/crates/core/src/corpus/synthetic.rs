//! Planted-cue corpora: each document mixes filler words with a few cue
//! words whose polarity carries the label, and the gold highlight marks
//! exactly the cue positions.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedDocument, AnnotatorRecord, Label};
use crate::error::{Error, Result};

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

pub const GOLD_ANNOTATOR: &str = "gold";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub documents: usize,
    /// Number of distinct filler words.
    pub filler_vocab_size: usize,
    pub positive_cues: Vec<String>,
    pub negative_cues: Vec<String>,
    pub min_words: usize,
    pub max_words: usize,
    /// Cue words per document are drawn uniformly from `1..=max_cues`.
    pub max_cues: usize,
    /// Probability that the label agrees with the cue polarity.
    pub label_given_cue: f64,
    /// Probability that a document carries positive cues.
    pub class_prior: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let words = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect();
        SyntheticSpec {
            documents: 2000,
            filler_vocab_size: 300,
            positive_cues: words(&["superb", "delightful", "wonderful", "excellent", "charming"]),
            negative_cues: words(&["dreadful", "horrible", "awful", "terrible", "disgusting"]),
            min_words: 8,
            max_words: 20,
            max_cues: 2,
            label_given_cue: 0.95,
            class_prior: 0.5,
            seed: 17,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Synthetic(m.to_string()));
        if self.positive_cues.is_empty() || self.negative_cues.is_empty() {
            return bad("cue word sets must be non-empty");
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad("word range must satisfy 1 <= min_words <= max_words");
        }
        if self.max_cues == 0 || self.max_cues > self.min_words {
            return bad("max_cues must be in 1..=min_words");
        }
        if !(0.0..=1.0).contains(&self.label_given_cue) || !(0.0..=1.0).contains(&self.class_prior)
        {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.filler_vocab_size == 0 {
            return bad("filler vocabulary must be non-empty");
        }
        let pos: BTreeSet<&str> = self.positive_cues.iter().map(String::as_str).collect();
        if self.negative_cues.iter().any(|w| pos.contains(w.as_str())) {
            return bad("positive and negative cue sets overlap");
        }
        Ok(())
    }

    fn is_cue(&self, w: &str) -> bool {
        self.positive_cues.iter().chain(&self.negative_cues).any(|c| c == w)
    }

    /// Distinct pronounceable pseudo-words, disjoint from the cues.
    pub fn filler_words(&self, rng: &mut ChaCha8Rng) -> Result<Vec<String>> {
        let capacity = (ONSETS.len() * VOWELS.len()).pow(3);
        if self.filler_vocab_size > capacity / 2 {
            return Err(Error::Synthetic(format!(
                "filler vocabulary larger than {}",
                capacity / 2
            )));
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(self.filler_vocab_size);
        while out.len() < self.filler_vocab_size {
            let syllables = rng.random_range(1..=3);
            let w: String = (0..syllables)
                .map(|_| {
                    format!(
                        "{}{}",
                        ONSETS.choose(rng).unwrap(),
                        VOWELS.choose(rng).unwrap()
                    )
                })
                .collect();
            if !self.is_cue(&w) && seen.insert(w.clone()) {
                out.push(w);
            }
        }
        Ok(out)
    }
}

/// Generate `spec.documents` labeled documents with one gold annotation each.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<AnnotatedDocument>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let filler = spec.filler_words(&mut rng)?;
    let width = spec.documents.to_string().len();
    let mut docs = Vec::with_capacity(spec.documents);
    for n in 0..spec.documents {
        let polarity = Label::from(rng.random_bool(spec.class_prior));
        let cues = match polarity {
            Label::Positive => &spec.positive_cues,
            Label::Negative => &spec.negative_cues,
        };
        let len = rng.random_range(spec.min_words..=spec.max_words);
        let k = rng.random_range(1..=spec.max_cues);
        let positions = rand::seq::index::sample(&mut rng, len, k);
        let mut highlights = vec![0u8; len];
        let mut words: Vec<String> = (0..len)
            .map(|_| filler.choose(&mut rng).unwrap().clone())
            .collect();
        for p in positions.iter() {
            words[p] = cues.choose(&mut rng).unwrap().clone();
            highlights[p] = 1;
        }
        let label = if rng.random_bool(spec.label_given_cue) {
            polarity
        } else {
            polarity.flip()
        };
        docs.push(AnnotatedDocument {
            id: format!("syn-{n:0width$}"),
            text: words.join(" "),
            words,
            annotations: vec![AnnotatorRecord {
                annotator_id: GOLD_ANNOTATOR.into(),
                highlights,
                label,
            }],
            self_report_label: None,
            resolved_label: Some(label),
        });
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::write_dataset;
    use crate::tokenizer::word_tokenize;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            documents: 200,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn deterministic_bytes() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_dataset(&mut a, &generate_synthetic(&small()).unwrap()).unwrap();
        write_dataset(&mut b, &generate_synthetic(&small()).unwrap()).unwrap();
        assert_eq!(a, b);
        let other = SyntheticSpec {
            seed: 18,
            ..small()
        };
        let mut c = Vec::new();
        write_dataset(&mut c, &generate_synthetic(&other).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gold_mask_marks_cues_only() {
        let spec = small();
        for d in generate_synthetic(&spec).unwrap() {
            assert_eq!(word_tokenize(&d.text), d.words);
            for (w, &h) in d.words.iter().zip(&d.annotations[0].highlights) {
                assert_eq!(h == 1, spec.is_cue(w), "{w}");
            }
        }
    }

    #[test]
    fn certain_cues_fix_labels() {
        let spec = SyntheticSpec {
            label_given_cue: 1.0,
            ..small()
        };
        for d in generate_synthetic(&spec).unwrap() {
            let has_pos = d.words.iter().any(|w| spec.positive_cues.contains(w));
            assert!(d.words.iter().any(|w| spec.is_cue(w)));
            assert_eq!(d.resolved_label == Some(Label::Positive), has_pos);
        }
    }

    #[test]
    fn empty_cues_rejected() {
        let spec = SyntheticSpec {
            positive_cues: vec![],
            ..small()
        };
        assert!(generate_synthetic(&spec).is_err());
    }
}
