//! Annotated documents and the human-attention pipeline: aggregate the
//! per-annotator highlights, normalize them to a distribution, copy word
//! values onto subwords, and resolve document labels.

mod io;
mod synthetic;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    read_dataset, read_dataset_from, read_dataset_str, write_dataset, write_exclusion_log, AnnotationRecord,
    DocumentRecord,
};
pub use synthetic::{generate_synthetic, SyntheticSpec};

/// Binary class. Serialized as `0` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            _ => Err(format!("label must be 0 or 1, got {v}")),
        }
    }
}

impl From<bool> for Label {
    fn from(b: bool) -> Label {
        if b {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatorRecord {
    pub annotator_id: String,
    /// One entry per word, each 0 or 1.
    pub highlights: Vec<u8>,
    pub label: Label,
}

impl AnnotatorRecord {
    pub fn highlighted_indices(&self) -> Vec<usize> {
        self.highlights
            .iter()
            .enumerate()
            .filter_map(|(i, &h)| (h != 0).then_some(i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedDocument {
    pub id: String,
    pub text: String,
    pub words: Vec<String>,
    pub annotations: Vec<AnnotatorRecord>,
    pub self_report_label: Option<Label>,
    pub resolved_label: Option<Label>,
}

impl AnnotatedDocument {
    pub fn validate(&self) -> Result<()> {
        for a in &self.annotations {
            if a.highlights.len() != self.words.len() {
                return Err(Error::Validation {
                    doc_id: self.id.clone(),
                    message: format!(
                        "annotator {} mask has {} entries for {} words",
                        a.annotator_id,
                        a.highlights.len(),
                        self.words.len()
                    ),
                });
            }
            if let Some(i) = a.highlights.iter().position(|&h| h > 1) {
                return Err(Error::Validation {
                    doc_id: self.id.clone(),
                    message: format!(
                        "annotator {} mask entry {i} is not binary",
                        a.annotator_id
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    /// Majority vote over annotator labels; `None` on a tie or no labels.
    pub fn majority_label(&self) -> Option<Label> {
        let pos = self
            .annotations
            .iter()
            .filter(|a| a.label == Label::Positive)
            .count();
        let neg = self.annotations.len() - pos;
        match pos.cmp(&neg) {
            std::cmp::Ordering::Greater => Some(Label::Positive),
            std::cmp::Ordering::Less => Some(Label::Negative),
            std::cmp::Ordering::Equal => None,
        }
    }

    /// The resolved label, falling back to a unanimous or majority vote.
    pub fn label(&self) -> Option<Label> {
        self.resolved_label.or_else(|| self.majority_label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Word,
    Subword,
}

/// Normalized human attention. The all-zero vector is the sentinel for
/// documents without any highlight.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanAttention {
    pub weights: Vec<f64>,
    pub granularity: Granularity,
}

impl HumanAttention {
    pub fn zeros(len: usize, granularity: Granularity) -> Self {
        HumanAttention {
            weights: vec![0.0; len],
            granularity,
        }
    }

    pub fn is_sentinel(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weights laid over a token sequence whose first `leading` positions are
    /// special tokens receiving no human attention.
    pub fn with_leading_zeros(&self, leading: usize) -> Vec<f64> {
        let mut v = vec![0.0; leading];
        v.extend_from_slice(&self.weights);
        v
    }
}

/// Per-word count of annotators that highlighted the word.
pub fn aggregate_annotations(doc: &AnnotatedDocument) -> Result<Vec<f64>> {
    doc.validate()?;
    if doc.annotations.is_empty() {
        return Err(Error::Validation {
            doc_id: doc.id.clone(),
            message: "no annotations".into(),
        });
    }
    let mut counts = vec![0u32; doc.words.len()];
    for a in &doc.annotations {
        for (c, &h) in counts.iter_mut().zip(&a.highlights) {
            *c += u32::from(h);
        }
    }
    Ok(counts.into_iter().map(f64::from).collect())
}

/// Divide by the total so the weights sum to one. An all-zero input yields the
/// zero sentinel, which callers must keep out of training.
pub fn normalize_attention(raw: &[f64]) -> Result<HumanAttention> {
    normalize_with(raw, Granularity::Word)
}

fn normalize_with(raw: &[f64], granularity: Granularity) -> Result<HumanAttention> {
    if let Some((index, &value)) = raw
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= 0.0) || !v.is_finite())
    {
        return Err(Error::NegativeAttention { index, value });
    }
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return Ok(HumanAttention::zeros(raw.len(), granularity));
    }
    Ok(HumanAttention {
        weights: raw.iter().map(|v| v / total).collect(),
        granularity,
    })
}

/// Check that `alignment` assigns every one of `words` words a non-empty,
/// contiguous token range, in order. Returns the offset of the first subword.
pub fn check_alignment(alignment: &[Range<usize>], words: usize) -> Result<usize> {
    let mut gaps: Vec<usize> = alignment
        .iter()
        .enumerate()
        .take(words)
        .filter_map(|(i, r)| r.is_empty().then_some(i))
        .collect();
    gaps.extend(alignment.len()..words);
    if !gaps.is_empty() {
        return Err(Error::AlignmentGap(gaps));
    }
    if alignment.len() > words {
        return Err(Error::LengthMismatch {
            expected: words,
            actual: alignment.len(),
        });
    }
    for (i, pair) in alignment.windows(2).enumerate() {
        if pair[0].end != pair[1].start {
            return Err(Error::AlignmentGap(vec![i + 1]));
        }
    }
    Ok(alignment.first().map_or(0, |r| r.start))
}

/// Copy each word's value to every one of its subwords, without normalizing.
/// The result covers the subword positions only (no special tokens).
pub fn propagate_raw(word_values: &[f64], alignment: &[Range<usize>]) -> Result<Vec<f64>> {
    let offset = check_alignment(alignment, word_values.len())?;
    let end = alignment.last().map_or(offset, |r| r.end);
    let mut out = vec![0.0; end - offset];
    for (r, &v) in alignment.iter().zip(word_values) {
        for slot in &mut out[r.start - offset..r.end - offset] {
            *slot = v;
        }
    }
    Ok(out)
}

/// Word attention laid onto subwords and renormalized to unit sum.
pub fn propagate_to_subwords(
    word_attention: &HumanAttention,
    alignment: &[Range<usize>],
) -> Result<HumanAttention> {
    let raw = propagate_raw(&word_attention.weights, alignment)?;
    normalize_with(&raw, Granularity::Subword)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub reason: String,
}

/// Fraction of words highlighted by at least one annotator.
pub fn highlight_fraction(doc: &AnnotatedDocument) -> Result<f64> {
    let agg = aggregate_annotations(doc)?;
    if agg.is_empty() {
        return Ok(0.0);
    }
    let hit = agg.iter().filter(|&&v| v > 0.0).count();
    Ok(hit as f64 / agg.len() as f64)
}

pub const DEFAULT_MIN_HIGHLIGHT_FRACTION: f64 = 0.02;

/// `hits / words >= threshold`, with a tolerance for the float threshold.
pub fn meets_highlight_threshold(hits: usize, words: usize, threshold: f64) -> bool {
    words > 0 && hits as f64 / words as f64 >= threshold - 1e-12
}

/// Keep documents whose highlighted-word fraction reaches `threshold`.
pub fn filter_sparse(
    docs: Vec<AnnotatedDocument>,
    threshold: f64,
) -> (Vec<AnnotatedDocument>, Vec<Exclusion>) {
    let mut kept = Vec::with_capacity(docs.len());
    let mut excluded = Vec::new();
    for doc in docs {
        let reason = match aggregate_annotations(&doc) {
            Err(e) => Some(e.to_string()),
            Ok(agg) => {
                let hits = agg.iter().filter(|&&v| v > 0.0).count();
                if meets_highlight_threshold(hits, agg.len(), threshold) {
                    None
                } else {
                    Some(format!(
                        "highlighted {hits} of {} words, below {threshold}",
                        agg.len()
                    ))
                }
            }
        };
        match reason {
            None => kept.push(doc),
            Some(reason) => excluded.push(Exclusion { id: doc.id, reason }),
        }
    }
    (kept, excluded)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionMode {
    Majority,
    SelfReport,
}

/// Self-report (rows) against annotator majority vote (columns), indexed by
/// [`Label::index`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionReport {
    pub counts: [[u64; 2]; 2],
    pub agreement_count: u64,
}

impl ConfusionReport {
    pub fn record(&mut self, self_report: Label, majority: Label) {
        self.counts[self_report.index()][majority.index()] += 1;
        if self_report == majority {
            self.agreement_count += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Debug, Clone)]
pub struct Resolution {
    pub docs: Vec<AnnotatedDocument>,
    pub confusion: ConfusionReport,
    pub excluded: Vec<Exclusion>,
}

pub const KEEP_FIRST_ANNOTATIONS: usize = 3;

/// Assign each document a label and keep only the annotations that agree
/// with it (the first three in record order).
pub fn resolve_labels(docs: Vec<AnnotatedDocument>, mode: ResolutionMode) -> Resolution {
    resolve_labels_keeping(docs, mode, KEEP_FIRST_ANNOTATIONS)
}

pub fn resolve_labels_keeping(
    docs: Vec<AnnotatedDocument>,
    mode: ResolutionMode,
    keep: usize,
) -> Resolution {
    let mut confusion = ConfusionReport::default();
    let mut out = Vec::with_capacity(docs.len());
    let mut excluded = Vec::new();
    for mut doc in docs {
        let majority = doc.majority_label();
        if let (Some(s), Some(m)) = (doc.self_report_label, majority) {
            confusion.record(s, m);
        }
        let resolved = match mode {
            ResolutionMode::Majority => majority,
            ResolutionMode::SelfReport => doc.self_report_label,
        };
        let Some(label) = resolved else {
            let reason = match mode {
                ResolutionMode::Majority if doc.annotations.is_empty() => "no annotator labels",
                ResolutionMode::Majority => "annotator labels tied",
                ResolutionMode::SelfReport => "no self-reported label",
            };
            excluded.push(Exclusion {
                id: doc.id,
                reason: reason.into(),
            });
            continue;
        };
        doc.annotations.retain(|a| a.label == label);
        doc.annotations.truncate(keep);
        if doc.annotations.is_empty() {
            excluded.push(Exclusion {
                id: doc.id,
                reason: "no annotation agrees with the resolved label".into(),
            });
            continue;
        }
        doc.resolved_label = Some(label);
        out.push(doc);
    }
    Resolution {
        docs: out,
        confusion,
        excluded,
    }
}
