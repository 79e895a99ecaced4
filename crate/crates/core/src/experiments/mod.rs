//! Evaluation protocol: imbalanced subsampling, replicated training against a
//! fixed balanced test set, AUC, paired significance, label-cost curves and
//! length buckets.

mod curve;
mod metrics;
mod stats;

use std::collections::HashSet;
use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::token_to_word;
use crate::corpus::{
    aggregate_annotations, normalize_attention, propagate_to_subwords, AnnotatedDocument, Label,
};
use crate::error::{Error, Result};
use crate::humal::{cosine_similarity, StrategyConfig, StrategyKind};
use crate::model::{
    fit, forward_batch, ForwardOutput, ModelConfig, Params, TrainConfig, TrainItem,
    TrainingHistory,
};
use crate::tokenizer::{subword_tokenize, SubwordVocab, TokenSequence};

pub use curve::{
    first_crossing, horizontal_gap, label_cost_curve, write_curve_csv, Curve, CurvePoint,
    CurveResult, GapSummary, LOWESS_FRAC,
};
pub use metrics::{auc, average_ranks, format_cell, mean_std};
pub use stats::{lowess, significance, Significance, EXACT_MAX_PAIRS, SIGNIFICANCE_LEVEL};

const SCORE_CHUNK: usize = 64;

/// `max(1, floor(size * ratio))`, never more than `size`.
pub fn minority_count(size: usize, ratio: f64) -> usize {
    ((size as f64 * ratio + 1e-9).floor() as usize).clamp(1, size.max(1))
}

/// Draw `size` indices without replacement, `minority_count(size, ratio)` of
/// them with the `minority` label and the rest with the other label. The
/// result is sorted and depends only on the inputs and `seed`.
pub fn subsample(
    labels: &[Label],
    size: usize,
    ratio: f64,
    minority: Label,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("minority ratio {ratio} outside (0, 1]")));
    }
    if size == 0 {
        return Err(Error::Config("train size must be >= 1".into()));
    }
    let m = minority_count(size, ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(size);
    for (class, want) in [(minority, m), (minority.flip(), size - m)] {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < want {
            return Err(Error::InsufficientClass {
                class: class.index().to_string(),
                required: want,
                available: members.len(),
            });
        }
        out.extend(sample(&mut rng, members.len(), want).iter().map(|k| members[k]));
    }
    out.sort_unstable();
    Ok(out)
}

/// A labeled document tokenized for the model, with its human attention at
/// word and token granularity when it has any.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDoc {
    pub id: String,
    pub label: Label,
    /// Word count before truncation.
    pub word_count: usize,
    pub tokens: TokenSequence,
    /// Unit-sum attention over the words kept after truncation.
    pub word_attention: Option<Vec<f64>>,
    /// `word_attention` laid over `tokens`, zero at the classifier token.
    pub token_attention: Option<Vec<f64>>,
}

impl PreparedDoc {
    pub fn train_item(&self) -> TrainItem {
        TrainItem {
            id: self.id.clone(),
            ids: self.tokens.ids.clone(),
            label: self.label,
            human: self.token_attention.clone(),
        }
    }
}

/// Tokenize, truncate to `max_len` tokens by whole words, and carry the
/// aggregated human attention of the kept words onto the subwords.
pub fn prepare_documents(
    docs: &[AnnotatedDocument],
    vocab: &SubwordVocab,
    max_len: usize,
) -> Result<Vec<PreparedDoc>> {
    docs.iter()
        .map(|doc| {
            let label = doc.label().ok_or_else(|| Error::Validation {
                doc_id: doc.id.clone(),
                message: "no resolved label".into(),
            })?;
            let mut tokens = subword_tokenize(&doc.words, vocab);
            tokens.truncate(max_len);
            let (word_attention, token_attention) = if doc.annotations.is_empty() {
                (None, None)
            } else {
                let mut raw = aggregate_annotations(doc)?;
                raw.truncate(tokens.word_count());
                let word = normalize_attention(&raw)?;
                if word.is_sentinel() {
                    (None, None)
                } else {
                    let sub = propagate_to_subwords(&word, &tokens.word_alignment)?;
                    let tok = sub.with_leading_zeros(1);
                    debug_assert_eq!(tok.len(), tokens.len());
                    (Some(word.weights), Some(tok))
                }
            };
            Ok(PreparedDoc {
                id: doc.id.clone(),
                label,
                word_count: doc.word_count(),
                tokens,
                word_attention,
                token_attention,
            })
        })
        .collect()
}

/// Split off a balanced test set of `test_size` documents. Returns sorted
/// `(test, pool)` index lists.
pub fn split_test(labels: &[Label], test_size: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if test_size == 0 || !test_size.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "test size {test_size} must be a positive even number"
        )));
    }
    let test = subsample(labels, test_size, 0.5, Label::Positive, seed)?;
    let in_test: HashSet<usize> = test.iter().copied().collect();
    let pool = (0..labels.len()).filter(|i| !in_test.contains(i)).collect();
    Ok((test, pool))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub size: usize,
    /// Fraction of the minority class in each training subsample.
    pub ratio: f64,
    pub minority: Label,
    pub strategies: Vec<StrategyConfig>,
    pub replicates: usize,
    pub test_size: usize,
    pub base_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            size: 250,
            ratio: 0.05,
            minority: Label::Positive,
            strategies: vec![
                StrategyConfig::baseline(),
                StrategyConfig::new(StrategyKind::Al, crate::humal::DEFAULT_ALPHA),
            ],
            replicates: 20,
            test_size: 200,
            base_seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("no strategies to compare".into()));
        }
        for s in &self.strategies {
            s.validate()?;
        }
        self.train.validate()?;
        self.model.validate()
    }

    pub fn replicate_seed(&self, r: usize) -> u64 {
        self.base_seed.wrapping_add(r as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyResult {
    pub strategy: StrategyConfig,
    pub aucs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Paired test against the baseline; `None` for the baseline itself or
    /// when no baseline was run.
    pub significance: Option<Significance>,
    /// Per replicate: mean over test documents of the cosine similarity
    /// between human word attention and the last layer's head-averaged
    /// classifier attention moved to words.
    pub cosines: Vec<f64>,
    /// AN only: AUCs when the test documents' human attention is supplied.
    pub human_aucs: Option<Vec<f64>>,
    pub histories: Vec<TrainingHistory>,
}

impl StrategyResult {
    pub fn name(&self) -> String {
        self.strategy.label()
    }

    pub fn cell(&self) -> String {
        format_cell(self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub size: usize,
    pub ratio: f64,
    pub seeds: Vec<u64>,
    pub strategies: Vec<StrategyResult>,
}

impl RunResult {
    pub fn strategy(&self, kind: StrategyKind) -> Option<&StrategyResult> {
        self.strategies.iter().find(|s| s.strategy.kind == kind)
    }
}

struct Outcome {
    auc: f64,
    cosine: f64,
    human_auc: Option<f64>,
    history: TrainingHistory,
}

fn chunked_forward(
    params: &Params,
    docs: &[&PreparedDoc],
    strategy: &StrategyConfig,
    with_human: bool,
) -> Result<Vec<ForwardOutput>> {
    let mut out = Vec::with_capacity(docs.len());
    for chunk in docs.chunks(SCORE_CHUNK) {
        let seqs: Vec<&[u32]> = chunk.iter().map(|d| d.tokens.ids.as_slice()).collect();
        let human: Vec<Option<&[f64]>> = if with_human {
            chunk.iter().map(|d| d.token_attention.as_deref()).collect()
        } else {
            Vec::new()
        };
        out.extend(forward_batch(params, &seqs, strategy.readout(), &human, None)?.0);
    }
    Ok(out)
}

/// Mean cosine similarity between human word attention and the model's
/// last-layer classifier attention moved to words, over documents with
/// human attention.
pub fn mean_test_cosine(outputs: &[ForwardOutput], docs: &[&PreparedDoc]) -> Result<f64> {
    let mut sims = Vec::new();
    for (o, d) in outputs.iter().zip(docs) {
        let Some(human) = &d.word_attention else {
            continue;
        };
        let last = o.trace.layers() - 1;
        let machine = token_to_word(&o.trace.head_average(last)?, &d.tokens.word_alignment)?;
        sims.push(cosine_similarity(human, &machine)?);
    }
    Ok(if sims.is_empty() {
        f64::NAN
    } else {
        sims.iter().sum::<f64>() / sims.len() as f64
    })
}

fn run_replicate(
    spec: &ExperimentSpec,
    docs: &[PreparedDoc],
    test: &[&PreparedDoc],
    pool: &[usize],
    r: usize,
) -> Result<Vec<Outcome>> {
    let seed = spec.replicate_seed(r);
    let pool_labels: Vec<Label> = pool.iter().map(|&i| docs[i].label).collect();
    let picked = subsample(&pool_labels, spec.size, spec.ratio, spec.minority, seed)?;
    let train: Vec<TrainItem> = picked.iter().map(|&k| docs[pool[k]].train_item()).collect();
    let test_ids: HashSet<&str> = test.iter().map(|d| d.id.as_str()).collect();
    if let Some(t) = train.iter().find(|t| test_ids.contains(t.id.as_str())) {
        return Err(Error::Config(format!("document {} is in both train and test", t.id)));
    }
    let test_labels: Vec<Label> = test.iter().map(|d| d.label).collect();
    let model = ModelConfig {
        seed,
        ..spec.model.clone()
    };
    let tcfg = TrainConfig {
        seed,
        ..spec.train.clone()
    };
    spec.strategies
        .iter()
        .map(|strategy| {
            let (params, history) = fit(&train, &model, strategy, &tcfg)?;
            let outputs = chunked_forward(&params, test, strategy, false)?;
            let scores: Vec<f64> = outputs.iter().map(|o| o.prediction.probability).collect();
            let human_auc = if strategy.kind == StrategyKind::An {
                let with = chunked_forward(&params, test, strategy, true)?;
                let s: Vec<f64> = with.iter().map(|o| o.prediction.probability).collect();
                Some(auc(&s, &test_labels)?)
            } else {
                None
            };
            Ok(Outcome {
                auc: auc(&scores, &test_labels)?,
                cosine: mean_test_cosine(&outputs, test)?,
                human_auc,
                history,
            })
        })
        .collect()
}

/// Train and score every strategy on `spec.replicates` subsamples of the
/// documents outside a fixed balanced test set. Replicate `r` uses seed
/// `base_seed + r` for its subsample, initialization and shuffling, shared by
/// all strategies so that their results pair up.
pub fn bootstrap_eval(spec: &ExperimentSpec, docs: &[PreparedDoc]) -> Result<RunResult> {
    spec.validate()?;
    let labels: Vec<Label> = docs.iter().map(|d| d.label).collect();
    let (test_idx, pool) = split_test(&labels, spec.test_size, spec.base_seed)?;
    let test: Vec<&PreparedDoc> = test_idx.iter().map(|&i| &docs[i]).collect();
    let outcomes: Vec<Result<Vec<Outcome>>> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| run_replicate(spec, docs, &test, &pool, r))
        .collect();
    let mut per_rep = Vec::with_capacity(spec.replicates);
    for (r, o) in outcomes.into_iter().enumerate() {
        per_rep.push(o.map_err(|e| Error::Replicate {
            replicate: r,
            source: Box::new(e),
        })?);
    }
    let baseline = spec
        .strategies
        .iter()
        .position(|s| s.kind == StrategyKind::Baseline);
    let column = |k: usize, f: &dyn Fn(&Outcome) -> f64| -> Vec<f64> {
        per_rep.iter().map(|o| f(&o[k])).collect()
    };
    let mut strategies = Vec::with_capacity(spec.strategies.len());
    for (k, strategy) in spec.strategies.iter().enumerate() {
        let aucs = column(k, &|o| o.auc);
        let (mean, std) = mean_std(&aucs);
        let significance = match baseline {
            Some(b) if b != k => Some(significance(&column(b, &|o| o.auc), &aucs)?),
            _ => None,
        };
        strategies.push(StrategyResult {
            strategy: *strategy,
            mean,
            std,
            significance,
            cosines: column(k, &|o| o.cosine),
            human_aucs: (strategy.kind == StrategyKind::An)
                .then(|| column(k, &|o| o.human_auc.unwrap_or(f64::NAN))),
            histories: per_rep.iter().map(|o| o[k].history.clone()).collect(),
            aucs,
        });
    }
    Ok(RunResult {
        size: spec.size,
        ratio: spec.ratio,
        seeds: (0..spec.replicates).map(|r| spec.replicate_seed(r)).collect(),
        strategies,
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Suffix for the AN rows scored with test-time human attention.
pub const WITH_HUMAN_SUFFIX: &str = "@human";

/// One row per replicate and strategy: `size,ratio,strategy,replicate,auc`.
/// AN additionally reports rows scored with test-time human attention.
pub fn write_replicate_csv<W: Write>(results: &[RunResult], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["size", "ratio", "strategy", "replicate", "auc"])
        .map_err(csv_err)?;
    for run in results {
        for s in &run.strategies {
            let mut series = vec![(s.name(), &s.aucs)];
            if let Some(h) = &s.human_aucs {
                series.push((format!("{}{WITH_HUMAN_SUFFIX}", s.name()), h));
            }
            for (name, aucs) in series {
                for (r, a) in aucs.iter().enumerate() {
                    csv.write_record([
                        run.size.to_string(),
                        run.ratio.to_string(),
                        name.clone(),
                        r.to_string(),
                        a.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
    }
    csv.flush()?;
    Ok(())
}

/// `size,ratio,strategy,mean,std,p_value,significant,cell,mean_cosine`.
pub fn write_summary_csv<W: Write>(results: &[RunResult], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "size",
        "ratio",
        "strategy",
        "mean",
        "std",
        "p_value",
        "significant",
        "cell",
        "mean_cosine",
    ])
    .map_err(csv_err)?;
    for run in results {
        for s in &run.strategies {
            let (cos, _) = mean_std(&s.cosines);
            csv.write_record([
                run.size.to_string(),
                run.ratio.to_string(),
                s.name(),
                s.mean.to_string(),
                s.std.to_string(),
                s.significance.map(|x| x.p_value.to_string()).unwrap_or_default(),
                s.significance
                    .map(|x| x.significant.to_string())
                    .unwrap_or_default(),
                s.cell(),
                cos.to_string(),
            ])
            .map_err(csv_err)?;
            if let Some(h) = &s.human_aucs {
                let (m, sd) = mean_std(h);
                csv.write_record([
                    run.size.to_string(),
                    run.ratio.to_string(),
                    format!("{}{WITH_HUMAN_SUFFIX}", s.name()),
                    m.to_string(),
                    sd.to_string(),
                    String::new(),
                    String::new(),
                    format_cell(m, sd),
                    String::new(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    csv.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthProfile {
    /// Buckets of up to 50, 100 and 200 words.
    Yelp,
    /// Short (up to 100 words) and long texts.
    Personality,
}

impl std::str::FromStr for LengthProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "yelp" => Ok(LengthProfile::Yelp),
            "personality" => Ok(LengthProfile::Personality),
            _ => Err(Error::Config(format!("unknown length profile {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub name: String,
    pub min_words: usize,
    /// Inclusive upper bound; `None` is unbounded.
    pub max_words: Option<usize>,
    pub ids: Vec<String>,
}

impl LengthBucket {
    pub fn contains(&self, words: usize) -> bool {
        words >= self.min_words && self.max_words.is_none_or(|m| words <= m)
    }
}

/// Assign documents to the profile's word-count buckets. Buckets may be
/// empty; documents outside every bucket are left out.
pub fn length_stratify(docs: &[AnnotatedDocument], profile: LengthProfile) -> Vec<LengthBucket> {
    let bounds: &[(&str, usize, Option<usize>)] = match profile {
        LengthProfile::Yelp => &[
            ("yelp-50", 1, Some(50)),
            ("yelp-100", 51, Some(100)),
            ("yelp-200", 101, Some(200)),
        ],
        LengthProfile::Personality => &[("short", 1, Some(100)), ("long", 101, None)],
    };
    let mut buckets: Vec<LengthBucket> = bounds
        .iter()
        .map(|&(name, min_words, max_words)| LengthBucket {
            name: name.into(),
            min_words,
            max_words,
            ids: Vec::new(),
        })
        .collect();
    for d in docs {
        if let Some(b) = buckets.iter_mut().find(|b| b.contains(d.word_count())) {
            b.ids.push(d.id.clone());
        }
    }
    buckets
}
