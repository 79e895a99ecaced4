//! Batch subcommands. Each writes its artifacts under the run's output
//! directory, overwriting earlier runs with identical bytes for identical
//! inputs.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use serde::Serialize;

use humal_core::analysis::{
    binarize, cosine_table, loss_report, positional_profile, token_to_word, write_cosine_csv,
    MONOTONE_TOLERANCE,
};
use humal_core::corpus::{
    filter_sparse, generate_synthetic, read_dataset, resolve_labels, write_dataset, write_exclusion_log,
    AnnotatedDocument, ConfusionReport, Exclusion, SyntheticSpec,
};
use humal_core::experiments::{
    auc, bootstrap_eval, label_cost_curve, mean_test_cosine, prepare_documents, split_test,
    write_curve_csv, write_replicate_csv, write_summary_csv, GapSummary, PreparedDoc,
};
use humal_core::humal::{StrategyConfig, StrategyKind};
use humal_core::model::{fit, load_checkpoint, predict, save_checkpoint, ModelConfig, Params};
use humal_core::tokenizer::{train_vocab, SubwordVocab};

use crate::config::RunConfigFile;

/// Loaded, filtered and label-resolved corpus with its vocabulary.
pub struct Corpus {
    pub docs: Vec<AnnotatedDocument>,
    pub excluded: Vec<Exclusion>,
    pub confusion: ConfusionReport,
    pub vocab: SubwordVocab,
    /// True when the vocabulary was trained here rather than loaded.
    pub trained_vocab: bool,
}

impl Corpus {
    pub fn load(cfg: &RunConfigFile) -> Result<Self> {
        let raw = read_dataset(&cfg.dataset)
            .with_context(|| format!("loading {}", cfg.dataset.display()))?;
        let total = raw.len();
        let (kept, mut excluded) = filter_sparse(raw, cfg.corpus.min_highlight_fraction);
        let res = resolve_labels(kept, cfg.corpus.resolution);
        excluded.extend(res.excluded);
        info!(
            "{} of {total} documents kept, {} excluded",
            res.docs.len(),
            excluded.len()
        );
        if res.docs.is_empty() {
            bail!("no documents left after filtering {}", cfg.dataset.display());
        }
        let (vocab, trained_vocab) = match &cfg.vocab {
            Some(p) => (
                SubwordVocab::load(p).with_context(|| format!("loading vocab {}", p.display()))?,
                false,
            ),
            None => {
                let words: Vec<&str> = res
                    .docs
                    .iter()
                    .flat_map(|d| d.words.iter().map(String::as_str))
                    .collect();
                let chars: BTreeSet<char> = words.iter().flat_map(|w| w.chars()).collect();
                let target = chars.len() + cfg.corpus.vocab_merges;
                (train_vocab(&words, target, cfg.corpus.vocab_seed)?, true)
            }
        };
        Ok(Corpus {
            docs: res.docs,
            excluded,
            confusion: res.confusion,
            vocab,
            trained_vocab,
        })
    }

    /// Model settings with the vocabulary size filled in.
    pub fn model_config(&self, cfg: &RunConfigFile) -> ModelConfig {
        if cfg.model.vocab_size != 0 && cfg.model.vocab_size != self.vocab.len() {
            warn!(
                "model.vocab_size {} replaced by the vocabulary's {}",
                cfg.model.vocab_size,
                self.vocab.len()
            );
        }
        ModelConfig {
            vocab_size: self.vocab.len(),
            ..cfg.model.clone()
        }
    }

    pub fn prepare(&self, max_len: usize) -> Result<Vec<PreparedDoc>> {
        Ok(prepare_documents(&self.docs, &self.vocab, max_len)?)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn out_dir(cfg: &RunConfigFile) -> Result<&Path> {
    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    Ok(&cfg.output_dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn prepare(cfg: &RunConfigFile) -> Result<()> {
    let corpus = Corpus::load(cfg)?;
    let dir = out_dir(cfg)?;
    write_dataset(create(&dir.join("processed.jsonl"))?, &corpus.docs)?;
    write_exclusion_log(create(&dir.join("exclusions.csv"))?, &corpus.excluded)?;
    let mut csv = csv::Writer::from_writer(create(&dir.join("confusion.csv"))?);
    csv.write_record(["self_report", "majority_0", "majority_1"])?;
    for (row, counts) in corpus.confusion.counts.iter().enumerate() {
        csv.write_record([row.to_string(), counts[0].to_string(), counts[1].to_string()])?;
    }
    csv.flush()?;
    if corpus.trained_vocab {
        corpus.vocab.save(&dir.join("vocab.txt"))?;
    }
    let prepared = corpus.prepare(cfg.model.max_len)?;
    let truncated = prepared.iter().filter(|d| d.tokens.word_count() < d.word_count).count();
    if truncated > 0 {
        warn!("{truncated} documents exceed {} tokens and are truncated", cfg.model.max_len);
    }
    info!(
        "agreement between self-report and majority: {} of {}",
        corpus.confusion.agreement_count,
        corpus.confusion.total()
    );
    Ok(())
}

/// Pick `name` among the configured strategies, or the first one.
fn select_strategy(cfg: &RunConfigFile, name: Option<&str>) -> Result<StrategyConfig> {
    let Some(name) = name else {
        return Ok(cfg.strategies[0]);
    };
    if let Some(s) = cfg.strategies.iter().find(|s| s.label() == name) {
        return Ok(*s);
    }
    let kind: StrategyKind = name.parse()?;
    Ok(cfg
        .strategies
        .iter()
        .find(|s| s.kind == kind)
        .copied()
        .unwrap_or_else(|| StrategyConfig::new(kind, humal_core::humal::DEFAULT_ALPHA)))
}

/// Held-out balanced test indices and the remaining training indices.
fn holdout(cfg: &RunConfigFile, prepared: &[PreparedDoc]) -> Result<(Vec<usize>, Vec<usize>)> {
    if cfg.experiment.test_size == 0 {
        return Ok((Vec::new(), (0..prepared.len()).collect()));
    }
    let labels: Vec<_> = prepared.iter().map(|d| d.label).collect();
    Ok(split_test(&labels, cfg.experiment.test_size, cfg.experiment.base_seed)?)
}

#[derive(Serialize)]
struct TrainMetrics {
    strategy: String,
    train_documents: usize,
    test_documents: usize,
    test_auc: Option<f64>,
    test_cosine: Option<f64>,
}

pub fn train(cfg: &RunConfigFile, strategy: Option<&str>) -> Result<()> {
    let corpus = Corpus::load(cfg)?;
    let model = corpus.model_config(cfg);
    let strategy = select_strategy(cfg, strategy)?;
    let prepared = corpus.prepare(model.max_len)?;
    let (test, train) = holdout(cfg, &prepared)?;
    let items: Vec<_> = train.iter().map(|&i| prepared[i].train_item()).collect();
    info!("training {} on {} documents", strategy.label(), items.len());
    let (params, history) = fit(&items, &model, &strategy, &cfg.train)?;

    let dir = out_dir(cfg)?;
    save_checkpoint(&params, &dir.join("checkpoint.json"))?;
    history.write_csv(create(&dir.join("history.csv"))?)?;
    loss_report(&history, MONOTONE_TOLERANCE)?.write_csv(create(&dir.join("loss_report.csv"))?)?;

    let (test_auc, test_cosine) = if test.is_empty() {
        (None, None)
    } else {
        let docs: Vec<&PreparedDoc> = test.iter().map(|&i| &prepared[i]).collect();
        let seqs: Vec<&[u32]> = docs.iter().map(|d| d.tokens.ids.as_slice()).collect();
        let outputs = predict(&params, &seqs, &strategy)?;
        let scores: Vec<f64> = outputs.iter().map(|o| o.prediction.probability).collect();
        let labels: Vec<_> = docs.iter().map(|d| d.label).collect();
        (
            Some(auc(&scores, &labels)?),
            Some(mean_test_cosine(&outputs, &docs)?).filter(|c| c.is_finite()),
        )
    };
    write_json(
        &dir.join("metrics.json"),
        &TrainMetrics {
            strategy: strategy.label(),
            train_documents: items.len(),
            test_documents: test.len(),
            test_auc,
            test_cosine,
        },
    )
}

pub fn sweep(cfg: &RunConfigFile) -> Result<()> {
    let corpus = Corpus::load(cfg)?;
    let model = corpus.model_config(cfg);
    let prepared = corpus.prepare(model.max_len)?;
    let mut runs = Vec::new();
    for &size in &cfg.experiment.sizes {
        for &ratio in &cfg.experiment.ratios {
            info!("size {size}, ratio {ratio}");
            let spec = cfg.experiment_spec(size, ratio, &model);
            runs.push(bootstrap_eval(&spec, &prepared).with_context(|| format!("size {size}, ratio {ratio}"))?);
        }
    }
    let dir = out_dir(cfg)?;
    write_replicate_csv(&runs, create(&dir.join("replicates.csv"))?)?;
    write_summary_csv(&runs, create(&dir.join("summary.csv"))?)?;
    Ok(())
}

fn write_gaps(path: &Path, gaps: &[GapSummary]) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut csv = csv::Writer::from_writer(create(path)?);
    csv.write_record([
        "ratio",
        "strategy",
        "target_auc",
        "baseline_size",
        "variant_size",
        "labels_saved",
    ])?;
    for g in gaps {
        csv.write_record([
            g.ratio.to_string(),
            g.strategy.clone(),
            g.target_auc.to_string(),
            opt(g.baseline_size),
            opt(g.variant_size),
            opt(g.labels_saved),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn curve(cfg: &RunConfigFile) -> Result<()> {
    let corpus = Corpus::load(cfg)?;
    let model = corpus.model_config(cfg);
    let prepared = corpus.prepare(model.max_len)?;
    let base = cfg.experiment_spec(cfg.curve.sizes[0], cfg.curve.ratios[0], &model);
    let result = label_cost_curve(&base, &prepared, &cfg.curve.sizes, &cfg.curve.ratios)?;
    let dir = out_dir(cfg)?;
    write_curve_csv(&result.curves, create(&dir.join("curve.csv"))?)?;
    write_gaps(&dir.join("gaps.csv"), &result.gaps)?;
    write_replicate_csv(&result.runs, create(&dir.join("curve_replicates.csv"))?)?;
    Ok(())
}

/// `KIND=PATH`, e.g. `al=runs/al/checkpoint.json`.
pub fn parse_checkpoint_arg(arg: &str) -> Result<(StrategyKind, PathBuf)> {
    let (kind, path) = arg
        .split_once('=')
        .ok_or_else(|| anyhow!("expected KIND=PATH, got {arg:?}"))?;
    Ok((kind.parse()?, PathBuf::from(path)))
}

#[derive(Serialize)]
struct FractionRow {
    source: String,
    mean_fraction: f64,
    documents: usize,
}

pub fn analyze(cfg: &RunConfigFile, checkpoints: &[(StrategyKind, PathBuf)]) -> Result<()> {
    if checkpoints.is_empty() {
        bail!("analyze needs at least one --checkpoint KIND=PATH");
    }
    let corpus = Corpus::load(cfg)?;
    let prepared = corpus.prepare(cfg.model.max_len)?;
    let (test, _) = holdout(cfg, &prepared)?;
    let pool: Vec<usize> = if test.is_empty() {
        (0..prepared.len()).collect()
    } else {
        test
    };
    let docs: Vec<&PreparedDoc> = pool
        .iter()
        .map(|&i| &prepared[i])
        .filter(|d| d.word_attention.is_some())
        .collect();
    if docs.is_empty() {
        bail!("no held-out document carries human attention");
    }
    let human: Vec<Vec<f64>> = docs.iter().map(|d| d.word_attention.clone().unwrap()).collect();
    let rule = cfg.analysis.rule;
    let bins = cfg.analysis.bins;

    let mut sources = vec![("human".to_string(), human.clone())];
    let mut models = Vec::new();
    for (kind, path) in checkpoints {
        let params: Params = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
        if params.config.vocab_size != corpus.vocab.len() {
            bail!(
                "{} was trained with {} vocabulary entries, the corpus vocabulary has {}",
                path.display(),
                params.config.vocab_size,
                corpus.vocab.len()
            );
        }
        if params.config.max_len < cfg.model.max_len {
            bail!("{} accepts at most {} tokens", path.display(), params.config.max_len);
        }
        let strategy = select_strategy(cfg, Some(kind.name()))?;
        let seqs: Vec<&[u32]> = docs.iter().map(|d| d.tokens.ids.as_slice()).collect();
        let outputs = predict(&params, &seqs, &strategy)?;
        let machine = outputs
            .iter()
            .zip(&docs)
            .map(|(o, d)| {
                let last = o.trace.layers() - 1;
                Ok(token_to_word(&o.trace.head_average(last)?, &d.tokens.word_alignment)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let name = strategy.label();
        models.push((name.clone(), machine.clone()));
        sources.push((name, machine));
    }

    let dir = out_dir(cfg)?;
    write_cosine_csv(&cosine_table(&human, &models)?, create(&dir.join("cosine.csv"))?)?;
    let mut fractions = Vec::new();
    for (name, vectors) in &sources {
        let masks: Vec<_> = vectors.iter().map(|v| binarize(v, rule)).collect();
        fractions.push(FractionRow {
            source: name.clone(),
            mean_fraction: masks.iter().map(|m| m.fraction).sum::<f64>() / masks.len() as f64,
            documents: masks.len(),
        });
        let bits: Vec<Vec<bool>> = masks.into_iter().map(|m| m.mask).collect();
        let profile = positional_profile(&bits, bins, name)?;
        profile.write_csv(create(&dir.join(format!("profile_{}.csv", file_stem(name))))?)?;
    }
    let mut csv = csv::Writer::from_writer(create(&dir.join("high_attention.csv"))?);
    for row in &fractions {
        csv.serialize(row)?;
    }
    csv.flush()?;
    Ok(())
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

pub fn synth(spec_path: Option<&Path>, documents: Option<usize>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut spec = match spec_path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(n) = documents {
        spec.documents = n;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let docs = generate_synthetic(&spec)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_dataset(create(out)?, &docs)?;
    info!("wrote {} documents to {}", docs.len(), out.display());
    Ok(())
}
