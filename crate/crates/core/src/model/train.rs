use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamConfig};
use super::{backward, forward_batch, ForwardOutput, ModelConfig, Params};
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::experiments::auc;
use crate::humal::{strategy_objective, BatchItem, LossBreakdown, StrategyConfig};

const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Start the classifier bias at the log class frequencies of the
    /// training set (fresh initializations only).
    pub prior_bias: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            epochs: 10,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            prior_bias: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be >= 1".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// A tokenized, labeled training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub id: String,
    pub ids: Vec<u32>,
    pub label: Label,
    /// Human attention over the token sequence (zero at special tokens).
    pub human: Option<Vec<f64>>,
}

impl TrainItem {
    fn has_attention(&self) -> bool {
        self.human
            .as_ref()
            .is_some_and(|h| h.iter().any(|&v| v != 0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub ce_loss: f64,
    pub attn_loss: f64,
    pub train_auc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub alpha: f64,
    /// Full training-set losses after each epoch.
    pub epochs: Vec<EpochRecord>,
    /// Mini-batch objective at every optimizer step.
    pub step_losses: Vec<f64>,
}

impl TrainingHistory {
    /// CSV with columns `epoch,total_loss,ce_loss,attn_loss,train_auc`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        csv.write_record(["epoch", "total_loss", "ce_loss", "attn_loss", "train_auc"])
            .map_err(err)?;
        for r in &self.epochs {
            csv.write_record([
                r.epoch.to_string(),
                r.total_loss.to_string(),
                r.ce_loss.to_string(),
                r.attn_loss.to_string(),
                r.train_auc.map(|a| a.to_string()).unwrap_or_default(),
            ])
            .map_err(err)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn bitwise_eq(&self, other: &TrainingHistory) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let rows = |h: &TrainingHistory| {
            h.epochs
                .iter()
                .map(|r| {
                    (
                        r.total_loss.to_bits(),
                        r.ce_loss.to_bits(),
                        r.attn_loss.to_bits(),
                        r.train_auc.map(f64::to_bits),
                    )
                })
                .collect::<Vec<_>>()
        };
        bits(&self.step_losses) == bits(&other.step_losses) && rows(self) == rows(other)
    }
}

fn check_items(items: &[TrainItem], strategy: &StrategyConfig) -> Result<()> {
    if items.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if strategy.kind.needs_human_attention() {
        let missing: Vec<String> = items
            .iter()
            .filter(|it| !it.has_attention())
            .map(|it| it.id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingAttention(missing));
        }
    }
    for it in items {
        if let Some(h) = &it.human {
            if h.len() != it.ids.len() {
                return Err(Error::Validation {
                    doc_id: it.id.clone(),
                    message: format!(
                        "human attention has {} entries for {} tokens",
                        h.len(),
                        it.ids.len()
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Forward a batch with the strategy's training readout and compute its
/// objective and output gradients.
fn batch_objective(
    params: &Params,
    batch: &[&TrainItem],
    strategy: &StrategyConfig,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<(LossBreakdown, Vec<super::OutputGrad>, super::ForwardCache)> {
    let seqs: Vec<&[u32]> = batch.iter().map(|it| it.ids.as_slice()).collect();
    let human: Vec<Option<&[f64]>> = batch.iter().map(|it| it.human.as_deref()).collect();
    let (outputs, cache) = forward_batch(params, &seqs, strategy.readout(), &human, dropout)?;
    let items: Vec<BatchItem<'_>> = outputs
        .iter()
        .zip(batch)
        .map(|(o, it)| BatchItem {
            output: o,
            label: it.label,
            human: it.human.as_deref(),
        })
        .collect();
    let (loss, grads) = strategy_objective(strategy, &items)?;
    Ok((loss, grads, cache))
}

/// Loss and its parameter gradient on one batch, without dropout.
pub(super) fn loss_and_grad(
    params: &Params,
    batch: &[&TrainItem],
    strategy: &StrategyConfig,
) -> Result<(LossBreakdown, super::Tensors)> {
    let (loss, grads, cache) = batch_objective(params, batch, strategy, None)?;
    Ok((loss, backward(params, &cache, &grads)))
}

/// Training objective over a whole item set, chunk-averaged.
pub fn evaluate(
    params: &Params,
    items: &[TrainItem],
    strategy: &StrategyConfig,
) -> Result<LossBreakdown> {
    check_items(items, strategy)?;
    let n = items.len() as f64;
    let mut acc = LossBreakdown::default();
    for chunk in items.chunks(EVAL_CHUNK) {
        let refs: Vec<&TrainItem> = chunk.iter().collect();
        let (l, _, _) = batch_objective(params, &refs, strategy, None)?;
        let w = chunk.len() as f64 / n;
        acc.total += w * l.total;
        acc.classification += w * l.classification;
        acc.attention += w * l.attention;
    }
    Ok(acc)
}

/// Inference forward passes. Human attention is never supplied here.
pub fn predict(
    params: &Params,
    seqs: &[&[u32]],
    strategy: &StrategyConfig,
) -> Result<Vec<ForwardOutput>> {
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(EVAL_CHUNK) {
        let (o, _) = forward_batch(params, chunk, strategy.readout(), &[], None)?;
        out.extend(o);
    }
    Ok(out)
}

fn train_auc(params: &Params, items: &[TrainItem], strategy: &StrategyConfig) -> Result<Option<f64>> {
    let seqs: Vec<&[u32]> = items.iter().map(|it| it.ids.as_slice()).collect();
    let scores: Vec<f64> = predict(params, &seqs, strategy)?
        .iter()
        .map(|o| o.prediction.probability)
        .collect();
    let labels: Vec<Label> = items.iter().map(|it| it.label).collect();
    match auc(&scores, &labels) {
        Ok(a) => Ok(Some(a)),
        Err(Error::SingleClass { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Train from the initialization seeded by `model.seed`.
pub fn fit(
    items: &[TrainItem],
    model: &ModelConfig,
    strategy: &StrategyConfig,
    tcfg: &TrainConfig,
) -> Result<(Params, TrainingHistory)> {
    model.validate()?;
    let mut params = Params::init(model);
    if tcfg.prior_bias && !items.is_empty() {
        let pos = items.iter().filter(|it| it.label == Label::Positive).count() as f64;
        let n = items.len() as f64;
        // Half a count on each side keeps single-class sets finite.
        let log_prior = [((n - pos + 0.5) / (n + 1.0)).ln(), ((pos + 0.5) / (n + 1.0)).ln()];
        let head_bias = params.layout().head_bias;
        params
            .tensors
            .vec_mut(head_bias)
            .iter_mut()
            .zip(log_prior)
            .for_each(|(b, p)| *b = p);
    }
    fit_from(params, items, strategy, tcfg)
}

/// Mini-batch Adam on the strategy's objective. Shuffling uses one seeded
/// stream and dropout another, so the run is a pure function of its inputs.
pub fn fit_from(
    mut params: Params,
    items: &[TrainItem],
    strategy: &StrategyConfig,
    tcfg: &TrainConfig,
) -> Result<(Params, TrainingHistory)> {
    tcfg.validate()?;
    strategy.validate()?;
    check_items(items, strategy)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    dropout_rng.set_stream(1);
    let use_dropout = params.config.dropout > 0.0;
    let mut adam = Adam::new(tcfg.adam(), params.len());
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut history = TrainingHistory {
        alpha: strategy.alpha(),
        ..TrainingHistory::default()
    };
    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for idx in order.chunks(tcfg.batch_size) {
            let batch: Vec<&TrainItem> = idx.iter().map(|&i| &items[i]).collect();
            let (loss, grads, cache) = batch_objective(
                &params,
                &batch,
                strategy,
                use_dropout.then_some(&mut dropout_rng),
            )?;
            let g = backward(&params, &cache, &grads);
            adam.step(&mut params.tensors.data, &g.data);
            history.step_losses.push(loss.total);
        }
        let loss = evaluate(&params, items, strategy)?;
        history.epochs.push(EpochRecord {
            epoch,
            total_loss: loss.total,
            ce_loss: loss.classification,
            attn_loss: loss.attention,
            train_auc: train_auc(&params, items, strategy)?,
        });
    }
    Ok((params, history))
}
