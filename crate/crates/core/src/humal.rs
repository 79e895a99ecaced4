//! Human–machine attention alignment strategies.
//!
//! * [`StrategyKind::Baseline`]: cross-entropy only.
//! * [`StrategyKind::Al`]: cross-entropy plus `alpha` times the cosine
//!   distance between human attention and the last layer's head-averaged
//!   classifier attention.
//! * [`StrategyKind::Ap`]: the same penalty on the first layer.
//! * [`StrategyKind::An`]: no penalty; the classifier reads a pooling of the
//!   states entering the last layer, weighted by machine attention plus
//!   `alpha` times human attention. Human attention is training-only, so
//!   inference pools with machine attention alone.
//!
//! Per-sequence terms are averaged over the batch, so `alpha` keeps its
//! meaning at any batch size.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::model::{ForwardOutput, HiddenStates, OutputGrad, Readout, CLASSES};

pub const DEFAULT_ALPHA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Baseline,
    Al,
    An,
    Ap,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Baseline,
        StrategyKind::Al,
        StrategyKind::An,
        StrategyKind::Ap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Baseline => "baseline",
            StrategyKind::Al => "al",
            StrategyKind::An => "an",
            StrategyKind::Ap => "ap",
        }
    }

    pub fn needs_human_attention(self) -> bool {
        self != StrategyKind::Baseline
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(StrategyKind::Baseline),
            "al" => Ok(StrategyKind::Al),
            "an" => Ok(StrategyKind::An),
            "ap" => Ok(StrategyKind::Ap),
            _ => Err(Error::Config(format!("unknown strategy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Add cosine similarity instead of cosine distance (ablation only).
    #[serde(default)]
    pub literal_sign: bool,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind, alpha: f64) -> Self {
        StrategyConfig {
            kind,
            alpha,
            literal_sign: false,
        }
    }

    pub fn baseline() -> Self {
        Self::new(StrategyKind::Baseline, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha {} must be >= 0", self.alpha)));
        }
        Ok(())
    }

    /// Effective coefficient: zero for the baseline.
    pub fn alpha(&self) -> f64 {
        match self.kind {
            StrategyKind::Baseline => 0.0,
            _ => self.alpha,
        }
    }

    /// Layer whose attention the penalty targets, if any.
    pub fn aligned_layer(&self, layers: usize) -> Option<usize> {
        match self.kind {
            StrategyKind::Al => Some(layers - 1),
            StrategyKind::Ap => Some(0),
            StrategyKind::Baseline | StrategyKind::An => None,
        }
    }

    /// Classifier readout. The pooled readout receives human attention only
    /// during training.
    pub fn readout(&self) -> Readout {
        match self.kind {
            StrategyKind::An => Readout::Pooled {
                alpha: self.alpha,
            },
            _ => Readout::Cls,
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            StrategyKind::Baseline => "baseline".into(),
            k if self.alpha == DEFAULT_ALPHA && !self.literal_sign => k.name().into(),
            k => format!(
                "{}(alpha={}{})",
                k.name(),
                self.alpha,
                if self.literal_sign { ",literal" } else { "" }
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub classification: f64,
    /// Alignment term before scaling by alpha.
    pub attention: f64,
}

impl LossBreakdown {
    pub fn is_additive(&self, alpha: f64, tol: f64) -> bool {
        (self.total - (self.classification + alpha * self.attention)).abs() <= tol
    }
}

fn cosine_parts(human: &[f64], machine: &[f64]) -> Result<(f64, f64, f64)> {
    if human.len() != machine.len() {
        return Err(Error::LengthMismatch {
            expected: human.len(),
            actual: machine.len(),
        });
    }
    let dot: f64 = human.iter().zip(machine).map(|(a, b)| a * b).sum();
    let nh = human.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nm = machine.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nh == 0.0 {
        return Err(Error::Config("human attention is the zero sentinel".into()));
    }
    Ok((dot, nh, nm))
}

/// Cosine similarity; zero (with a warning) when the machine vector is zero.
pub fn cosine_similarity(human: &[f64], machine: &[f64]) -> Result<f64> {
    let (dot, nh, nm) = cosine_parts(human, machine)?;
    if nm == 0.0 {
        log::warn!("zero-norm machine attention; similarity taken as 0");
        return Ok(0.0);
    }
    Ok(dot / (nh * nm))
}

/// `1 - cos(human, machine)`, in `[0, 2]`.
pub fn attention_alignment_loss(human: &[f64], machine: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(human, machine)?)
}

/// Cosine similarity and its gradient with respect to `machine`.
pub fn cosine_with_grad(human: &[f64], machine: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (dot, nh, nm) = cosine_parts(human, machine)?;
    if nm == 0.0 {
        log::warn!("zero-norm machine attention; similarity taken as 0");
        return Ok((0.0, vec![0.0; machine.len()]));
    }
    let cos = dot / (nh * nm);
    let grad = human
        .iter()
        .zip(machine)
        .map(|(h, m)| h / (nh * nm) - cos * m / (nm * nm))
        .collect();
    Ok((cos, grad))
}

/// `sum_i (machine_i + alpha * human_i) * states[i]` over the states entering
/// the last layer. `human = None` is the zero sentinel.
pub fn an_pool(
    hidden: &HiddenStates,
    machine_last: &[f64],
    human: Option<&[f64]>,
    alpha: f64,
) -> Result<Array1<f64>> {
    let src = hidden.pooling_source();
    let n = src.nrows();
    if machine_last.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: machine_last.len(),
        });
    }
    let mut w = machine_last.to_vec();
    if let Some(h) = human {
        if h.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: h.len(),
            });
        }
        for (wi, hi) in w.iter_mut().zip(h) {
            *wi += alpha * hi;
        }
    }
    Ok(ArrayView1::from(&w).dot(src))
}

/// Cross-entropy of the label under the logits, and its logit gradient.
pub fn cross_entropy(logits: &[f64; CLASSES], label: Label) -> (f64, [f64; CLASSES]) {
    let m = logits[0].max(logits[1]);
    let z = (logits[0] - m).exp() + (logits[1] - m).exp();
    let lse = m + z.ln();
    let y = label.index();
    let mut grad = [0.0; CLASSES];
    for c in 0..CLASSES {
        grad[c] = (logits[c] - lse).exp() - if c == y { 1.0 } else { 0.0 };
    }
    (lse - logits[y], grad)
}

/// One batch's view for loss computation.
pub struct BatchItem<'a> {
    pub output: &'a ForwardOutput,
    pub label: Label,
    /// Token-aligned human attention.
    pub human: Option<&'a [f64]>,
}

fn penalized_total(
    items: &[BatchItem<'_>],
    layer: usize,
    alpha: f64,
    literal_sign: bool,
) -> Result<(LossBreakdown, Vec<OutputGrad>)> {
    let n = items.len() as f64;
    let mut ce_sum = 0.0;
    let mut att_sum = 0.0;
    let mut grads = Vec::with_capacity(items.len());
    let mut missing = Vec::new();
    for (i, it) in items.iter().enumerate() {
        let (ce, dl) = cross_entropy(&it.output.prediction.logits, it.label);
        ce_sum += ce;
        let mut g = OutputGrad {
            logits: dl.map(|v| v / n),
            attention: Vec::new(),
        };
        match it.human {
            Some(h) if h.iter().any(|&v| v != 0.0) => {
                let machine = it.output.trace.head_average(layer)?;
                let (cos, dcos) = cosine_with_grad(h, &machine)?;
                let (term, sign) = if literal_sign { (cos, 1.0) } else { (1.0 - cos, -1.0) };
                att_sum += term;
                // alpha = 0 contributes nothing, so skip it to keep trajectories
                // identical to the unpenalized objective
                if alpha != 0.0 {
                    let scale = sign * alpha / n;
                    g.attention
                        .push((layer, dcos.into_iter().map(|v| v * scale).collect()));
                }
            }
            _ => missing.push(i),
        }
        grads.push(g);
    }
    if !missing.is_empty() {
        return Err(Error::MissingAttention(
            missing.into_iter().map(|i| format!("batch item {i}")).collect(),
        ));
    }
    let classification = ce_sum / n;
    let attention = att_sum / n;
    Ok((
        LossBreakdown {
            total: classification + alpha * attention,
            classification,
            attention,
        },
        grads,
    ))
}

fn classification_only(items: &[BatchItem<'_>]) -> (LossBreakdown, Vec<OutputGrad>) {
    let n = items.len() as f64;
    let mut ce_sum = 0.0;
    let grads = items
        .iter()
        .map(|it| {
            let (ce, dl) = cross_entropy(&it.output.prediction.logits, it.label);
            ce_sum += ce;
            OutputGrad {
                logits: dl.map(|v| v / n),
                attention: Vec::new(),
            }
        })
        .collect();
    let ce = ce_sum / n;
    (
        LossBreakdown {
            total: ce,
            classification: ce,
            attention: 0.0,
        },
        grads,
    )
}

/// Cross-entropy plus alpha times last-layer alignment, averaged per item.
pub fn al_total_loss(items: &[BatchItem<'_>], alpha: f64) -> Result<LossBreakdown> {
    let layers = layers_of(items)?;
    Ok(penalized_total(items, layers - 1, alpha, false)?.0)
}

/// Cross-entropy plus alpha times first-layer alignment, averaged per item.
pub fn ap_total_loss(items: &[BatchItem<'_>], alpha: f64) -> Result<LossBreakdown> {
    layers_of(items)?;
    Ok(penalized_total(items, 0, alpha, false)?.0)
}

fn layers_of(items: &[BatchItem<'_>]) -> Result<usize> {
    items
        .first()
        .map(|it| it.output.trace.layers())
        .ok_or(Error::EmptyTrainSet)
}

/// Loss and per-item output gradients of a strategy. For AN the forward
/// outputs must come from the pooled readout.
pub fn strategy_objective(
    strategy: &StrategyConfig,
    items: &[BatchItem<'_>],
) -> Result<(LossBreakdown, Vec<OutputGrad>)> {
    let layers = layers_of(items)?;
    match strategy.aligned_layer(layers) {
        Some(layer) => penalized_total(items, layer, strategy.alpha(), strategy.literal_sign),
        None => Ok(classification_only(items)),
    }
}

pub fn strategy_loss(strategy: &StrategyConfig, items: &[BatchItem<'_>]) -> Result<LossBreakdown> {
    Ok(strategy_objective(strategy, items)?.0)
}
