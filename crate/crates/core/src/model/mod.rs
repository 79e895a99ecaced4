//! Compact post-norm transformer encoder with a two-class head.
//!
//! The forward pass records the attention row of the classifier position
//! for every layer and head, plus all hidden states, so the alignment
//! strategies can read and supervise them.

mod backward;
mod checkpoint;
mod forward;
mod gradcheck;
mod optim;
mod params;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backward::{backward, OutputGrad};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use forward::{forward, forward_batch, ForwardCache, ForwardOutput, Readout};
pub use gradcheck::{central_difference, grad_check, relative_error, GradCheckReport};
pub use optim::{Adam, AdamConfig};
pub use params::{LayerIds, Layout, Params, TensorId, TensorSpec, Tensors};
pub use train::{
    evaluate, fit, fit_from, predict, EpochRecord, TrainConfig, TrainItem, TrainingHistory,
};

pub const CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub ff_width: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub embedding_std: f64,
    pub position_std: f64,
    /// Standard deviation of the classifier weights; zero starts every
    /// prediction at p = 0.5.
    pub head_std: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            heads: 4,
            width: 64,
            ff_width: 128,
            max_len: 128,
            vocab_size: 0,
            dropout: 0.0,
            embedding_std: 1.0,
            position_std: 0.1,
            head_std: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.heads == 0 {
            return bad("layers and heads must be at least 1".into());
        }
        if self.width == 0 || !self.width.is_multiple_of(self.heads) {
            return bad(format!(
                "width {} must be a positive multiple of heads {}",
                self.width, self.heads
            ));
        }
        if self.ff_width == 0 || self.max_len == 0 || self.vocab_size == 0 {
            return bad("ff_width, max_len and vocab_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub logits: [f64; CLASSES],
    /// Softmax probability of the positive class.
    pub probability: f64,
}

impl Prediction {
    pub fn from_logits(logits: [f64; CLASSES]) -> Prediction {
        let m = logits[0].max(logits[1]);
        let e0 = (logits[0] - m).exp();
        let e1 = (logits[1] - m).exp();
        Prediction {
            logits,
            probability: e1 / (e0 + e1),
        }
    }
}

/// Attention of the classifier position: `rows[layer][head][token]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub rows: Vec<Vec<Vec<f64>>>,
    pub seq_len: usize,
}

impl AttentionTrace {
    pub fn layers(&self) -> usize {
        self.rows.len()
    }

    /// Mean over heads of one layer's rows.
    pub fn head_average(&self, layer: usize) -> Result<Vec<f64>> {
        let heads = self.rows.get(layer).ok_or(Error::LayerOutOfRange {
            layer,
            layers: self.rows.len(),
        })?;
        let mut avg = vec![0.0; self.seq_len];
        for row in heads {
            for (a, v) in avg.iter_mut().zip(row) {
                *a += v;
            }
        }
        let h = heads.len() as f64;
        avg.iter_mut().for_each(|a| *a /= h);
        Ok(avg)
    }
}

/// Free-function form of [`AttentionTrace::head_average`].
pub fn head_average(trace: &AttentionTrace, layer: usize) -> Result<Vec<f64>> {
    trace.head_average(layer)
}

/// Token states: the embedding output and the output of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub embeddings: ndarray::Array2<f64>,
    pub layers: Vec<ndarray::Array2<f64>>,
}

impl HiddenStates {
    /// The states entering `layer`; the embeddings for layer 0.
    pub fn layer_input(&self, layer: usize) -> &ndarray::Array2<f64> {
        if layer == 0 {
            &self.embeddings
        } else {
            &self.layers[layer - 1]
        }
    }

    /// The states the pooled readout mixes: the input of the final layer.
    pub fn pooling_source(&self) -> &ndarray::Array2<f64> {
        self.layer_input(self.layers.len() - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_average_examples() {
        let trace = AttentionTrace {
            rows: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            seq_len: 2,
        };
        assert_eq!(trace.head_average(0).unwrap(), [0.5, 0.5]);
        assert!(matches!(
            trace.head_average(1),
            Err(Error::LayerOutOfRange { layer: 1, layers: 1 })
        ));
        let same = AttentionTrace {
            rows: vec![vec![vec![0.2, 0.3, 0.5]; 12]],
            seq_len: 3,
        };
        let avg = same.head_average(0).unwrap();
        for (a, b) in avg.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn twelve_heads_average_with_one_twelfth() {
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|h| {
                let mut r = vec![0.0; 12];
                r[h] = 1.0;
                r
            })
            .collect();
        let trace = AttentionTrace {
            rows: vec![rows],
            seq_len: 12,
        };
        for v in trace.head_average(0).unwrap() {
            assert!((v - 1.0 / 12.0).abs() < 1e-15);
        }
    }

    #[test]
    fn config_validation() {
        let ok = ModelConfig {
            vocab_size: 10,
            ..ModelConfig::default()
        };
        ok.validate().unwrap();
        let bad = ModelConfig {
            heads: 3,
            ..ok.clone()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig { layers: 0, ..ok };
        assert!(bad.validate().is_err());
    }
}
