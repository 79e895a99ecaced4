//! Flat parameter storage. Every tensor is a row-major 2-D slice of one
//! `Vec<f64>`, so the optimizer, the gradient checker and the checkpoint
//! format all work on plain vectors.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn size(&self) -> usize {
        self.rows * self.cols
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.size()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerIds {
    pub wq: TensorId,
    pub bq: TensorId,
    pub wk: TensorId,
    pub bk: TensorId,
    pub wv: TensorId,
    pub bv: TensorId,
    pub wo: TensorId,
    pub bo: TensorId,
    pub ln1_gamma: TensorId,
    pub ln1_beta: TensorId,
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
    pub ln2_gamma: TensorId,
    pub ln2_beta: TensorId,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub token_embedding: TensorId,
    pub position_embedding: TensorId,
    pub layers: Vec<LayerIds>,
    pub head_weight: TensorId,
    pub head_bias: TensorId,
    len: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Layout {
        let mut tensors = Vec::new();
        let mut len = 0;
        let mut add = |name: String, rows: usize, cols: usize| {
            tensors.push(TensorSpec {
                name,
                rows,
                cols,
                offset: len,
            });
            len += rows * cols;
            TensorId(tensors.len() - 1)
        };
        let d = cfg.width;
        let f = cfg.ff_width;
        let token_embedding = add("embeddings.token".into(), cfg.vocab_size, d);
        let position_embedding = add("embeddings.position".into(), cfg.max_len, d);
        let layers = (0..cfg.layers)
            .map(|l| {
                let mut t = |s: &str, r, c| add(format!("layer{l}.{s}"), r, c);
                LayerIds {
                    wq: t("attention.query.weight", d, d),
                    bq: t("attention.query.bias", 1, d),
                    wk: t("attention.key.weight", d, d),
                    bk: t("attention.key.bias", 1, d),
                    wv: t("attention.value.weight", d, d),
                    bv: t("attention.value.bias", 1, d),
                    wo: t("attention.output.weight", d, d),
                    bo: t("attention.output.bias", 1, d),
                    ln1_gamma: t("attention.norm.gamma", 1, d),
                    ln1_beta: t("attention.norm.beta", 1, d),
                    w1: t("ffn.inner.weight", d, f),
                    b1: t("ffn.inner.bias", 1, f),
                    w2: t("ffn.outer.weight", f, d),
                    b2: t("ffn.outer.bias", 1, d),
                    ln2_gamma: t("ffn.norm.gamma", 1, d),
                    ln2_beta: t("ffn.norm.beta", 1, d),
                }
            })
            .collect();
        let head_weight = add("classifier.weight".into(), d, super::CLASSES);
        let head_bias = add("classifier.bias".into(), 1, super::CLASSES);
        Layout {
            tensors,
            token_embedding,
            position_embedding,
            layers,
            head_weight,
            head_bias,
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn spec_index(&self, id: TensorId) -> usize {
        id.0
    }

    pub fn spec(&self, id: TensorId) -> &TensorSpec {
        &self.tensors[id.0]
    }
}

/// A flat buffer shaped by a [`Layout`]: model parameters or their gradients.
#[derive(Debug, Clone)]
pub struct Tensors {
    pub layout: std::sync::Arc<Layout>,
    pub data: Vec<f64>,
}

impl PartialEq for Tensors {
    fn eq(&self, other: &Self) -> bool {
        self.layout.tensors == other.layout.tensors && self.data == other.data
    }
}

impl Tensors {
    pub fn zeros(layout: std::sync::Arc<Layout>) -> Tensors {
        let data = vec![0.0; layout.len()];
        Tensors { layout, data }
    }

    pub fn mat(&self, id: TensorId) -> ArrayView2<'_, f64> {
        let s = self.layout.spec(id);
        ArrayView2::from_shape((s.rows, s.cols), &self.data[s.range()]).expect("layout shape")
    }

    pub fn mat_mut(&mut self, id: TensorId) -> ArrayViewMut2<'_, f64> {
        let s = self.layout.spec(id).clone();
        ArrayViewMut2::from_shape((s.rows, s.cols), &mut self.data[s.range()])
            .expect("layout shape")
    }

    pub fn vec(&self, id: TensorId) -> ArrayView1<'_, f64> {
        let s = self.layout.spec(id);
        ArrayView1::from(&self.data[s.range()])
    }

    pub fn vec_mut(&mut self, id: TensorId) -> ArrayViewMut1<'_, f64> {
        let r = self.layout.spec(id).range();
        ArrayViewMut1::from(&mut self.data[r])
    }

    /// Bit-level equality, distinguishing `0.0` from `-0.0`.
    pub fn bitwise_eq(&self, other: &Tensors) -> bool {
        self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Parameters together with the configuration that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub config: ModelConfig,
    pub tensors: Tensors,
}

impl Params {
    /// Random initialization from `config.seed`: embeddings and linear weights
    /// drawn from zero-mean normals, biases zero, layer-norm gains one, and
    /// classifier weights at `head_std`.
    pub fn init(config: &ModelConfig) -> Params {
        let layout = std::sync::Arc::new(Layout::new(config));
        let mut t = Tensors::zeros(layout.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut fill = |t: &mut Tensors, id: TensorId, std: f64| {
            let normal = Normal::new(0.0, std).expect("finite std");
            for v in t.mat_mut(id).iter_mut() {
                *v = normal.sample(&mut rng);
            }
        };
        fill(&mut t, layout.token_embedding, config.embedding_std);
        fill(&mut t, layout.position_embedding, config.position_std);
        let d = config.width as f64;
        let f = config.ff_width as f64;
        for l in &layout.layers {
            fill(&mut t, l.wq, d.powf(-0.5));
            fill(&mut t, l.wk, d.powf(-0.5));
            fill(&mut t, l.wv, d.powf(-0.5));
            fill(&mut t, l.wo, d.powf(-0.5));
            fill(&mut t, l.w1, d.powf(-0.5));
            fill(&mut t, l.w2, f.powf(-0.5));
            t.vec_mut(l.ln1_gamma).fill(1.0);
            t.vec_mut(l.ln2_gamma).fill(1.0);
        }
        if config.head_std > 0.0 {
            fill(&mut t, layout.head_weight, config.head_std);
        }
        Params {
            config: config.clone(),
            tensors: t,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.tensors.layout
    }

    pub fn len(&self) -> usize {
        self.tensors.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.data.is_empty()
    }

    pub fn zero_grads(&self) -> Tensors {
        Tensors::zeros(self.tensors.layout.clone())
    }
}
