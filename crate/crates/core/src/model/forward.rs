use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{AttentionTrace, HiddenStates, Params, Prediction, CLASSES};
use crate::error::{Error, Result};
use crate::tokenizer::TokenSequence;

pub(super) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// What the classification head reads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Readout {
    /// Final-layer state of the classifier position.
    Cls,
    /// `sum_i (a_i + alpha * h_i) * x_i` over the states `x` entering the last
    /// layer, with `a` the last layer's head-averaged classifier attention and
    /// `h` the human attention (zero when absent).
    Pooled { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub prediction: Prediction,
    pub trace: AttentionTrace,
    pub states: HiddenStates,
}

pub(super) struct LayerCache {
    pub input: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// `probs[doc][head]`, each `n x n`.
    pub probs: Vec<Vec<Array2<f64>>>,
    pub ctx: Array2<f64>,
    pub attn_mask: Option<Array2<f64>>,
    pub xhat1: Array2<f64>,
    pub rstd1: Array1<f64>,
    pub y1: Array2<f64>,
    pub f1: Array2<f64>,
    pub g: Array2<f64>,
    pub ffn_mask: Option<Array2<f64>>,
    pub xhat2: Array2<f64>,
    pub rstd2: Array1<f64>,
}

/// Intermediate values of a batch forward pass, consumed by [`super::backward`].
pub struct ForwardCache {
    pub(super) segments: Vec<Range<usize>>,
    pub(super) ids: Vec<u32>,
    pub(super) layers: Vec<LayerCache>,
    pub(super) readout: Readout,
    /// Classifier input per document, `batch x width`.
    pub(super) head_input: Array2<f64>,
    /// Pooling weights per document (pooled readout only).
    pub(super) pool_weights: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch_len(&self) -> usize {
        self.segments.len()
    }
}

/// Forward one token sequence without dropout.
pub fn forward(
    tokens: &TokenSequence,
    params: &Params,
    readout: Readout,
    human: Option<&[f64]>,
) -> Result<ForwardOutput> {
    let (mut out, _) = forward_batch(params, &[&tokens.ids], readout, &[human], None)?;
    Ok(out.pop().expect("one output"))
}

fn linear(x: &ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

fn layer_norm(
    x: &Array2<f64>,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        row *= *r;
    }
    let y = &xhat * &gamma + beta;
    (y, xhat, rstd)
}

pub(super) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(super) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
}

fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.random::<f64>() < p {
            0.0
        } else {
            keep
        }
    })
}

/// Forward a batch of sequences packed into one `tokens x width` matrix.
///
/// Position-wise layers run on the packed matrix; attention runs per
/// sequence, so no padding is involved. `human` supplies per-sequence
/// token-aligned human attention for the pooled readout and may be empty.
/// Dropout is applied only when `dropout_rng` is given.
pub fn forward_batch(
    params: &Params,
    seqs: &[&[u32]],
    readout: Readout,
    human: &[Option<&[f64]>],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Vec<ForwardOutput>, ForwardCache)> {
    let cfg = &params.config;
    let layout = params.layout();
    let t = &params.tensors;
    let d = cfg.width;
    let heads = cfg.heads;
    let dk = cfg.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();

    let mut segments = Vec::with_capacity(seqs.len());
    let mut ids = Vec::new();
    for s in seqs {
        if s.len() > cfg.max_len {
            return Err(Error::SequenceTooLong {
                len: s.len(),
                max: cfg.max_len,
            });
        }
        if s.is_empty() {
            return Err(Error::Config("empty token sequence".into()));
        }
        if let Some(&bad) = s.iter().find(|&&i| i as usize >= cfg.vocab_size) {
            return Err(Error::Config(format!(
                "token id {bad} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        segments.push(ids.len()..ids.len() + s.len());
        ids.extend_from_slice(s);
    }
    if let Readout::Pooled { .. } = readout {
        for (i, h) in human.iter().enumerate() {
            if let Some(h) = h {
                if h.len() != seqs[i].len() {
                    return Err(Error::LengthMismatch {
                        expected: seqs[i].len(),
                        actual: h.len(),
                    });
                }
            }
        }
    }
    let total = ids.len();

    let tok = t.mat(layout.token_embedding);
    let pos = t.mat(layout.position_embedding);
    let mut x = Array2::<f64>::zeros((total, d));
    for r in &segments {
        for (p, row) in r.clone().enumerate() {
            let mut xr = x.row_mut(row);
            xr.assign(&tok.row(ids[row] as usize));
            xr += &pos.row(p);
        }
    }
    let embeddings = x.clone();

    let p_drop = cfg.dropout;
    let mut caches = Vec::with_capacity(cfg.layers);
    for lid in &layout.layers {
        let xv = x.view();
        let q = linear(&xv, t.mat(lid.wq), t.vec(lid.bq));
        let k = linear(&xv, t.mat(lid.wk), t.vec(lid.bk));
        let v = linear(&xv, t.mat(lid.wv), t.vec(lid.bv));
        let mut ctx = Array2::<f64>::zeros((total, d));
        let mut probs = Vec::with_capacity(segments.len());
        for r in &segments {
            let mut per_head = Vec::with_capacity(heads);
            for h in 0..heads {
                let cols = h * dk..(h + 1) * dk;
                let qs = q.slice(s![r.clone(), cols.clone()]);
                let ks = k.slice(s![r.clone(), cols.clone()]);
                let vs = v.slice(s![r.clone(), cols.clone()]);
                let mut sc = qs.dot(&ks.t());
                sc *= scale;
                softmax_rows(&mut sc);
                ctx.slice_mut(s![r.clone(), cols]).assign(&sc.dot(&vs));
                per_head.push(sc);
            }
            probs.push(per_head);
        }
        let mut a = linear(&ctx.view(), t.mat(lid.wo), t.vec(lid.bo));
        let attn_mask = match (dropout_rng.as_deref_mut(), p_drop > 0.0) {
            (Some(rng), true) => {
                let m = dropout_mask(total, d, p_drop, rng);
                a *= &m;
                Some(m)
            }
            _ => None,
        };
        let r1 = &x + &a;
        let (y1, xhat1, rstd1) = layer_norm(&r1, t.vec(lid.ln1_gamma), t.vec(lid.ln1_beta));
        let f1 = linear(&y1.view(), t.mat(lid.w1), t.vec(lid.b1));
        let g = f1.mapv(gelu);
        let mut f2 = linear(&g.view(), t.mat(lid.w2), t.vec(lid.b2));
        let ffn_mask = match (dropout_rng.as_deref_mut(), p_drop > 0.0) {
            (Some(rng), true) => {
                let m = dropout_mask(total, d, p_drop, rng);
                f2 *= &m;
                Some(m)
            }
            _ => None,
        };
        let r2 = &y1 + &f2;
        let (out, xhat2, rstd2) = layer_norm(&r2, t.vec(lid.ln2_gamma), t.vec(lid.ln2_beta));
        caches.push(LayerCache {
            input: std::mem::replace(&mut x, out),
            q,
            k,
            v,
            probs,
            ctx,
            attn_mask,
            xhat1,
            rstd1,
            y1,
            f1,
            g,
            ffn_mask,
            xhat2,
            rstd2,
        });
    }

    let last = caches.last().expect("at least one layer");
    let mut head_input = Array2::<f64>::zeros((segments.len(), d));
    let mut pool_weights = Vec::new();
    for (b, r) in segments.iter().enumerate() {
        match readout {
            Readout::Cls => head_input.row_mut(b).assign(&x.row(r.start)),
            Readout::Pooled { alpha } => {
                let n = r.len();
                let mut w = vec![0.0; n];
                for p in &last.probs[b] {
                    for (wi, pi) in w.iter_mut().zip(p.row(0)) {
                        *wi += pi;
                    }
                }
                w.iter_mut().for_each(|wi| *wi /= heads as f64);
                if let Some(Some(hv)) = human.get(b) {
                    for (wi, hi) in w.iter_mut().zip(hv.iter()) {
                        *wi += alpha * hi;
                    }
                }
                let src = last.input.slice(s![r.clone(), ..]);
                head_input
                    .row_mut(b)
                    .assign(&ArrayView1::from(&w).dot(&src));
                pool_weights.push(w);
            }
        }
    }
    let logits = linear(
        &head_input.view(),
        t.mat(layout.head_weight),
        t.vec(layout.head_bias),
    );

    let mut outputs = Vec::with_capacity(segments.len());
    for (b, r) in segments.iter().enumerate() {
        let mut l = [0.0; CLASSES];
        for (c, v) in l.iter_mut().zip(logits.row(b)) {
            *c = *v;
        }
        let rows = caches
            .iter()
            .map(|c| c.probs[b].iter().map(|p| p.row(0).to_vec()).collect())
            .collect();
        let states = HiddenStates {
            embeddings: embeddings.slice(s![r.clone(), ..]).to_owned(),
            layers: caches
                .iter()
                .skip(1)
                .map(|c| c.input.slice(s![r.clone(), ..]).to_owned())
                .chain(std::iter::once(x.slice(s![r.clone(), ..]).to_owned()))
                .collect(),
        };
        outputs.push(ForwardOutput {
            prediction: Prediction::from_logits(l),
            trace: AttentionTrace {
                rows,
                seq_len: r.len(),
            },
            states,
        });
    }
    Ok((
        outputs,
        ForwardCache {
            segments,
            ids,
            layers: caches,
            readout,
            head_input,
            pool_weights,
        },
    ))
}
