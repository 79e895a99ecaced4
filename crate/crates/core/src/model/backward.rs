use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use super::forward::{gelu_grad, ForwardCache, Readout};
use super::{Params, Tensors, CLASSES};

/// Loss gradient with respect to one sequence's forward outputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputGrad {
    pub logits: [f64; CLASSES],
    /// `(layer, d loss / d head-averaged classifier attention)` pairs.
    pub attention: Vec<(usize, Vec<f64>)>,
}

fn ln_backward(
    dy: &Array2<f64>,
    xhat: &Array2<f64>,
    rstd: &Array1<f64>,
    gamma: ArrayView1<f64>,
    grads: &mut Tensors,
    ids: (super::TensorId, super::TensorId),
) -> Array2<f64> {
    let mut dg = grads.vec_mut(ids.0);
    dg += &(dy * xhat).sum_axis(Axis(0));
    let mut db = grads.vec_mut(ids.1);
    db += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * &gamma;
    for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(xhat.rows()).zip(rstd) {
        let sum = row.sum();
        let dot = row.dot(&xh);
        row.zip_mut_with(&xh, |g, &x| *g = r / d * (d * *g - sum - x * dot));
    }
    dx
}

/// Gradients of the loss with respect to every parameter, given its
/// gradients with respect to the batch outputs.
pub fn backward(params: &Params, cache: &ForwardCache, out_grads: &[OutputGrad]) -> Tensors {
    let cfg = &params.config;
    let layout = params.layout();
    let t = &params.tensors;
    let mut grads = params.zero_grads();
    let d = cfg.width;
    let heads = cfg.heads;
    let dk = cfg.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let batch = cache.segments.len();
    let total = cache.ids.len();
    assert_eq!(out_grads.len(), batch, "one output gradient per sequence");

    let mut dlogits = Array2::<f64>::zeros((batch, CLASSES));
    for (b, g) in out_grads.iter().enumerate() {
        for c in 0..CLASSES {
            dlogits[[b, c]] = g.logits[c];
        }
    }
    let mut gw = grads.mat_mut(layout.head_weight);
    gw += &cache.head_input.t().dot(&dlogits);
    let mut gb = grads.vec_mut(layout.head_bias);
    gb += &dlogits.sum_axis(Axis(0));
    let dz = dlogits.dot(&t.mat(layout.head_weight).t());

    // attention gradients per layer and sequence
    let mut extra: Vec<Vec<Option<Vec<f64>>>> = vec![vec![None; batch]; cfg.layers];
    let mut add_extra = |layer: usize, b: usize, g: &[f64]| {
        let slot = extra[layer][b].get_or_insert_with(|| vec![0.0; g.len()]);
        for (s, v) in slot.iter_mut().zip(g) {
            *s += v;
        }
    };
    for (b, g) in out_grads.iter().enumerate() {
        for (layer, v) in &g.attention {
            add_extra(*layer, b, v);
        }
    }

    let last = cfg.layers - 1;
    let mut dx = Array2::<f64>::zeros((total, d));
    let mut d_last_input = None;
    match cache.readout {
        Readout::Cls => {
            for (b, r) in cache.segments.iter().enumerate() {
                let mut row = dx.row_mut(r.start);
                row += &dz.row(b);
            }
        }
        Readout::Pooled { .. } => {
            let src = &cache.layers[last].input;
            let mut dsrc = Array2::<f64>::zeros((total, d));
            for (b, r) in cache.segments.iter().enumerate() {
                let w = &cache.pool_weights[b];
                let dzb = dz.row(b);
                let mut dm = vec![0.0; r.len()];
                for (i, row) in r.clone().enumerate() {
                    dsrc.row_mut(row).scaled_add(w[i], &dzb);
                    dm[i] = dzb.dot(&src.row(row));
                }
                add_extra(last, b, &dm);
            }
            d_last_input = Some(dsrc);
        }
    }

    for (l, (lc, lid)) in cache.layers.iter().zip(&layout.layers).enumerate().rev() {
        let dr2 = ln_backward(
            &dx,
            &lc.xhat2,
            &lc.rstd2,
            t.vec(lid.ln2_gamma),
            &mut grads,
            (lid.ln2_gamma, lid.ln2_beta),
        );
        let mut df2 = dr2.clone();
        if let Some(m) = &lc.ffn_mask {
            df2 *= m;
        }
        let mut g = grads.mat_mut(lid.w2);
        g += &lc.g.t().dot(&df2);
        let mut g = grads.vec_mut(lid.b2);
        g += &df2.sum_axis(Axis(0));
        let mut df1 = df2.dot(&t.mat(lid.w2).t());
        df1.zip_mut_with(&lc.f1, |g, &x| *g *= gelu_grad(x));
        let mut g = grads.mat_mut(lid.w1);
        g += &lc.y1.t().dot(&df1);
        let mut g = grads.vec_mut(lid.b1);
        g += &df1.sum_axis(Axis(0));
        let dy1 = dr2 + df1.dot(&t.mat(lid.w1).t());

        let dr1 = ln_backward(
            &dy1,
            &lc.xhat1,
            &lc.rstd1,
            t.vec(lid.ln1_gamma),
            &mut grads,
            (lid.ln1_gamma, lid.ln1_beta),
        );
        let mut da = dr1.clone();
        if let Some(m) = &lc.attn_mask {
            da *= m;
        }
        let mut g = grads.mat_mut(lid.wo);
        g += &lc.ctx.t().dot(&da);
        let mut g = grads.vec_mut(lid.bo);
        g += &da.sum_axis(Axis(0));
        let dctx = da.dot(&t.mat(lid.wo).t());

        let mut dq = Array2::<f64>::zeros((total, d));
        let mut dkm = Array2::<f64>::zeros((total, d));
        let mut dv = Array2::<f64>::zeros((total, d));
        for (b, r) in cache.segments.iter().enumerate() {
            let extra_row = extra[l][b].as_deref();
            for h in 0..heads {
                let cols = h * dk..(h + 1) * dk;
                let p = &lc.probs[b][h];
                let dctx_s = dctx.slice(s![r.clone(), cols.clone()]);
                let vs = lc.v.slice(s![r.clone(), cols.clone()]);
                let qs = lc.q.slice(s![r.clone(), cols.clone()]);
                let ks = lc.k.slice(s![r.clone(), cols.clone()]);
                let mut dp = dctx_s.dot(&vs.t());
                if let Some(e) = extra_row {
                    let mut row0 = dp.row_mut(0);
                    row0.zip_mut_with(&ArrayView1::from(e), |a, &v| *a += v / heads as f64);
                }
                dv.slice_mut(s![r.clone(), cols.clone()])
                    .assign(&p.t().dot(&dctx_s));
                let mut ds = dp;
                for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                    let dot = drow.dot(&prow);
                    drow.zip_mut_with(&prow, |g, &pv| *g = pv * (*g - dot) * scale);
                }
                dq.slice_mut(s![r.clone(), cols.clone()]).assign(&ds.dot(&ks));
                dkm.slice_mut(s![r.clone(), cols]).assign(&ds.t().dot(&qs));
            }
        }
        let x = &lc.input;
        for (w, bias, dproj) in [(lid.wq, lid.bq, &dq), (lid.wk, lid.bk, &dkm), (lid.wv, lid.bv, &dv)]
        {
            let mut g = grads.mat_mut(w);
            g += &x.t().dot(dproj);
            let mut g = grads.vec_mut(bias);
            g += &dproj.sum_axis(Axis(0));
        }
        let mut dxin = dr1;
        dxin += &dq.dot(&t.mat(lid.wq).t());
        dxin += &dkm.dot(&t.mat(lid.wk).t());
        dxin += &dv.dot(&t.mat(lid.wv).t());
        if l == last {
            if let Some(extra_in) = d_last_input.take() {
                dxin += &extra_in;
            }
        }
        dx = dxin;
    }

    for r in &cache.segments {
        for (p, row) in r.clone().enumerate() {
            let id = cache.ids[row] as usize;
            let g = dx.row(row);
            grads.mat_mut(layout.token_embedding).row_mut(id).scaled_add(1.0, &g);
            grads.mat_mut(layout.position_embedding).row_mut(p).scaled_add(1.0, &g);
        }
    }
    grads
}
