use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::train::loss_and_grad;
use super::{Params, TrainItem};
use crate::error::Result;
use crate::humal::StrategyConfig;

/// Gradients below this magnitude are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`.
pub fn central_difference<F>(mut f: F, x: &[f64], i: usize, eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    probe[i] = x[i] + eps;
    let up = f(&probe);
    probe[i] = x[i] - eps;
    let down = f(&probe);
    (up - down) / (2.0 * eps)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// `(tensor, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compare the analytic gradient of the strategy's batch objective with
/// central differences on `per_tensor` sampled entries of every tensor.
/// Embedding rows are sampled among the tokens and positions the batch uses.
pub fn grad_check(
    params: &Params,
    batch: &[TrainItem],
    strategy: &StrategyConfig,
    eps: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    assert!(eps > 0.0, "eps must be positive");
    let mut params = params.clone();
    params.config.dropout = 0.0;
    let refs: Vec<&TrainItem> = batch.iter().collect();
    let (_, analytic) = loss_and_grad(&params, &refs, strategy)?;

    let layout = params.layout().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used_tokens: Vec<usize> = batch.iter().flat_map(|b| b.ids.iter().map(|&i| i as usize)).collect();
    used_tokens.sort_unstable();
    used_tokens.dedup();
    let max_len = batch.iter().map(|b| b.ids.len()).max().unwrap_or(0);

    let mut indices = Vec::new();
    for (k, spec) in layout.tensors.iter().enumerate() {
        let rows: Vec<usize> = if k == layout.spec_index(layout.token_embedding) {
            used_tokens.clone()
        } else if k == layout.spec_index(layout.position_embedding) {
            (0..max_len).collect()
        } else {
            (0..spec.rows).collect()
        };
        for _ in 0..per_tensor.min(rows.len() * spec.cols) {
            let r = *rows.choose(&mut rng).expect("non-empty rows");
            let c = *(0..spec.cols).collect::<Vec<_>>().choose(&mut rng).expect("cols");
            indices.push((spec.name.clone(), spec.offset + r * spec.cols + c));
        }
    }

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut probe = params.clone();
    for (name, i) in indices {
        let numeric = central_difference(
            |x| {
                probe.tensors.data[i] = x[i];
                loss_and_grad(&probe, &refs, strategy)
                    .map(|(l, _)| l.total)
                    .unwrap_or(f64::NAN)
            },
            &params.tensors.data,
            i,
            eps,
        );
        probe.tensors.data[i] = params.tensors.data[i];
        let a = analytic.data[i];
        let err = relative_error(a, numeric);
        report.checked += 1;
        if !(err <= report.max_relative_error) {
            report.max_relative_error = err;
            report.worst = Some((name, i, a, numeric));
        }
    }
    Ok(report)
}
