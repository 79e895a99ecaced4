use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{bootstrap_eval, lowess, ExperimentSpec, PreparedDoc, RunResult};
use crate::error::{Error, Result};
use crate::humal::StrategyKind;

/// Neighbourhood fraction of the curve smoother.
pub const LOWESS_FRAC: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub raw_auc: f64,
    pub smoothed_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub ratio: f64,
    pub strategy: String,
    pub kind: StrategyKind,
    pub points: Vec<CurvePoint>,
}

/// Labels a strategy saves against the baseline: the horizontal distance
/// between the smoothed curves at the baseline's final smoothed AUC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub ratio: f64,
    pub strategy: String,
    pub target_auc: f64,
    pub baseline_size: Option<f64>,
    pub variant_size: Option<f64>,
    /// `baseline_size - variant_size` when both curves reach the target.
    pub labels_saved: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveResult {
    pub curves: Vec<Curve>,
    pub gaps: Vec<GapSummary>,
    pub runs: Vec<RunResult>,
}

/// Smallest `x` at which the piecewise-linear curve through `(xs, ys)`
/// reaches `target`.
pub fn first_crossing(xs: &[f64], ys: &[f64], target: f64) -> Option<f64> {
    let first = *ys.first()?;
    if first >= target {
        return Some(xs[0]);
    }
    for i in 1..xs.len().min(ys.len()) {
        if ys[i] >= target {
            let t = (target - ys[i - 1]) / (ys[i] - ys[i - 1]);
            return Some(xs[i - 1] + t * (xs[i] - xs[i - 1]));
        }
    }
    None
}

/// `x_baseline(target) - x_variant(target)` for the first crossings.
pub fn horizontal_gap(xs: &[f64], baseline: &[f64], variant: &[f64], target: f64) -> Option<f64> {
    Some(first_crossing(xs, baseline, target)? - first_crossing(xs, variant, target)?)
}

/// Run [`bootstrap_eval`] at every size and ratio, smooth each strategy's
/// mean AUC over size, and summarize the gap of each strategy to the
/// baseline. `base.size` and `base.ratio` are overridden.
pub fn label_cost_curve(
    base: &ExperimentSpec,
    docs: &[PreparedDoc],
    sizes: &[usize],
    ratios: &[f64],
) -> Result<CurveResult> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("curve sizes must be nonempty and ascending".into()));
    }
    let xs: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let mut curves = Vec::new();
    let mut gaps = Vec::new();
    let mut runs = Vec::new();
    for &ratio in ratios {
        let cell_runs = sizes
            .iter()
            .map(|&size| {
                let spec = ExperimentSpec {
                    size,
                    ratio,
                    ..base.clone()
                };
                bootstrap_eval(&spec, docs)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut ratio_curves = Vec::new();
        for (k, strategy) in base.strategies.iter().enumerate() {
            let raw: Vec<f64> = cell_runs.iter().map(|r| r.strategies[k].mean).collect();
            let smooth = lowess(&xs, &raw, LOWESS_FRAC)?;
            ratio_curves.push(Curve {
                ratio,
                strategy: strategy.label(),
                kind: strategy.kind,
                points: sizes
                    .iter()
                    .zip(raw.iter().zip(&smooth))
                    .map(|(&size, (&raw_auc, &smoothed_auc))| CurvePoint {
                        size,
                        raw_auc,
                        smoothed_auc,
                    })
                    .collect(),
            });
        }
        let smoothed = |c: &Curve| c.points.iter().map(|p| p.smoothed_auc).collect::<Vec<_>>();
        if let Some(b) = ratio_curves.iter().find(|c| c.kind == StrategyKind::Baseline) {
            let by = smoothed(b);
            let target = *by.last().expect("nonempty sizes");
            for c in ratio_curves.iter().filter(|c| c.kind != StrategyKind::Baseline) {
                let vy = smoothed(c);
                let baseline_size = first_crossing(&xs, &by, target);
                let variant_size = first_crossing(&xs, &vy, target);
                gaps.push(GapSummary {
                    ratio,
                    strategy: c.strategy.clone(),
                    target_auc: target,
                    baseline_size,
                    variant_size,
                    labels_saved: baseline_size.zip(variant_size).map(|(b, v)| b - v),
                });
            }
        }
        curves.extend(ratio_curves);
        runs.extend(cell_runs);
    }
    Ok(CurveResult { curves, gaps, runs })
}

/// `ratio,strategy,size,raw_auc,smoothed_auc`.
pub fn write_curve_csv<W: Write>(curves: &[Curve], w: W) -> Result<()> {
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["ratio", "strategy", "size", "raw_auc", "smoothed_auc"])
        .map_err(err)?;
    for c in curves {
        for p in &c.points {
            csv.write_record([
                c.ratio.to_string(),
                c.strategy.clone(),
                p.size.to_string(),
                p.raw_auc.to_string(),
                p.smoothed_auc.to_string(),
            ])
            .map_err(err)?;
        }
    }
    csv.flush()?;
    Ok(())
}
