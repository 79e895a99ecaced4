//! Post-hoc attention analytics: moving token attention back to words,
//! binarizing it, profiling it over relative position, comparing it with
//! human attention and summarizing loss histories.

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::check_alignment;
use crate::error::{Error, Result};
use crate::experiments::mean_std;
use crate::humal::cosine_similarity;
use crate::model::TrainingHistory;

pub const DEFAULT_BINS: usize = 20;
pub const MONOTONE_TOLERANCE: f64 = 1e-3;

/// Sum each word's token values, dropping tokens outside the alignment.
pub fn token_to_word_raw(attention: &[f64], alignment: &[Range<usize>]) -> Result<Vec<f64>> {
    check_alignment(alignment, alignment.len())?;
    if let Some(r) = alignment.last() {
        if r.end > attention.len() {
            return Err(Error::LengthMismatch {
                expected: r.end,
                actual: attention.len(),
            });
        }
    }
    Ok(alignment
        .iter()
        .map(|r| attention[r.clone()].iter().sum())
        .collect())
}

/// Word-level attention renormalized to unit sum over the words.
pub fn token_to_word(attention: &[f64], alignment: &[Range<usize>]) -> Result<Vec<f64>> {
    let mut w = token_to_word_raw(attention, alignment)?;
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter_mut().for_each(|v| *v /= total);
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinarizeRule {
    /// Above the document mean plus one population standard deviation.
    MeanSigma,
    /// Above `Q3 + 1.5 IQR`.
    Iqr,
}

impl std::str::FromStr for BinarizeRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_sigma" => Ok(BinarizeRule::MeanSigma),
            "iqr" => Ok(BinarizeRule::Iqr),
            _ => Err(Error::Config(format!("unknown binarize rule {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryAttentionMask {
    pub mask: Vec<bool>,
    pub rule: BinarizeRule,
    pub threshold: f64,
    pub fraction: f64,
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn binarize(word_attention: &[f64], rule: BinarizeRule) -> BinaryAttentionMask {
    let n = word_attention.len();
    let threshold = if n == 0 {
        f64::INFINITY
    } else {
        match rule {
            BinarizeRule::MeanSigma => {
                let mean = word_attention.iter().sum::<f64>() / n as f64;
                let var =
                    word_attention.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                mean + var.sqrt()
            }
            BinarizeRule::Iqr => {
                let mut s = word_attention.to_vec();
                s.sort_by(f64::total_cmp);
                let q1 = quantile(&s, 0.25);
                let q3 = quantile(&s, 0.75);
                q3 + 1.5 * (q3 - q1)
            }
        }
    };
    // Values within rounding of the threshold do not count as exceeding it.
    let slack = 1e-12 * word_attention.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mask: Vec<bool> = word_attention.iter().map(|&v| v > threshold + slack).collect();
    let ones = mask.iter().filter(|&&b| b).count();
    BinaryAttentionMask {
        fraction: if n == 0 { 0.0 } else { ones as f64 / n as f64 },
        mask,
        rule,
        threshold,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionalProfile {
    pub source: String,
    /// `bins + 1` edges from 0 to 1.
    pub edges: Vec<f64>,
    /// Mean binary attention per bin; `None` for bins no word fell in.
    pub values: Vec<Option<f64>>,
    pub skipped: Vec<usize>,
}

impl PositionalProfile {
    pub fn bin_centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect()
    }

    /// Two-column CSV `bin_center,value`; empty bins leave the value blank.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["bin_center", "value"]).map_err(csv_err)?;
        for (c, v) in self.bin_centers().iter().zip(&self.values) {
            csv.write_record([c.to_string(), v.map(|v| v.to_string()).unwrap_or_default()])
                .map_err(csv_err)?;
        }
        csv.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Mean mask value per relative-position bin, word `i` of `n` sitting at
/// `i / (n - 1)`. Single-word masks are skipped and their indices returned.
pub fn positional_profile(masks: &[Vec<bool>], bins: usize, source: &str) -> Result<PositionalProfile> {
    if bins == 0 {
        return Err(Error::Config("positional profile needs at least one bin".into()));
    }
    if masks.is_empty() {
        return Err(Error::Config("positional profile needs at least one mask".into()));
    }
    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    let mut skipped = Vec::new();
    for (d, mask) in masks.iter().enumerate() {
        let n = mask.len();
        if n < 2 {
            log::info!("positional profile skips mask {d} with {n} word(s)");
            skipped.push(d);
            continue;
        }
        for (i, &m) in mask.iter().enumerate() {
            let pos = i as f64 / (n - 1) as f64;
            let b = ((pos * bins as f64).floor() as usize).min(bins - 1);
            sums[b] += f64::from(u8::from(m));
            counts[b] += 1;
        }
    }
    Ok(PositionalProfile {
        source: source.into(),
        edges: (0..=bins).map(|b| b as f64 / bins as f64).collect(),
        values: sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect(),
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineRow {
    pub strategy: String,
    pub mean: f64,
    pub std: f64,
    pub documents: usize,
}

/// Per-strategy mean and sample standard deviation of per-document cosine
/// similarity between human and model word attention.
pub fn cosine_table(
    human: &[Vec<f64>],
    models: &[(String, Vec<Vec<f64>>)],
) -> Result<Vec<CosineRow>> {
    models
        .iter()
        .map(|(name, machine)| {
            if machine.len() != human.len() {
                return Err(Error::LengthMismatch {
                    expected: human.len(),
                    actual: machine.len(),
                });
            }
            let sims = human
                .iter()
                .zip(machine)
                .map(|(h, m)| cosine_similarity(h, m))
                .collect::<Result<Vec<_>>>()?;
            let (mean, std) = mean_std(&sims);
            Ok(CosineRow {
                strategy: name.clone(),
                mean,
                std,
                documents: sims.len(),
            })
        })
        .collect()
}

pub fn write_cosine_csv<W: Write>(rows: &[CosineRow], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["strategy", "mean", "std", "documents"])
        .map_err(csv_err)?;
    for r in rows {
        csv.write_record([
            r.strategy.clone(),
            r.mean.to_string(),
            r.std.to_string(),
            r.documents.to_string(),
        ])
        .map_err(csv_err)?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub alpha: f64,
    /// `(epoch, ce, attention, total)`.
    pub rows: Vec<(usize, f64, f64, f64)>,
    /// `total = ce + alpha * attention` within 1e-9 at every epoch.
    pub additive: bool,
    /// Attention loss never rises by more than the tolerance between epochs.
    pub attention_nonincreasing: bool,
}

pub fn loss_report(history: &TrainingHistory, tolerance: f64) -> Result<LossReport> {
    if history.epochs.is_empty() {
        return Err(Error::Config("empty training history".into()));
    }
    let rows: Vec<_> = history
        .epochs
        .iter()
        .map(|e| (e.epoch, e.ce_loss, e.attn_loss, e.total_loss))
        .collect();
    let additive = rows
        .iter()
        .all(|&(_, ce, a, t)| (t - (ce + history.alpha * a)).abs() <= 1e-9);
    let attention_nonincreasing = rows.windows(2).all(|w| w[1].2 <= w[0].2 + tolerance);
    Ok(LossReport {
        alpha: history.alpha,
        rows,
        additive,
        attention_nonincreasing,
    })
}

impl LossReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["epoch", "ce_loss", "attn_loss", "weighted_attn_loss", "total_loss"])
            .map_err(csv_err)?;
        for &(e, ce, a, t) in &self.rows {
            csv.write_record([
                e.to_string(),
                ce.to_string(),
                a.to_string(),
                (self.alpha * a).to_string(),
                t.to_string(),
            ])
            .map_err(csv_err)?;
        }
        csv.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EpochRecord;

    #[test]
    fn token_to_word_sums_and_renormalizes() {
        // [CLS] a ##b c
        let att = [0.4, 0.1, 0.2, 0.3];
        let align = vec![1..3, 3..4];
        let raw = token_to_word_raw(&att, &align).unwrap();
        assert!((raw[0] - 0.3).abs() < 1e-15 && raw[1] == 0.3);
        let w = token_to_word(&att, &align).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
        assert!(matches!(
            token_to_word(&att, &[1..2, 3..4]),
            Err(Error::AlignmentGap(_))
        ));
    }

    #[test]
    fn binarize_examples() {
        let m = binarize(&[0.25; 4], BinarizeRule::MeanSigma);
        assert_eq!(m.mask, [false; 4]);
        assert_eq!(m.fraction, 0.0);
        let spike = [0.01, 0.01, 0.9, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01];
        for rule in [BinarizeRule::MeanSigma, BinarizeRule::Iqr] {
            let m = binarize(&spike, rule);
            let ones: Vec<usize> = (0..10).filter(|&i| m.mask[i]).collect();
            assert_eq!(ones, [2], "{rule:?}");
            assert!((m.fraction - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn profile_examples() {
        let ones = vec![vec![true; 7], vec![true; 30]];
        let p = positional_profile(&ones, 20, "human").unwrap();
        assert!(p.values.iter().all(|v| v.is_none_or(|v| v == 1.0)));
        let first: Vec<Vec<bool>> = (2..40)
            .map(|n| (0..n).map(|i| i == 0).collect())
            .collect();
        let p = positional_profile(&first, 20, "human").unwrap();
        assert!(p.values[0].unwrap() > 0.0);
        assert!(p.values[1..].iter().all(|v| v.is_none_or(|v| v == 0.0)));
        let p = positional_profile(&[vec![true], vec![true, false]], 2, "m").unwrap();
        assert_eq!(p.skipped, [0]);
        assert_eq!(p.values, [Some(1.0), Some(0.0)]);
    }

    #[test]
    fn cosine_table_examples() {
        let human = vec![vec![0.5, 0.5, 0.0], vec![1.0, 0.0, 0.0]];
        let same = ("same".to_string(), human.clone());
        let orth = (
            "orth".to_string(),
            vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.5, 0.5]],
        );
        let t = cosine_table(&human, &[same, orth]).unwrap();
        assert!((t[0].mean - 1.0).abs() < 1e-12 && t[0].std.abs() < 1e-12);
        assert_eq!((t[1].mean, t[1].std), (0.0, 0.0));
    }

    #[test]
    fn loss_report_flags() {
        let rec = |epoch, ce: f64, a: f64| EpochRecord {
            epoch,
            total_loss: ce + 2.0 * a,
            ce_loss: ce,
            attn_loss: a,
            train_auc: None,
        };
        let h = TrainingHistory {
            alpha: 2.0,
            epochs: vec![rec(1, 0.7, 0.5), rec(2, 0.6, 0.4), rec(3, 0.5, 0.4005)],
            step_losses: vec![],
        };
        let r = loss_report(&h, MONOTONE_TOLERANCE).unwrap();
        assert!(r.additive && r.attention_nonincreasing);
        let r = loss_report(&h, 1e-4).unwrap();
        assert!(!r.attention_nonincreasing);
    }
}
