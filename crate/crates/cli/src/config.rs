//! Run configuration files (TOML).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use humal_core::analysis::{BinarizeRule, DEFAULT_BINS};
use humal_core::corpus::{Label, ResolutionMode, DEFAULT_MIN_HIGHLIGHT_FRACTION};
use humal_core::experiments::ExperimentSpec;
use humal_core::humal::StrategyConfig;
use humal_core::model::{ModelConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    /// Dataset in the JSONL document format.
    pub dataset: PathBuf,
    /// Subword vocabulary, one entry per line. Trained from the dataset when
    /// absent.
    #[serde(default)]
    pub vocab: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<StrategyConfig>,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub curve: CurveSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

fn default_strategies() -> Vec<StrategyConfig> {
    ExperimentSpec::default().strategies
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub resolution: ResolutionMode,
    pub min_highlight_fraction: f64,
    /// Merges learned on top of the character inventory when no vocabulary
    /// file is given.
    pub vocab_merges: usize,
    pub vocab_seed: u64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            resolution: ResolutionMode::Majority,
            min_highlight_fraction: DEFAULT_MIN_HIGHLIGHT_FRACTION,
            vocab_merges: 400,
            vocab_seed: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub sizes: Vec<usize>,
    pub ratios: Vec<f64>,
    pub minority: Label,
    pub replicates: usize,
    pub test_size: usize,
    pub base_seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let d = ExperimentSpec::default();
        ExperimentSection {
            sizes: vec![d.size],
            ratios: vec![d.ratio],
            minority: d.minority,
            replicates: d.replicates,
            test_size: d.test_size,
            base_seed: d.base_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurveSection {
    pub sizes: Vec<usize>,
    pub ratios: Vec<f64>,
}

impl Default for CurveSection {
    fn default() -> Self {
        CurveSection {
            sizes: vec![50, 100, 250, 500, 1000, 2000],
            ratios: vec![0.01, 0.05],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub rule: BinarizeRule,
    pub bins: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            rule: BinarizeRule::MeanSigma,
            bins: DEFAULT_BINS,
        }
    }
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Read, resolve relative paths against the file's directory and
    /// validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dataset = base.join(&cfg.dataset);
        cfg.output_dir = base.join(&cfg.output_dir);
        if let Some(v) = &mut cfg.vocab {
            *v = base.join(&*v);
        }
        cfg.validate()
            .with_context(|| format!("in config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dataset.is_file() {
            bail!("dataset: {} does not exist", self.dataset.display());
        }
        if let Some(v) = &self.vocab {
            if !v.is_file() {
                bail!("vocab: {} does not exist", v.display());
            }
        }
        if !(0.0..=1.0).contains(&self.corpus.min_highlight_fraction) {
            bail!("corpus.min_highlight_fraction must lie in [0, 1]");
        }
        if self.strategies.is_empty() {
            bail!("strategies: at least one is required");
        }
        for (i, s) in self.strategies.iter().enumerate() {
            s.validate().with_context(|| format!("strategies[{i}]"))?;
        }
        self.train.validate().context("train")?;
        let e = &self.experiment;
        if e.sizes.is_empty() || e.ratios.is_empty() {
            bail!("experiment.sizes and experiment.ratios must be nonempty");
        }
        if self.curve.sizes.windows(2).any(|w| w[1] <= w[0]) {
            bail!("curve.sizes must be ascending");
        }
        if self.analysis.bins == 0 {
            bail!("analysis.bins must be >= 1");
        }
        Ok(())
    }

    /// Experiment spec for one sweep cell.
    pub fn experiment_spec(&self, size: usize, ratio: f64, model: &ModelConfig) -> ExperimentSpec {
        let e = &self.experiment;
        ExperimentSpec {
            size,
            ratio,
            minority: e.minority,
            strategies: self.strategies.clone(),
            replicates: e.replicates,
            test_size: e.test_size,
            base_seed: e.base_seed,
            model: model.clone(),
            train: self.train.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_takes_defaults() {
        let cfg = RunConfigFile::parse("dataset = \"d.jsonl\"\noutput_dir = \"out\"\n").unwrap();
        assert_eq!(cfg.model, ModelConfig::default());
        assert_eq!(cfg.strategies.len(), 2);
        assert_eq!(cfg.experiment.replicates, 20);
        assert_eq!(cfg.corpus.min_highlight_fraction, 0.02);
    }

    #[test]
    fn unknown_key_is_reported_with_its_name() {
        let err = RunConfigFile::parse("dataset = \"d\"\noutput_dir = \"o\"\n[model]\nlayerz = 3\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("layerz"), "{err}");
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn missing_dataset_fails_validation() {
        let cfg = RunConfigFile::parse("dataset = \"/nonexistent/x.jsonl\"\noutput_dir = \"o\"\n").unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("dataset"));
    }
}
