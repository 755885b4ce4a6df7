//! Experiment configuration files.

use std::path::{Path, PathBuf};

use blobloss::{EvalOptions, SynthSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// A split given either sample by sample or as one spec repeated `count` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitSpec {
    List(Vec<SynthSpec>),
    Repeated(RepeatedSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepeatedSpec {
    pub count: usize,
    pub spec: SynthSpec,
}

impl SplitSpec {
    pub fn expand(&self) -> Vec<SynthSpec> {
        match self {
            SplitSpec::List(v) => v.clone(),
            SplitSpec::Repeated(r) => vec![r.spec.clone(); r.count],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: SplitSpec,
    pub validation: SplitSpec,
    pub test: SplitSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub splits: Splits,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalOptions,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg = Self::from_json(&text).map_err(|e| CliError::io(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train.validate()?;
        for (name, split) in [
            ("train", &self.splits.train),
            ("validation", &self.splits.validation),
            ("test", &self.splits.test),
        ] {
            let specs = split.expand();
            if specs.is_empty() {
                return Err(CliError::Usage(format!("split {name} has no samples")));
            }
            for s in &specs {
                s.validate()?;
            }
        }
        if !(self.eval.tolerance >= 0.0 && (0.0..=1.0).contains(&self.eval.threshold)) {
            return Err(CliError::Usage(
                "eval needs tolerance >= 0 and threshold in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}
