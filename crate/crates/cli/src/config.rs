use std::path::Path;

use anyhow::{Context, Result};
use camid_core::dataset::{CurationRules, EvalGrids};
use camid_core::eval::EvalWeights;
use camid_core::infer::TtaConfig;
use camid_core::synth::SynthConfig;
use camid_core::train::TrainConfig;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub val_per_class: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { val_per_class: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSetConfig {
    /// Side of the center crop every eval image is cut to.
    pub crop: usize,
    pub grids: EvalGrids,
}

impl Default for EvalSetConfig {
    fn default() -> Self {
        Self {
            crop: 500,
            grids: EvalGrids::default(),
        }
    }
}

/// Everything a run can be configured with. Command-line flags override the
/// file; the file overrides the compiled-in defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// The only source of randomness for every subcommand.
    pub seed: u64,
    /// Data-pipeline workers; 1 gives bit-reproducible output.
    pub workers: usize,
    pub precision: Precision,
    pub curation: CurationRules,
    pub split: SplitConfig,
    pub eval_set: EvalSetConfig,
    pub train: TrainConfig,
    pub tta: TtaConfig,
    pub weights: EvalWeights,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            precision: Precision::F32,
            curation: CurationRules::default(),
            split: SplitConfig::default(),
            eval_set: EvalSetConfig::default(),
            train: TrainConfig::default(),
            tta: TtaConfig::default(),
            weights: EvalWeights::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {}", e.message().trim()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Propagates the run-wide seed into the sections that carry one.
    pub fn resolve(mut self) -> Self {
        self.train.seed = self.seed;
        self.synth.seed = self.seed;
        self.workers = self.workers.max(1);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_toml("seed = 1\nbogus = 2\n").unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
        let err = RunConfig::from_toml("[train]\nbatch = 2\n").unwrap_err().to_string();
        assert!(err.contains("batch"), "{err}");
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = RunConfig::from_toml("seed = 5\n[train]\niterations = 7\n").unwrap().resolve();
        assert_eq!(c.train.iterations, 7);
        assert_eq!(c.train.batch_size, 8);
        assert_eq!(c.train.seed, 5);
    }
}
