use std::path::Path;

use anyhow::{Context, Result};
use metaprune::pruner::{DEFAULT_HEAD_DROP_PCT, DEFAULT_SAMPLING_MEAN_PCT, DEFAULT_SAMPLING_STD_PCT};
use metaprune::{CorpusSpec, MetaConfig, TrainConfig};
use serde::{Deserialize, Serialize};

/// Pruning parameters that are not tied to a particular scores file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneOptions {
    /// Fraction of the rated samples to keep.
    pub retain: f64,
    pub drop_head: f64,
    pub mean: f64,
    pub std: f64,
    pub block_start: f64,
}

impl Default for PruneOptions {
    fn default() -> Self {
        Self {
            retain: 0.5,
            drop_head: DEFAULT_HEAD_DROP_PCT,
            mean: DEFAULT_SAMPLING_MEAN_PCT,
            std: DEFAULT_SAMPLING_STD_PCT,
            block_start: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    pub bins: usize,
    pub strategies: Vec<String>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            bins: metaprune::analysis::DEFAULT_NUM_BINS,
            strategies: ["full", "random", "topk", "shift_gsample"].map(String::from).to_vec(),
        }
    }
}

/// Everything a pipeline run can be configured with. Loaded from a JSON file
/// (any section may be omitted) and then overridden by command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusSpec,
    pub rating: MetaConfig,
    pub prune: PruneOptions,
    pub train: TrainConfig,
    pub analysis: AnalysisOptions,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
