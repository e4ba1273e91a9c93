//! Percentile-based subset selection: shifted-Gaussian sampling and the
//! baselines it is compared against.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, StreamId};
use crate::rater::ScoreRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Full,
    Random,
    Topk,
    Block,
    Gsample,
    ShiftGsample,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Full => "full",
            Strategy::Random => "random",
            Strategy::Topk => "topk",
            Strategy::Block => "block",
            Strategy::Gsample => "gsample",
            Strategy::ShiftGsample => "shift_gsample",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "full" => Ok(Strategy::Full),
            "random" => Ok(Strategy::Random),
            "topk" | "top_k" => Ok(Strategy::Topk),
            "block" => Ok(Strategy::Block),
            "gsample" => Ok(Strategy::Gsample),
            "shift_gsample" => Ok(Strategy::ShiftGsample),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

/// Strategy plus its parameters. Percentiles are on the `[0, 100)` scale
/// where 0 is the highest-rated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSpec {
    pub strategy: Strategy,
    pub retain_count: usize,
    /// `n`: percentiles below this are discarded (shift_gsample).
    pub head_drop_pct: f64,
    /// Gaussian centre over percentiles.
    pub sampling_mean_pct: f64,
    /// Gaussian spread over percentiles.
    pub sampling_std_pct: f64,
    /// First percentile of the window (block).
    pub block_start_pct: f64,
    pub seed: u64,
}

pub const DEFAULT_HEAD_DROP_PCT: f64 = 20.0;
pub const DEFAULT_SAMPLING_MEAN_PCT: f64 = 55.0;
pub const DEFAULT_SAMPLING_STD_PCT: f64 = 15.0;

impl PruneSpec {
    pub fn new(strategy: Strategy, retain_count: usize, seed: u64) -> Self {
        Self {
            strategy,
            retain_count,
            head_drop_pct: DEFAULT_HEAD_DROP_PCT,
            sampling_mean_pct: DEFAULT_SAMPLING_MEAN_PCT,
            sampling_std_pct: DEFAULT_SAMPLING_STD_PCT,
            block_start_pct: 40.0,
            seed,
        }
    }

    /// Shift-GSample with head drop 20, mean 55, spread 15 and
    /// `round(fraction · corpus_size)` retained samples.
    pub fn recommended(retention_fraction: f64, corpus_size: usize, seed: u64) -> Result<Self> {
        if !(retention_fraction > 0.0 && retention_fraction < 1.0) {
            return Err(Error::config(format!(
                "retention fraction {retention_fraction} outside (0, 1)"
            )));
        }
        let k = (retention_fraction * corpus_size as f64).round() as usize;
        Ok(Self::new(Strategy::ShiftGsample, k, seed))
    }

    /// Short label distinguishing parameterisations in comparison tables.
    pub fn label(&self) -> String {
        match self.strategy {
            Strategy::Block => format!("block@{}", self.block_start_pct),
            Strategy::Gsample => format!("gsample~{}", self.sampling_std_pct),
            Strategy::ShiftGsample => format!(
                "shift_gsample[n={},m={},s={}]",
                self.head_drop_pct, self.sampling_mean_pct, self.sampling_std_pct
            ),
            s => s.as_str().to_string(),
        }
    }

    fn validate(&self, population: usize) -> Result<()> {
        if self.strategy == Strategy::Full {
            return Ok(());
        }
        if self.retain_count == 0 {
            return Err(Error::config("retain_count must be positive"));
        }
        if self.retain_count > population {
            return Err(Error::config(format!(
                "cannot retain {} of {population} samples",
                self.retain_count
            )));
        }
        match self.strategy {
            Strategy::Gsample | Strategy::ShiftGsample => {
                if !(self.sampling_std_pct > 0.0) {
                    return Err(Error::config("sampling spread must be positive"));
                }
            }
            Strategy::Block => {
                if !(0.0..100.0).contains(&self.block_start_pct) {
                    return Err(Error::config("block start must lie in [0, 100)"));
                }
            }
            _ => {}
        }
        if self.strategy == Strategy::ShiftGsample {
            if !(0.0..100.0).contains(&self.head_drop_pct) {
                return Err(Error::config("head drop must lie in [0, 100)"));
            }
            if !(self.head_drop_pct..=100.0).contains(&self.sampling_mean_pct) {
                return Err(Error::config("sampling mean must lie in [head drop, 100]"));
            }
        }
        Ok(())
    }
}

/// Selected sample ids (ordered by percentile) with their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subset {
    pub sample_ids: Vec<String>,
    pub provenance: PruneSpec,
    pub percentile_mean: f64,
    pub percentile_std: f64,
}

/// Unnormalised log-weight `−(w − m)² / (2σ²)`.
pub fn gaussian_log_weight(percentile: f64, mean: f64, std: f64) -> f64 {
    let d = percentile - mean;
    -d * d / (2.0 * std * std)
}

/// Sequential weighted sampling without replacement: each draw picks an item
/// with probability proportional to its weight among those still present,
/// then removes it. Weights are given in log space and renormalised against
/// the running maximum, so very small spreads do not underflow.
pub fn weighted_draws_without_replacement(log_weights: &[f64], k: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut alive: Vec<usize> = (0..log_weights.len()).collect();
    let mut picked = Vec::with_capacity(k);
    let mut w = vec![0.0; log_weights.len()];
    while picked.len() < k && !alive.is_empty() {
        let max = alive.iter().map(|&i| log_weights[i]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (slot, &i) in w.iter_mut().zip(&alive) {
            *slot = (log_weights[i] - max).exp();
            total += *slot;
        }
        let mut u = rng.unit() * total;
        let mut pos = alive.len() - 1;
        for (j, &wj) in w[..alive.len()].iter().enumerate() {
            if u < wj {
                pos = j;
                break;
            }
            u -= wj;
        }
        picked.push(alive.remove(pos));
    }
    picked
}

fn check_sorted(scores: &[ScoreRecord]) -> Result<()> {
    if scores.windows(2).any(|w| !(w[0].percentile <= w[1].percentile)) {
        return Err(Error::Data("scores must be sorted by ascending percentile".into()));
    }
    Ok(())
}

pub fn prune(scores: &[ScoreRecord], spec: &PruneSpec) -> Result<Subset> {
    check_sorted(scores)?;
    spec.validate(scores.len())?;
    let k = spec.retain_count;
    let mut rng = RngStream::new(spec.seed, StreamId::Sampler);
    let mut chosen: Vec<usize> = match spec.strategy {
        Strategy::Full => (0..scores.len()).collect(),
        Strategy::Random => {
            let mut p = rng.permutation(scores.len());
            p.truncate(k);
            p
        }
        Strategy::Topk => (0..k).collect(),
        Strategy::Block => {
            let start = scores
                .iter()
                .position(|s| s.percentile >= spec.block_start_pct)
                .unwrap_or(scores.len());
            if start + k > scores.len() {
                return Err(Error::config(format!(
                    "block starting at percentile {} holds only {} samples, need {k}",
                    spec.block_start_pct,
                    scores.len() - start
                )));
            }
            (start..start + k).collect()
        }
        Strategy::Gsample | Strategy::ShiftGsample => {
            let (floor, mean) = match spec.strategy {
                Strategy::Gsample => (0.0, 50.0),
                _ => (spec.head_drop_pct, spec.sampling_mean_pct),
            };
            let support: Vec<usize> = (0..scores.len()).filter(|&i| scores[i].percentile >= floor).collect();
            if support.len() < k {
                return Err(Error::config(format!(
                    "only {} samples at percentile >= {floor}, cannot retain {k}",
                    support.len()
                )));
            }
            let lw: Vec<f64> = support
                .iter()
                .map(|&i| gaussian_log_weight(scores[i].percentile, mean, spec.sampling_std_pct))
                .collect();
            weighted_draws_without_replacement(&lw, k, &mut rng)
                .into_iter()
                .map(|j| support[j])
                .collect()
        }
    };
    chosen.sort_unstable();
    let pcts: Vec<f64> = chosen.iter().map(|&i| scores[i].percentile).collect();
    let n = pcts.len().max(1) as f64;
    let percentile_mean = pcts.iter().sum::<f64>() / n;
    let percentile_std = (pcts.iter().map(|p| (p - percentile_mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut provenance = spec.clone();
    if spec.strategy == Strategy::Full {
        provenance.retain_count = scores.len();
    }
    Ok(Subset {
        sample_ids: chosen.iter().map(|&i| scores[i].sample_id.clone()).collect(),
        provenance,
        percentile_mean,
        percentile_std,
    })
}
