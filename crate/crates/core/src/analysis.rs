//! Diagnostics over a rating run: loss/gradient-norm trajectories per score
//! bin, planted-tier recovery and retraining comparisons between pruning
//! strategies.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_to_string, fmt_real, BINS_HEADER, COMPARISON_HEADER};
use crate::meta_loop::TraceRow;
use crate::proxy::{fit, TrainConfig};
use crate::pruner::{prune, PruneSpec, Strategy, Subset};
use crate::rater::ScoreRecord;
use crate::sample::{Sample, Tier};

pub const DEFAULT_NUM_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub bin: usize,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_grad_norm: f64,
    pub count: usize,
}

/// Index of the equal-width percentile bin holding `p`.
pub fn bin_of(p: f64, num_bins: usize) -> usize {
    let width = 100.0 / num_bins as f64;
    ((p / width).floor().max(0.0) as usize).min(num_bins - 1)
}

/// Per (bin, epoch) means of trace loss and gradient norm. Empty bins are
/// omitted; rows are ordered by epoch, then bin.
pub fn bin_traces(traces: &[TraceRow], scores: &[ScoreRecord], num_bins: usize) -> Result<Vec<BinSummary>> {
    if num_bins == 0 {
        return Err(Error::config("need at least one bin"));
    }
    let pct: HashMap<&str, f64> = scores.iter().map(|s| (s.sample_id.as_str(), s.percentile)).collect();
    let mut acc: BTreeMap<(usize, usize), (f64, f64, usize)> = BTreeMap::new();
    for t in traces {
        let p = *pct
            .get(t.sample_id.as_str())
            .ok_or_else(|| Error::Data(format!("trace sample `{}` has no score", t.sample_id)))?;
        let e = acc.entry((t.epoch, bin_of(p, num_bins))).or_insert((0.0, 0.0, 0));
        e.0 += t.loss;
        e.1 += t.grad_norm;
        e.2 += 1;
    }
    let width = 100.0 / num_bins as f64;
    Ok(acc
        .into_iter()
        .map(|((epoch, bin), (l, g, n))| BinSummary {
            bin,
            bin_lo: bin as f64 * width,
            bin_hi: (bin + 1) as f64 * width,
            epoch,
            mean_loss: l / n as f64,
            mean_grad_norm: g / n as f64,
            count: n,
        })
        .collect())
}

pub fn bins_to_csv(bins: &[BinSummary]) -> Result<String> {
    csv_to_string(
        &BINS_HEADER,
        bins.iter().map(|b| {
            vec![
                fmt_real(b.bin_lo),
                fmt_real(b.bin_hi),
                b.epoch.to_string(),
                fmt_real(b.mean_loss),
                fmt_real(b.mean_grad_norm),
                b.count.to_string(),
            ]
        }),
    )
}

/// `P(a ranked above b)` with ties counted half, via the Mann–Whitney rank
/// statistic. Lower percentile means ranked higher.
pub fn rank_auc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("AUC needs two non-empty groups"));
    }
    // pool, negate so that larger = better, assign mid-ranks
    let mut pooled: Vec<(f64, bool)> = a
        .iter()
        .map(|&p| (-p, true))
        .chain(b.iter().map(|&p| (-p, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut rank_sum_a = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_a += mid * pooled[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    let na = a.len() as f64;
    let nb = b.len() as f64;
    Ok((rank_sum_a - na * (na + 1.0) / 2.0) / (na * nb))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierReport {
    /// Mean percentile per tier, indexed by [`Tier::index`].
    pub mean_percentile: [f64; 3],
    pub count: [usize; 3],
    /// `P(plain ranked above informative)`.
    pub auc_plain_informative: f64,
    /// `P(informative ranked above chaotic)`.
    pub auc_informative_chaotic: f64,
    /// Share of the subset belonging to each tier.
    pub subset_share: [f64; 3],
    /// Fraction of each tier's scored samples that made it into the subset.
    pub tier_retained: [f64; 3],
}

pub fn tier_report(scores: &[ScoreRecord], corpus: &[Sample<f64>], subset: Option<&Subset>) -> Result<TierReport> {
    let tiers: HashMap<&str, Tier> = corpus
        .iter()
        .filter_map(|s| s.tier.map(|t| (s.id.as_str(), t)))
        .collect();
    if tiers.is_empty() {
        return Err(Error::domain("corpus carries no planted tiers"));
    }
    let mut groups: [Vec<f64>; 3] = Default::default();
    let mut tier_of: HashMap<&str, Tier> = HashMap::new();
    for s in scores {
        let t = *tiers
            .get(s.sample_id.as_str())
            .ok_or_else(|| Error::domain(format!("scored sample `{}` has no tier", s.sample_id)))?;
        groups[t.index()].push(s.percentile);
        tier_of.insert(s.sample_id.as_str(), t);
    }
    let mean = |v: &Vec<f64>| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let mut subset_share = [0.0; 3];
    let mut tier_retained = [0.0; 3];
    if let Some(sub) = subset {
        let mut counts = [0usize; 3];
        for id in &sub.sample_ids {
            if let Some(t) = tier_of.get(id.as_str()) {
                counts[t.index()] += 1;
            }
        }
        let total = sub.sample_ids.len().max(1) as f64;
        for t in 0..3 {
            subset_share[t] = counts[t] as f64 / total;
            tier_retained[t] = if groups[t].is_empty() {
                0.0
            } else {
                counts[t] as f64 / groups[t].len() as f64
            };
        }
    }
    Ok(TierReport {
        mean_percentile: [mean(&groups[0]), mean(&groups[1]), mean(&groups[2])],
        count: [groups[0].len(), groups[1].len(), groups[2].len()],
        auc_plain_informative: rank_auc(&groups[0], &groups[1])?,
        auc_informative_chaotic: rank_auc(&groups[1], &groups[2])?,
        subset_share,
        tier_retained,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub seed: u64,
    pub epoch: usize,
    pub val_loss: f64,
}

/// Retrains a fresh proxy on each spec's subset for each seed (the seed
/// drives both the sampler and the training run) and records the validation
/// loss after every epoch. Runs execute on scoped worker threads; rows are
/// sorted by (label, seed, epoch) so the table does not depend on spec order.
pub fn compare_strategies(
    train: &[Sample<f64>],
    val: &[Sample<f64>],
    scores: &[ScoreRecord],
    specs: &[PruneSpec],
    seeds: &[u64],
    train_cfg: &TrainConfig,
) -> Result<Vec<ComparisonRow>> {
    let shared: Vec<usize> = specs
        .iter()
        .filter(|s| s.strategy != Strategy::Full)
        .map(|s| s.retain_count)
        .collect();
    if shared.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::config("all non-full strategies must share retain_count"));
    }
    let by_id: HashMap<&str, &Sample<f64>> = train.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut jobs: Vec<(String, PruneSpec, u64)> = Vec::new();
    for spec in specs {
        for &seed in seeds {
            let mut s = spec.clone();
            s.seed = seed;
            jobs.push((spec.label(), s, seed));
        }
    }
    jobs.sort_by(|a, b| (&a.0, a.2).cmp(&(&b.0, b.2)));
    jobs.dedup_by(|a, b| a.0 == b.0 && a.2 == b.2 && a.1 == b.1);

    let run = |spec: &PruneSpec, seed: u64| -> Result<Vec<f64>> {
        let subset = prune(scores, spec)?;
        let data = subset
            .sample_ids
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|s| (*s).clone())
                    .ok_or_else(|| Error::Data(format!("subset id `{id}` not in corpus")))
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg = TrainConfig {
            seed,
            ..train_cfg.clone()
        };
        Ok(fit(&data, val, &cfg)?.1)
    };
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len().max(1));
    let mut results: Vec<Option<Result<Vec<f64>>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = results
            .chunks_mut(jobs.len().div_ceil(workers).max(1))
            .zip(jobs.chunks(jobs.len().div_ceil(workers).max(1)))
            .collect();
        for (out, js) in chunks {
            let run = &run;
            scope.spawn(move || {
                for (o, (_, spec, seed)) in out.iter_mut().zip(js) {
                    *o = Some(run(spec, *seed));
                }
            });
        }
    });
    let mut rows = Vec::new();
    for ((label, _, seed), res) in jobs.iter().zip(results) {
        let curve = res.expect("every job ran")?;
        for (e, v) in curve.into_iter().enumerate() {
            rows.push(ComparisonRow {
                strategy: label.clone(),
                seed: *seed,
                epoch: e + 1,
                val_loss: v,
            });
        }
    }
    Ok(rows)
}

pub fn comparison_to_csv(rows: &[ComparisonRow]) -> Result<String> {
    csv_to_string(
        &COMPARISON_HEADER,
        rows.iter().map(|r| {
            vec![
                r.strategy.clone(),
                r.seed.to_string(),
                r.epoch.to_string(),
                fmt_real(r.val_loss),
            ]
        }),
    )
}

/// Final-epoch validation loss per strategy label, across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub final_losses: Vec<f64>,
    pub median_final_loss: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn summarize(rows: &[ComparisonRow]) -> Vec<StrategySummary> {
    let mut last: BTreeMap<&str, BTreeMap<u64, (usize, f64)>> = BTreeMap::new();
    for r in rows {
        let e = last
            .entry(r.strategy.as_str())
            .or_default()
            .entry(r.seed)
            .or_insert((0, f64::NAN));
        if r.epoch >= e.0 {
            *e = (r.epoch, r.val_loss);
        }
    }
    last.into_iter()
        .map(|(s, per_seed)| {
            let final_losses: Vec<f64> = per_seed.values().map(|v| v.1).collect();
            StrategySummary {
                strategy: s.to_string(),
                median_final_loss: median(&final_losses),
                final_losses,
            }
        })
        .collect()
}
