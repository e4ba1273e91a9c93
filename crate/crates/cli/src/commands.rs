use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use metaprune::analysis::{bins_to_csv, comparison_to_csv, summarize};
use metaprune::io::{
    curve_to_csv, ids_to_string, read_ids, read_scores, scores_to_csv, traces_from_csv, traces_to_csv, write_atomic,
    FileDigest, Manifest,
};
use metaprune::proxy::fit;
use metaprune::{
    bin_traces, compare_strategies, generate, prune as prune_scores, read_corpus, run_rating, write_corpus, PruneSpec,
    Sample, ScoreRecord, Strategy, Tier,
};
use serde_json::json;

use crate::config::{PruneOptions, RunConfig};
use crate::{CompareArgs, GenArgs, PruneArgs, RateArgs, SamplerArgs, TraceArgs, TrainArgs};

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn digests(paths: &[&Path]) -> Result<Vec<FileDigest>> {
    paths.iter().map(|p| Ok(FileDigest::of(p)?)).collect()
}

/// Writes the sidecar manifest holding the config sections the command used.
fn write_manifest(
    path: &Path,
    command: &str,
    cfg: &RunConfig,
    sections: &[&str],
    inputs: &[&Path],
    outputs: &[&Path],
    stats: serde_json::Value,
) -> Result<()> {
    let full = serde_json::to_value(cfg)?;
    let resolved: serde_json::Map<String, serde_json::Value> =
        sections.iter().map(|&k| (k.to_string(), full[k].clone())).collect();
    let mut m = Manifest::new(command, resolved.into());
    m.inputs = digests(inputs)?;
    m.outputs = digests(outputs)?;
    m.stats = stats;
    m.write(path)?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn apply_sampler(opts: &mut PruneOptions, a: &SamplerArgs) {
    if let Some(v) = a.retain {
        opts.retain = v;
    }
    if let Some(v) = a.drop_head {
        opts.drop_head = v;
    }
    if let Some(v) = a.mean {
        opts.mean = v;
    }
    if let Some(v) = a.std {
        opts.std = v;
    }
    if let Some(v) = a.block_start {
        opts.block_start = v;
    }
}

fn retain_count(opts: &PruneOptions, population: usize) -> Result<usize> {
    if !(opts.retain > 0.0 && opts.retain <= 1.0) {
        bail!("--retain must be a fraction in (0, 1], got {}", opts.retain);
    }
    Ok((opts.retain * population as f64).round() as usize)
}

fn prune_spec(opts: &PruneOptions, strategy: Strategy, population: usize, seed: u64) -> Result<PruneSpec> {
    let k = if strategy == Strategy::Full {
        population
    } else {
        retain_count(opts, population)?
    };
    let mut spec = PruneSpec::new(strategy, k, seed);
    spec.head_drop_pct = opts.drop_head;
    spec.sampling_mean_pct = opts.mean;
    spec.sampling_std_pct = opts.std;
    spec.block_start_pct = opts.block_start;
    Ok(spec)
}

fn parse_strategy(s: &str) -> Result<Strategy> {
    s.parse::<Strategy>().map_err(|e| anyhow!(e))
}

/// Splits a corpus into (train, val) given validation ids; an explicit train
/// id list restricts the train side.
fn split_by_ids(
    corpus: &[Sample],
    val_ids: &[String],
    train_ids: Option<&[String]>,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let known: HashSet<&str> = corpus.iter().map(|s| s.id.as_str()).collect();
    for id in val_ids.iter().chain(train_ids.unwrap_or_default()) {
        if !known.contains(id.as_str()) {
            bail!("id `{id}` is not in the corpus");
        }
    }
    let val_set: HashSet<&str> = val_ids.iter().map(String::as_str).collect();
    let val = corpus
        .iter()
        .filter(|s| val_set.contains(s.id.as_str()))
        .cloned()
        .collect();
    let train = match train_ids {
        Some(ids) => {
            let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
            if let Some(id) = ids.iter().find(|id| val_set.contains(id.as_str())) {
                bail!("training id `{id}` is also a validation id");
            }
            corpus
                .iter()
                .filter(|s| wanted.contains(s.id.as_str()))
                .cloned()
                .collect()
        }
        None => corpus
            .iter()
            .filter(|s| !val_set.contains(s.id.as_str()))
            .cloned()
            .collect(),
    };
    Ok((train, val))
}

pub fn gen(mut cfg: RunConfig, a: GenArgs) -> Result<()> {
    cfg.corpus.seed = a.seed;
    if let Some(v) = a.size {
        cfg.corpus.size = v;
    }
    if let Some(v) = a.condition_dim {
        cfg.corpus.condition_dim = v;
    }
    if let Some(v) = a.target_dim {
        cfg.corpus.target_dim = v;
    }
    let corpus = generate(&cfg.corpus)?;
    ensure_parent(&a.out)?;
    write_corpus(&corpus, &a.out)?;
    let mut counts = [0usize; 3];
    for s in &corpus {
        if let Some(t) = s.tier {
            counts[t.index()] += 1;
        }
    }
    let stats = json!({
        "size": corpus.len(),
        "tier_counts": Tier::ALL.iter().map(|t| (t.as_str(), counts[t.index()])).collect::<std::collections::BTreeMap<_, _>>(),
    });
    write_manifest(&manifest_path(&a.out), "gen", &cfg, &["corpus"], &[], &[&a.out], stats)
}

pub fn rate(mut cfg: RunConfig, a: RateArgs) -> Result<()> {
    let r = &mut cfg.rating;
    r.seed = a.seed;
    if let Some(v) = a.warmup_epochs {
        r.warmup_epochs = v;
    }
    if let Some(v) = a.joint_epochs {
        r.joint_epochs = v;
    }
    if let Some(v) = a.batch_size {
        r.batch_size = v;
    }
    if let Some(v) = a.alpha {
        r.alpha = v;
    }
    if let Some(v) = a.beta {
        r.beta = v;
    }
    if let Some(v) = &a.update_rule {
        r.update_rule = v.parse().map_err(|e: String| anyhow!(e))?;
    }
    if let Some(v) = a.val_fraction {
        r.val_fraction = v;
    }
    let corpus = read_corpus(&a.corpus)?;
    let out = run_rating(&cfg.rating, &corpus)?;

    ensure_dir(&a.out_dir)?;
    let scores = a.out_dir.join("scores.csv");
    let traces = a.out_dir.join("traces.csv");
    let val_ids = a.out_dir.join("val_ids.txt");
    write_atomic(&scores, scores_to_csv(&out.scores)?.as_bytes())?;
    write_atomic(&traces, traces_to_csv(&out.traces)?.as_bytes())?;
    let ids: Vec<String> = out.split.val.iter().map(|&i| corpus[i].id.clone()).collect();
    write_atomic(&val_ids, ids_to_string(&ids).as_bytes())?;
    let stats = json!({
        "train_size": out.split.train.len(),
        "val_size": out.split.val.len(),
        "history": out.history,
    });
    write_manifest(
        &a.out_dir.join("manifest.json"),
        "rate",
        &cfg,
        &["rating"],
        &[&a.corpus],
        &[&scores, &traces, &val_ids],
        stats,
    )
}

pub fn prune(mut cfg: RunConfig, a: PruneArgs) -> Result<()> {
    apply_sampler(&mut cfg.prune, &a.sampler);
    let strategy = parse_strategy(&a.strategy)?;
    let scores = read_scores(&a.scores)?;
    let spec = prune_spec(&cfg.prune, strategy, scores.len(), a.seed)?;
    let subset = prune_scores(&scores, &spec)?;
    ensure_parent(&a.out)?;
    write_atomic(&a.out, ids_to_string(&subset.sample_ids).as_bytes())?;
    let stats = json!({
        "spec": subset.provenance,
        "retained": subset.sample_ids.len(),
        "percentile_mean": subset.percentile_mean,
        "percentile_std": subset.percentile_std,
    });
    write_manifest(
        &manifest_path(&a.out),
        "prune",
        &cfg,
        &["prune"],
        &[&a.scores],
        &[&a.out],
        stats,
    )
}

pub fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    cfg.train.seed = a.seed;
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    let corpus = read_corpus(&a.corpus)?;
    let val_ids = read_ids(&a.val)?;
    let subset_ids = a.subset.as_ref().map(read_ids).transpose()?;
    let (train, val) = split_by_ids(&corpus, &val_ids, subset_ids.as_deref())?;
    let (_, curve) = fit(&train, &val, &cfg.train)?;
    ensure_parent(&a.out)?;
    write_atomic(&a.out, curve_to_csv(&curve)?.as_bytes())?;
    let mut inputs: Vec<&Path> = vec![&a.corpus, &a.val];
    if let Some(s) = &a.subset {
        inputs.push(s);
    }
    let stats = json!({
        "train_size": train.len(),
        "val_size": val.len(),
        "final_val_loss": curve.last(),
    });
    write_manifest(
        &manifest_path(&a.out),
        "train",
        &cfg,
        &["train"],
        &inputs,
        &[&a.out],
        stats,
    )
}

pub fn trace(mut cfg: RunConfig, a: TraceArgs) -> Result<()> {
    if let Some(v) = a.bins {
        cfg.analysis.bins = v;
    }
    let traces = traces_from_csv(&a.traces)?;
    let scores: Vec<ScoreRecord> = read_scores(&a.scores)?;
    let bins = bin_traces(&traces, &scores, cfg.analysis.bins)?;
    ensure_parent(&a.out)?;
    write_atomic(&a.out, bins_to_csv(&bins)?.as_bytes())?;
    write_manifest(
        &manifest_path(&a.out),
        "trace",
        &cfg,
        &["analysis"],
        &[&a.traces, &a.scores],
        &[&a.out],
        json!({ "rows": bins.len() }),
    )
}

pub fn compare(mut cfg: RunConfig, a: CompareArgs) -> Result<()> {
    apply_sampler(&mut cfg.prune, &a.sampler);
    if let Some(v) = a.strategies {
        cfg.analysis.strategies = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    let corpus = read_corpus(&a.corpus)?;
    let scores = read_scores(&a.scores)?;
    let val_ids = read_ids(&a.val)?;
    let (train, val) = split_by_ids(&corpus, &val_ids, None)?;
    let specs = cfg
        .analysis
        .strategies
        .iter()
        .map(|s| prune_spec(&cfg.prune, parse_strategy(s)?, scores.len(), 0))
        .collect::<Result<Vec<_>>>()?;
    let rows = compare_strategies(&train, &val, &scores, &specs, &a.seeds, &cfg.train)?;
    ensure_parent(&a.out)?;
    write_atomic(&a.out, comparison_to_csv(&rows)?.as_bytes())?;
    let summary = summarize(&rows);
    for s in &summary {
        println!("{:<32} median final val loss {:.6}", s.strategy, s.median_final_loss);
    }
    write_manifest(
        &manifest_path(&a.out),
        "compare",
        &cfg,
        &["prune", "train", "analysis"],
        &[&a.corpus, &a.scores, &a.val],
        &[&a.out],
        json!({ "seeds": a.seeds, "summary": summary }),
    )
}
