//! Synthetic corpora with planted quality tiers, and the line-delimited JSON
//! corpus format.
//!
//! Every sample shares one smooth nonlinear target map `g`:
//!
//! * `plain`: the condition is drawn close to the origin and the target is
//!   the tangent (affine) map of `g` there plus tiny noise. Easy to fit and
//!   carries almost no information about `g` away from the origin.
//! * `informative`: standard-normal condition, `y = g(c)` plus small noise.
//! * `chaotic`: standard-normal condition, `y = g(c)` plus large noise.

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::{Matrix, RngStream, StreamId};
use crate::sample::{Sample, Tier};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub size: usize,
    /// `(plain, informative, chaotic)`.
    pub tier_fractions: [f64; 3],
    pub condition_dim: usize,
    pub target_dim: usize,
    /// Per-tier standard deviation of the additive target noise.
    pub noise_scales: [f64; 3],
    /// Standard deviation of plain-tier conditions.
    pub plain_condition_scale: f64,
    /// Hidden width of the target map `g`.
    pub map_hidden: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            size: 2000,
            tier_fractions: [0.3, 0.5, 0.2],
            condition_dim: 4,
            target_dim: 4,
            noise_scales: [0.01, 0.1, 2.0],
            plain_condition_scale: 0.1,
            map_hidden: 16,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::config("corpus size must be positive"));
        }
        if self.condition_dim == 0 || self.target_dim == 0 || self.map_hidden == 0 {
            return Err(Error::config("dimensions must be positive"));
        }
        if self.tier_fractions.iter().any(|&f| !(f >= 0.0) || !f.is_finite()) {
            return Err(Error::config("tier fractions must be non-negative"));
        }
        let total: f64 = self.tier_fractions.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("tier fractions sum to {total}, not 1")));
        }
        if self.noise_scales.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::config("noise scales must be non-negative"));
        }
        if !(self.plain_condition_scale > 0.0) {
            return Err(Error::config("plain condition scale must be positive"));
        }
        Ok(())
    }

    /// Largest-remainder apportionment of `size` over the three tiers.
    pub fn tier_counts(&self) -> [usize; 3] {
        let quotas: Vec<f64> = self.tier_fractions.iter().map(|f| f * self.size as f64).collect();
        let mut counts = [0usize; 3];
        for (c, q) in counts.iter_mut().zip(&quotas) {
            *c = q.floor() as usize;
        }
        let mut left = self.size - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..3).collect();
        // stable: equal remainders go to the earlier tier
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
        });
        for &t in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[t] += 1;
            left -= 1;
        }
        counts
    }
}

/// The fixed random map `g(c) = W₂ tanh(W₁ c + b₁) + b₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMap {
    w1: Matrix<f64>,
    b1: Vec<f64>,
    w2: Matrix<f64>,
    b2: Vec<f64>,
}

impl TargetMap {
    pub fn random(condition_dim: usize, hidden: usize, target_dim: usize, rng: &mut RngStream) -> Self {
        let s1 = 1.5 / (condition_dim as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        let w1 = Matrix::from_fn(hidden, condition_dim, |_, _| s1 * rng.normal::<f64>());
        let b1 = (0..hidden).map(|_| 0.5 * rng.normal::<f64>()).collect();
        let w2 = Matrix::from_fn(target_dim, hidden, |_, _| s2 * rng.normal::<f64>());
        let b2 = (0..target_dim).map(|_| 0.2 * rng.normal::<f64>()).collect();
        Self { w1, b1, w2, b2 }
    }

    fn hidden(&self, c: &[f64]) -> Vec<f64> {
        self.w1
            .matvec(c)
            .expect("condition dimension fixed by the map")
            .iter()
            .zip(&self.b1)
            .map(|(z, b)| (z + b).tanh())
            .collect()
    }

    pub fn eval(&self, c: &[f64]) -> Vec<f64> {
        let h = self.hidden(c);
        let mut y = self.w2.matvec(&h).expect("hidden dimension fixed by the map");
        for (v, b) in y.iter_mut().zip(&self.b2) {
            *v += b;
        }
        y
    }

    /// First-order expansion of `g` at the origin: `g(0) + J_g(0) c`.
    pub fn tangent(&self, c: &[f64]) -> Vec<f64> {
        let zero = vec![0.0; self.w1.cols()];
        let h0 = self.hidden(&zero);
        // J = W₂ diag(1 − h0²) W₁
        let u: Vec<f64> = self
            .w1
            .matvec(c)
            .expect("condition dimension fixed by the map")
            .iter()
            .zip(&h0)
            .map(|(z, h)| z * (1.0 - h * h))
            .collect();
        let g0 = self.eval(&zero);
        let lin = self.w2.matvec(&u).expect("hidden dimension fixed by the map");
        g0.iter().zip(&lin).map(|(a, b)| a + b).collect()
    }

    /// Noise-free target of a sample of the given tier.
    pub fn clean_target(&self, tier: Tier, c: &[f64]) -> Vec<f64> {
        match tier {
            Tier::Plain => self.tangent(c),
            Tier::Informative | Tier::Chaotic => self.eval(c),
        }
    }
}

/// A generated corpus together with its ground-truth target map.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub samples: Vec<Sample<f64>>,
    pub map: TargetMap,
}

pub fn generate(spec: &CorpusSpec) -> Result<Vec<Sample<f64>>> {
    generate_with_truth(spec).map(|c| c.samples)
}

pub fn generate_with_truth(spec: &CorpusSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut map_rng = RngStream::derived(spec.seed, 0x6d6170, StreamId::Corpus);
    let map = TargetMap::random(spec.condition_dim, spec.map_hidden, spec.target_dim, &mut map_rng);

    let mut rng = RngStream::new(spec.seed, StreamId::Corpus);
    let counts = spec.tier_counts();
    let mut tiers: Vec<Tier> = Tier::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&t, n)| std::iter::repeat_n(t, n))
        .collect();
    rng.shuffle(&mut tiers);

    let width = spec.size.saturating_sub(1).to_string().len().max(6);
    let samples = tiers
        .into_iter()
        .enumerate()
        .map(|(i, tier)| {
            let scale = match tier {
                Tier::Plain => spec.plain_condition_scale,
                _ => 1.0,
            };
            let c: Vec<f64> = (0..spec.condition_dim).map(|_| scale * rng.normal::<f64>()).collect();
            let noise = spec.noise_scales[tier.index()];
            let y: Vec<f64> = map
                .clean_target(tier, &c)
                .into_iter()
                .map(|v| v + noise * rng.normal::<f64>())
                .collect();
            Sample::new(format!("s{i:0width$}"), c, y).with_tier(tier)
        })
        .collect();
    Ok(SyntheticCorpus { samples, map })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    condition: Vec<f64>,
    target: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tier: Option<Tier>,
}

/// One JSON object per line; blank lines are skipped.
pub fn parse_corpus(text: &str, path: &Path) -> Result<Vec<Sample<f64>>> {
    let mut out: Vec<Sample<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: Record = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if let Some(first) = out.first() {
            if rec.condition.len() != first.condition.len() || rec.target.len() != first.target.len() {
                return Err(parse_err(
                    "condition/target dimensions differ from the first record".into(),
                ));
            }
        }
        if rec.condition.is_empty() || rec.target.is_empty() {
            return Err(parse_err("condition and target must be non-empty".into()));
        }
        out.push(Sample {
            id: rec.id,
            condition: rec.condition,
            target: rec.target,
            tier: rec.tier,
        });
    }
    let mut ids: Vec<&str> = out.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Data(format!(
            "duplicate sample id `{}` in {}",
            w[0],
            path.display()
        )));
    }
    Ok(out)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Sample<f64>>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(|e| Error::io(path, e))?);
        text.push('\n');
    }
    parse_corpus(&text, path)
}

pub fn corpus_to_string(corpus: &[Sample<f64>]) -> Result<String> {
    let mut out = String::new();
    for s in corpus {
        let rec = Record {
            id: s.id.clone(),
            condition: s.condition.clone(),
            target: s.target.clone(),
            tier: s.tier,
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_corpus(corpus: &[Sample<f64>], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), corpus_to_string(corpus)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_plain_fractions() {
        let spec = CorpusSpec {
            size: 50,
            tier_fractions: [1.0, 0.0, 0.0],
            ..CorpusSpec::default()
        };
        let c = generate(&spec).unwrap();
        assert!(c.iter().all(|s| s.tier == Some(Tier::Plain)));
    }

    #[test]
    fn largest_remainder_counts() {
        let spec = CorpusSpec {
            size: 1000,
            tier_fractions: [0.3, 0.5, 0.2],
            ..CorpusSpec::default()
        };
        assert_eq!(spec.tier_counts(), [300, 500, 200]);
        let spec = CorpusSpec {
            size: 10,
            tier_fractions: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            ..CorpusSpec::default()
        };
        assert_eq!(spec.tier_counts(), [4, 3, 3]);
        let spec = CorpusSpec {
            size: 7,
            tier_fractions: [0.25, 0.25, 0.5],
            ..CorpusSpec::default()
        };
        let c = spec.tier_counts();
        assert_eq!(c.iter().sum::<usize>(), 7);
        assert_eq!(c, [2, 2, 3]);
    }

    #[test]
    fn invalid_fractions_are_rejected() {
        let spec = CorpusSpec {
            tier_fractions: [0.5, 0.5, 0.5],
            ..CorpusSpec::default()
        };
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
        let spec = CorpusSpec {
            tier_fractions: [1.2, -0.2, 0.0],
            ..CorpusSpec::default()
        };
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn tangent_matches_map_near_origin() {
        let mut rng = RngStream::new(3, StreamId::Corpus);
        let g = TargetMap::random(4, 16, 3, &mut rng);
        let c = [1e-4, -2e-4, 0.5e-4, 1e-4];
        let a = g.eval(&c);
        let b = g.tangent(&c);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn empty_text_is_empty_corpus() {
        assert!(parse_corpus("", Path::new("x")).unwrap().is_empty());
    }

    #[test]
    fn missing_target_names_the_line() {
        let text = "{\"id\":\"a\",\"condition\":[1.0],\"target\":[2.0]}\n{\"id\":\"b\",\"condition\":[1.0]}\n";
        match parse_corpus(text, Path::new("c.jsonl")) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("target"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_dimensions_are_rejected() {
        let text = "{\"id\":\"a\",\"condition\":[1.0],\"target\":[2.0]}\n{\"id\":\"b\",\"condition\":[1.0,2.0],\"target\":[2.0]}\n";
        assert!(matches!(
            parse_corpus(text, Path::new("c")),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let text = "{\"id\":\"a\",\"condition\":[1.0],\"target\":[2.0]}\n{\"id\":\"a\",\"condition\":[1.0],\"target\":[2.0]}\n";
        assert!(matches!(parse_corpus(text, Path::new("c")), Err(Error::Data(_))));
    }
}
