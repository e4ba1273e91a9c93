//! Drives the rating stage: reference warm-up, the joint proxy/rater phase,
//! per-epoch training traces and the final frozen scoring pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{FlatParams, GradBuffer, MlpParams, RngStream, StreamId};
use crate::proxy::{self, loss_and_grad, mean_grad, mean_loss, ProxyState};
use crate::rater::{featurize, score_corpus, RaterGrad, RaterParams, RaterShape, ScoreRecord, UpdateRule};
use crate::sample::{Sample, Tier};
use crate::scalar::Scalar;
use crate::schedule::LrSchedule;

/// Where the validation split is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValSource {
    /// Informative-tier samples only (falls back to mixed when the corpus
    /// carries no tiers).
    Informative,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    pub warmup_epochs: usize,
    pub joint_epochs: usize,
    pub batch_size: usize,
    /// Rater learning rate α.
    pub alpha: f64,
    /// Proxy learning rate β.
    pub beta: f64,
    /// Per-step multiplicative decay of α (1 = constant).
    pub alpha_decay: f64,
    /// Per-step multiplicative decay of β (1 = constant).
    pub beta_decay: f64,
    pub update_rule: UpdateRule,
    pub seed: u64,
    pub val_fraction: f64,
    pub val_source: ValSource,
    pub proxy_hidden: Vec<usize>,
    pub rater_hidden: Vec<usize>,
    pub group_hidden: usize,
    /// Multiplier on α for the group (batch-weight) head.
    pub group_lr_scale: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            warmup_epochs: 1,
            joint_epochs: 10,
            batch_size: 32,
            alpha: 1.0,
            beta: 0.02,
            alpha_decay: 1.0,
            beta_decay: 1.0,
            update_rule: UpdateRule::Simplified,
            seed: 0,
            val_fraction: 0.1,
            val_source: ValSource::Informative,
            proxy_hidden: vec![32],
            rater_hidden: vec![32, 32],
            group_hidden: 16,
            group_lr_scale: 1e-3,
        }
    }
}

fn schedule(lr: f64, decay: f64) -> LrSchedule {
    if decay == 1.0 {
        LrSchedule::Constant { lr }
    } else {
        LrSchedule::Exponential { lr, decay }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("batch size must be at least 2"));
        }
        if !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if !(self.alpha_decay > 0.0 && self.alpha_decay <= 1.0) || !(self.beta_decay > 0.0 && self.beta_decay <= 1.0) {
            return Err(Error::config("learning-rate decays must lie in (0, 1]"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config("val_fraction must lie in (0, 1)"));
        }
        if !(self.group_lr_scale >= 0.0) {
            return Err(Error::config("group_lr_scale must be non-negative"));
        }
        if self.group_hidden == 0 || self.proxy_hidden.contains(&0) || self.rater_hidden.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        Ok(())
    }

    pub fn proxy_schedule(&self) -> LrSchedule {
        schedule(self.beta, self.beta_decay)
    }

    pub fn rater_schedule(&self) -> LrSchedule {
        schedule(self.alpha, self.alpha_decay)
    }
}

/// Instantaneous loss and gradient norm of one training sample at the end of
/// a joint epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub sample_id: String,
    /// 1-based joint epoch.
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

/// Loss curves of a rating run, one entry per epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Mean train loss of θ̂ after each warm-up epoch.
    pub warmup_train_loss: Vec<f64>,
    /// Mean train loss of θ after each joint epoch.
    pub joint_train_loss: Vec<f64>,
    /// Mean validation loss of θ after each joint epoch.
    pub joint_val_loss: Vec<f64>,
    /// Mean batch weight over the epoch.
    pub mean_batch_weight: Vec<f64>,
}

/// Train/validation partition, as indices into the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Everything a rating run produces.
#[derive(Debug, Clone)]
pub struct RatingOutcome<T> {
    pub scores: Vec<ScoreRecord>,
    pub traces: Vec<TraceRow>,
    pub history: History,
    pub split: Split,
    pub rater: RaterParams<T>,
    pub proxy: ProxyState<T>,
}

/// Deterministic split by seed. Train indices keep corpus order.
pub fn split_corpus<T: Scalar>(config: &MetaConfig, corpus: &[Sample<T>]) -> Result<Split> {
    let n_val = (config.val_fraction * corpus.len() as f64).round() as usize;
    let tiered = corpus.iter().all(|s| s.tier.is_some()) && !corpus.is_empty();
    let mut candidates: Vec<usize> = match (config.val_source, tiered) {
        (ValSource::Informative, true) => (0..corpus.len())
            .filter(|&i| corpus[i].tier == Some(Tier::Informative))
            .collect(),
        _ => (0..corpus.len()).collect(),
    };
    if n_val == 0 || n_val > candidates.len() {
        return Err(Error::config(format!(
            "cannot draw {n_val} validation samples from {} candidates",
            candidates.len()
        )));
    }
    let mut rng = RngStream::new(config.seed, StreamId::Split);
    rng.shuffle(&mut candidates);
    let mut val = candidates[..n_val].to_vec();
    val.sort_unstable();
    let mut is_val = vec![false; corpus.len()];
    for &i in &val {
        is_val[i] = true;
    }
    let train: Vec<usize> = (0..corpus.len()).filter(|&i| !is_val[i]).collect();
    if train.len() < config.batch_size {
        return Err(Error::config(format!(
            "train split has {} samples, fewer than one batch of {}",
            train.len(),
            config.batch_size
        )));
    }
    Ok(Split { train, val })
}

fn gather<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Minibatches of a fresh permutation; a trailing batch smaller than 2 is
/// dropped so every batch has a defined variance statistic.
fn epoch_batches(rng: &mut RngStream, n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    rng.permutation(n)
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Cycles through reshuffled passes over the validation split.
struct ValSampler {
    rng: RngStream,
    n: usize,
    order: Vec<usize>,
    pos: usize,
}

impl ValSampler {
    fn new(seed: u64, n: usize) -> Self {
        Self {
            rng: RngStream::new(seed, StreamId::Validation),
            n,
            order: Vec::new(),
            pos: 0,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.n);
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order = self.rng.permutation(self.n);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn init_models<T: Scalar>(config: &MetaConfig, sample: &Sample<T>) -> Result<(ProxyState<T>, RaterParams<T>)> {
    let mut init = RngStream::new(config.seed, StreamId::Init);
    let net = proxy::proxy_network(
        sample.condition.len(),
        &config.proxy_hidden,
        sample.target.len(),
        &mut init,
    )?;
    let shape = RaterShape {
        feature_dim: featurize(sample).len(),
        instance_hidden: config.rater_hidden.clone(),
        group_hidden: config.group_hidden,
    };
    let mut rater = RaterParams::init(&shape, config.rater_schedule(), config.update_rule, &mut init)?;
    rater.group_lr_scale = config.group_lr_scale;
    Ok((ProxyState::new(net, config.proxy_schedule()), rater))
}

fn to_f64<T: Scalar>(v: T) -> f64 {
    v.as_f64()
}

/// Observer hooks for a rating run; used by tests for bookkeeping checks.
pub trait RatingObserver<T> {
    /// Called for every warm-up step with the batch, before the update.
    fn warmup_step(&mut self, _batch: &[Sample<T>], _theta_ref_before: &MlpParams<T>) {}

    /// Called for every joint step with the train and validation batches,
    /// the weights used for the proxy update, θ before the step, and the
    /// weighted-train gradient.
    fn joint_step(
        &mut self,
        _batch: &[Sample<T>],
        _val_batch: &[Sample<T>],
        _weights: &[T],
        _theta_before: &MlpParams<T>,
        _g_train: &GradBuffer<T>,
    ) {
    }

    /// Called once after warm-up hand-off, with the untrained rater.
    fn handoff(&mut self, _state: &ProxyState<T>, _rater: &RaterParams<T>) {}
}

impl<T> RatingObserver<T> for () {}

pub fn run_rating<T: Scalar>(config: &MetaConfig, corpus: &[Sample<T>]) -> Result<RatingOutcome<T>> {
    run_rating_observed(config, corpus, &mut ())
}

pub fn run_rating_observed<T: Scalar>(
    config: &MetaConfig,
    corpus: &[Sample<T>],
    observer: &mut impl RatingObserver<T>,
) -> Result<RatingOutcome<T>> {
    config.validate()?;
    let split = split_corpus(config, corpus)?;
    let train = gather(corpus, &split.train);
    let val = gather(corpus, &split.val);
    let (mut state, mut rater) = init_models(config, &train[0])?;
    let mut batch_rng = RngStream::new(config.seed, StreamId::Minibatch);
    let mut val_sampler = ValSampler::new(config.seed, val.len());
    let mut history = History::default();

    for _ in 0..config.warmup_epochs {
        for b in epoch_batches(&mut batch_rng, train.len(), config.batch_size) {
            let batch = gather(&train, &b);
            observer.warmup_step(&batch, &state.theta_ref);
            state.warmup_step(&batch)?;
        }
        history
            .warmup_train_loss
            .push(to_f64(mean_loss(&state.theta_ref, &train)?));
    }
    state.finish_warmup();
    observer.handoff(&state, &rater);

    let mut traces = Vec::with_capacity(config.joint_epochs * train.len());
    for epoch in 1..=config.joint_epochs {
        let mut weight_sum = 0.0;
        let mut n_batches = 0usize;
        for b in epoch_batches(&mut batch_rng, train.len(), config.batch_size) {
            let batch = gather(&train, &b);
            let bw = rater.compose_weights(&batch)?;
            // rater step uses (θ_k, θ̂_k, μ_k); proxy step uses W(μ_k)
            rater.update(&batch, &state.theta, &state.theta_ref)?;
            let val_batch = gather(&val, &val_sampler.next_batch(config.batch_size));
            let theta_before = state.theta.clone();
            let g_train = state.joint_step(&batch, &bw.final_weights, &val_batch)?;
            observer.joint_step(&batch, &val_batch, &bw.final_weights, &theta_before, &g_train);
            weight_sum += to_f64(bw.batch_weight);
            n_batches += 1;
        }
        let mut loss_sum = 0.0;
        for x in &train {
            let (loss, g) = loss_and_grad(&state.theta, x)?;
            let loss = to_f64(loss);
            loss_sum += loss;
            traces.push(TraceRow {
                sample_id: x.id.clone(),
                epoch,
                loss,
                grad_norm: to_f64(g.l2_norm()),
            });
        }
        history.joint_train_loss.push(loss_sum / train.len() as f64);
        history.joint_val_loss.push(to_f64(mean_loss(&state.theta, &val)?));
        history.mean_batch_weight.push(weight_sum / n_batches.max(1) as f64);
    }

    let scores = score_corpus(&rater, &train)?;
    Ok(RatingOutcome {
        scores,
        traces,
        history,
        split,
        rater,
        proxy: state,
    })
}

/// Result of comparing the loss-gap rater direction with a finite-difference
/// meta-gradient of the one-step-unrolled validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    /// cos(gap direction, finite-difference meta-gradient); 0 when degenerate.
    pub alignment: f64,
    /// Same, for the simplified (reference-loss-free) direction.
    pub simplified_alignment: f64,
    /// cos(full-gap direction, simplified direction).
    pub rule_agreement: f64,
    /// The finite-difference gradient vanished, so the alignment is undefined.
    pub degenerate: bool,
    pub fd_norm: f64,
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        None
    } else {
        Some(dot / (na * nb))
    }
}

/// Finite-difference step used for the meta-gradient oracle.
pub const PROBE_FD_STEP: f64 = 1e-4;

/// Compares, at the current rater μ₀, the loss-gap update direction against
/// the central-difference gradient of `mean_val L(θ')` w.r.t. μ₀, where
/// `θ' = θ − β (∇ mean_val L(θ) + ∇ Σ_i W_i(μ) L(θ; x_i))` over the whole
/// (tiny) train split as one batch.
///
/// θ and θ̂ are first brought to a realistic state by `warmup_epochs` of
/// warm-up and `joint_epochs` of joint steps with the rater frozen at μ₀.
pub fn meta_gradient_probe(config: &MetaConfig, corpus: &[Sample<f64>]) -> Result<ProbeResult> {
    if corpus.len() > 16 {
        return Err(Error::config("the meta-gradient probe is limited to 16 samples"));
    }
    if !(config.beta >= 0.0) || !(config.alpha > 0.0) || config.batch_size < 2 {
        return Err(Error::config("probe needs β ≥ 0, α > 0 and batch size ≥ 2"));
    }
    let split = split_corpus(config, corpus)?;
    let train = gather(corpus, &split.train);
    let val = gather(corpus, &split.val);
    let (mut state, rater) = init_models(config, &train[0])?;
    let mut batch_rng = RngStream::new(config.seed, StreamId::Minibatch);
    for _ in 0..config.warmup_epochs {
        for b in epoch_batches(&mut batch_rng, train.len(), config.batch_size) {
            state.warmup_step(&gather(&train, &b))?;
        }
    }
    state.finish_warmup();
    for _ in 0..config.joint_epochs {
        for b in epoch_batches(&mut batch_rng, train.len(), config.batch_size) {
            let batch = gather(&train, &b);
            let w = rater.compose_weights(&batch)?.final_weights;
            state.joint_step(&batch, &w, &val)?;
        }
    }

    let beta = state.current_lr();
    let theta = &state.theta;
    let mut full = rater.clone();
    full.update_rule = UpdateRule::FullGap;
    let gaps_full = full.loss_gaps(&train, theta, &state.theta_ref)?;
    let mut simple = rater.clone();
    simple.update_rule = UpdateRule::Simplified;
    let gaps_simple = simple.loss_gaps(&train, theta, &state.theta_ref)?;
    let dir_full = rater.weights_vjp(&train, &gaps_full)?.to_flat_vec();
    let dir_simple = rater.weights_vjp(&train, &gaps_simple)?.to_flat_vec();

    let g_val = mean_grad(theta, &val)?;
    let per_sample: Vec<GradBuffer<f64>> = train
        .iter()
        .map(|x| loss_and_grad(theta, x).map(|(_, g)| g))
        .collect::<Result<_>>()?;
    let unrolled_val_loss = |mu: &RaterParams<f64>| -> Result<f64> {
        let w = mu.compose_weights(&train)?.final_weights;
        let mut g = g_val.clone();
        for (gi, &wi) in per_sample.iter().zip(&w) {
            g.add_scaled(gi, wi);
        }
        let mut next = theta.clone();
        next.descend(&g, beta)?;
        mean_loss(&next, &val)
    };
    let mut probe = rater.clone();
    let mut fd = Vec::with_capacity(rater.flat_len());
    for k in 0..rater.flat_len() {
        let orig = rater.flat_get(k);
        probe.flat_set(k, orig + PROBE_FD_STEP);
        let up = unrolled_val_loss(&probe)?;
        probe.flat_set(k, orig - PROBE_FD_STEP);
        let down = unrolled_val_loss(&probe)?;
        probe.flat_set(k, orig);
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::numeric("non-finite validation loss in probe"));
        }
        fd.push((up - down) / (2.0 * PROBE_FD_STEP));
    }
    let fd_norm = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rule_agreement = cosine(&dir_full, &dir_simple).unwrap_or(0.0);
    let (alignment, simplified_alignment, degenerate) = match (cosine(&dir_full, &fd), cosine(&dir_simple, &fd)) {
        (Some(a), Some(b)) if fd_norm > 1e-300 => (a, b, false),
        _ => (0.0, 0.0, true),
    };
    Ok(ProbeResult {
        alignment,
        simplified_alignment,
        rule_agreement,
        degenerate,
        fd_norm,
    })
}

impl<T: Scalar> RaterGrad<T> {
    /// Flattened gradient as `f64`.
    pub fn to_flat_f64(&self) -> Vec<f64> {
        self.to_flat_vec().into_iter().map(Scalar::as_f64).collect()
    }
}
