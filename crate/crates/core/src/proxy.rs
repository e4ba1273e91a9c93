//! The proxy regression model: per-sample loss, the reference-model warm-up
//! and the joint validation + weighted-train update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Activation, GradBuffer, MlpParams, RngStream, StreamId};
use crate::sample::Sample;
use crate::scalar::Scalar;
use crate::schedule::LrSchedule;

/// `½ · mean_j (f(c)_j − y_j)²`.
pub fn sample_loss<T: Scalar>(params: &MlpParams<T>, x: &Sample<T>) -> Result<T> {
    let out = params.predict(&x.condition)?;
    residual_loss(&out, &x.target)
}

fn residual_loss<T: Scalar>(out: &[T], target: &[T]) -> Result<T> {
    if out.len() != target.len() {
        return Err(Error::shape(format!(
            "network output has {} entries, target has {}",
            out.len(),
            target.len()
        )));
    }
    let sq: T = out.iter().zip(target).map(|(&o, &t)| (o - t) * (o - t)).sum();
    let loss = sq / T::of(2.0 * out.len() as f64);
    if !loss.is_finite() {
        return Err(Error::numeric("sample loss is not finite"));
    }
    Ok(loss)
}

/// Adds `scale · ∇_θ L(θ; x)` into `grad` and returns `L(θ; x)`.
pub fn accumulate_loss_grad<T: Scalar>(
    params: &MlpParams<T>,
    x: &Sample<T>,
    scale: T,
    grad: &mut GradBuffer<T>,
) -> Result<T> {
    let (out, cache) = params.forward(&x.condition)?;
    let loss = residual_loss(&out, &x.target)?;
    let m = T::of(out.len() as f64);
    let dout: Vec<T> = out.iter().zip(&x.target).map(|(&o, &t)| (o - t) / m).collect();
    params.backward_accumulate(&cache, &dout, scale, grad)?;
    Ok(loss)
}

/// `(L(θ; x), ∇_θ L(θ; x))`.
pub fn loss_and_grad<T: Scalar>(params: &MlpParams<T>, x: &Sample<T>) -> Result<(T, GradBuffer<T>)> {
    let mut g = GradBuffer::zeros_for(params);
    let loss = accumulate_loss_grad(params, x, T::one(), &mut g)?;
    Ok((loss, g))
}

/// `∇_θ Σ_i w_i · L(θ; x_i)`, accumulated in batch order.
pub fn weighted_grad<T: Scalar>(params: &MlpParams<T>, batch: &[Sample<T>], weights: &[T]) -> Result<GradBuffer<T>> {
    if batch.len() != weights.len() {
        return Err(Error::shape(format!(
            "{} samples but {} weights",
            batch.len(),
            weights.len()
        )));
    }
    let mut g = GradBuffer::zeros_for(params);
    for (x, &w) in batch.iter().zip(weights) {
        accumulate_loss_grad(params, x, w, &mut g)?;
    }
    Ok(g)
}

/// `∇_θ mean_i L(θ; x_i)`.
pub fn mean_grad<T: Scalar>(params: &MlpParams<T>, batch: &[Sample<T>]) -> Result<GradBuffer<T>> {
    if batch.is_empty() {
        return Err(Error::domain("gradient of an empty batch"));
    }
    let w = T::one() / T::of(batch.len() as f64);
    weighted_grad(params, batch, &vec![w; batch.len()])
}

pub fn mean_loss<T: Scalar>(params: &MlpParams<T>, batch: &[Sample<T>]) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::domain("loss of an empty batch"));
    }
    let mut total = T::zero();
    for x in batch {
        total = total + sample_loss(params, x)?;
    }
    Ok(total / T::of(batch.len() as f64))
}

/// Conditional regression network `condition → target` with tanh hidden
/// layers and a linear head.
pub fn proxy_network<T: Scalar>(
    condition_dim: usize,
    hidden: &[usize],
    target_dim: usize,
    rng: &mut RngStream,
) -> Result<MlpParams<T>> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(condition_dim);
    dims.extend_from_slice(hidden);
    dims.push(target_dim);
    MlpParams::init_with(&dims, Activation::Tanh, Activation::Identity, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Joint,
}

/// Main model θ, reference model θ̂ and the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyState<T> {
    pub theta: MlpParams<T>,
    pub theta_ref: MlpParams<T>,
    step: u64,
    phase: Phase,
    lr_schedule: LrSchedule,
}

impl<T: Scalar> ProxyState<T> {
    /// Starts in the warm-up phase with θ = θ̂ = `init`.
    pub fn new(init: MlpParams<T>, lr_schedule: LrSchedule) -> Self {
        Self {
            theta: init.clone(),
            theta_ref: init,
            step: 0,
            phase: Phase::Warmup,
            lr_schedule,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        self.lr_schedule
    }

    pub fn current_lr(&self) -> T {
        T::of(self.lr_schedule.at(self.step))
    }

    /// θ̂ ← θ̂ − β_k ∇ mean_i L(θ̂; x_i). θ is left untouched.
    pub fn warmup_step(&mut self, batch: &[Sample<T>]) -> Result<()> {
        if self.phase != Phase::Warmup {
            return Err(Error::domain("warm-up step after the warm-up phase ended"));
        }
        if batch.is_empty() {
            return Err(Error::domain("warm-up step on an empty batch"));
        }
        let g = mean_grad(&self.theta_ref, batch)?;
        let lr = self.current_lr();
        self.theta_ref.descend(&g, lr)?;
        self.step += 1;
        Ok(())
    }

    /// Ends warm-up: θ becomes an exact copy of θ̂.
    pub fn finish_warmup(&mut self) {
        self.theta = self.theta_ref.clone();
        self.phase = Phase::Joint;
    }

    /// One joint update:
    ///
    /// θ ← θ − β_k (∇ mean_val L(θ) + ∇ Σ_i w_i L(θ; x_i))
    /// θ̂ ← θ̂ − β_k ∇ Σ_i w_i L(θ̂; x_i)
    ///
    /// Returns the weighted-train gradient applied to θ.
    pub fn joint_step(
        &mut self,
        train_batch: &[Sample<T>],
        weights: &[T],
        val_batch: &[Sample<T>],
    ) -> Result<GradBuffer<T>> {
        if self.phase != Phase::Joint {
            return Err(Error::domain("joint step before warm-up hand-off"));
        }
        if train_batch.len() != weights.len() {
            return Err(Error::shape(format!(
                "{} train samples but {} weights",
                train_batch.len(),
                weights.len()
            )));
        }
        let g_train = weighted_grad(&self.theta, train_batch, weights)?;
        let mut g = mean_grad(&self.theta, val_batch)?;
        g.add_scaled(&g_train, T::one());
        let g_ref = weighted_grad(&self.theta_ref, train_batch, weights)?;
        let lr = self.current_lr();
        self.theta.descend(&g, lr)?;
        self.theta_ref.descend(&g_ref, lr)?;
        self.step += 1;
        Ok(g_train)
    }
}

/// Plain minibatch-SGD training of a fresh proxy, used for downstream
/// evaluation of a selected subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 0.05,
            hidden: vec![32],
            seed: 0,
        }
    }
}

/// Trains on `train` and returns the validation loss after every epoch
/// (`curve[e]` is the loss after epoch `e + 1`).
pub fn fit<T: Scalar>(train: &[Sample<T>], val: &[Sample<T>], cfg: &TrainConfig) -> Result<(MlpParams<T>, Vec<T>)> {
    let first = train.first().ok_or_else(|| Error::domain("training set is empty"))?;
    if val.is_empty() {
        return Err(Error::domain("validation set is empty"));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::config("batch size and learning rate must be positive"));
    }
    let mut init_rng = RngStream::new(cfg.seed, StreamId::Init);
    let mut batch_rng = RngStream::new(cfg.seed, StreamId::Minibatch);
    let mut params = proxy_network(first.condition.len(), &cfg.hidden, first.target.len(), &mut init_rng)?;
    let lr = T::of(cfg.lr);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let order = batch_rng.permutation(train.len());
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample<T>> = chunk.iter().map(|&i| train[i].clone()).collect();
            let g = mean_grad(&params, &batch)?;
            params.descend(&g, lr)?;
        }
        curve.push(mean_loss(&params, val)?);
    }
    Ok((params, curve))
}
