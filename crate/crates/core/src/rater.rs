//! The rating network: an instance head scoring each sample, a group head
//! weighting the whole minibatch from its feature statistics, and the
//! loss-gap driven update of both.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    column_mean_var, softmax, Activation, FlatParams, ForwardCache, GradBuffer, MlpParams, RngStream,
};
use crate::proxy::sample_loss;
use crate::sample::Sample;
use crate::scalar::Scalar;
use crate::schedule::LrSchedule;

/// Which loss gap drives the rater update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// `gap_i = L(θ; x_i) − L(θ̂; x_i)`.
    #[serde(rename = "full")]
    FullGap,
    /// `gap_i = L(θ; x_i)`, i.e. the reference loss taken as zero.
    Simplified,
}

impl UpdateRule {
    pub fn as_str(self) -> &'static str {
        match self {
            UpdateRule::FullGap => "full",
            UpdateRule::Simplified => "simplified",
        }
    }
}

impl std::str::FromStr for UpdateRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "full" => Ok(UpdateRule::FullGap),
            "simplified" => Ok(UpdateRule::Simplified),
            other => Err(format!("unknown update rule `{other}`")),
        }
    }
}

/// How a sample becomes the rater input vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    /// `condition ‖ target`.
    #[default]
    ConditionTarget,
}

/// `condition ‖ target`.
pub fn featurize<T: Scalar>(x: &Sample<T>) -> Vec<T> {
    let mut f = Vec::with_capacity(x.condition.len() + x.target.len());
    f.extend_from_slice(&x.condition);
    f.extend_from_slice(&x.target);
    f
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaterParams<T> {
    pub instance_mlp: MlpParams<T>,
    pub group_mlp: MlpParams<T>,
    pub feature_map: FeatureMap,
    pub lr_schedule: LrSchedule,
    pub update_rule: UpdateRule,
    /// Multiplier on α for the group head. Under the loss-only rule every
    /// gap is positive, so the group head only ever lowers the batch weight;
    /// a small multiplier keeps that drift from starving the instance head.
    pub group_lr_scale: f64,
    step: u64,
}

/// Gradient with respect to both rater heads.
#[derive(Debug, Clone, PartialEq)]
pub struct RaterGrad<T> {
    pub instance: GradBuffer<T>,
    pub group: GradBuffer<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchWeights<T> {
    pub raw_scores: Vec<T>,
    pub instance_weights: Vec<T>,
    pub batch_weight: T,
    pub final_weights: Vec<T>,
}

/// Architecture of a freshly initialised rater.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterShape {
    pub feature_dim: usize,
    pub instance_hidden: Vec<usize>,
    pub group_hidden: usize,
}

impl RaterShape {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            instance_hidden: vec![32, 32],
            group_hidden: 16,
        }
    }
}

impl<T: Scalar> RaterParams<T> {
    /// Instance head `feature → hidden… → 1` (tanh, linear logit); group
    /// head `2·feature → hidden → 1` (tanh, sigmoid).
    pub fn init(
        shape: &RaterShape,
        lr_schedule: LrSchedule,
        update_rule: UpdateRule,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let mut inst = vec![shape.feature_dim];
        inst.extend_from_slice(&shape.instance_hidden);
        inst.push(1);
        let instance_mlp = MlpParams::init_with(&inst, Activation::Tanh, Activation::Identity, rng)?;
        let group_mlp = MlpParams::init(
            &[2 * shape.feature_dim, shape.group_hidden, 1],
            &[Activation::Tanh, Activation::Sigmoid],
            rng,
        )?;
        Self::from_parts(instance_mlp, group_mlp, lr_schedule, update_rule)
    }

    pub fn from_parts(
        instance_mlp: MlpParams<T>,
        group_mlp: MlpParams<T>,
        lr_schedule: LrSchedule,
        update_rule: UpdateRule,
    ) -> Result<Self> {
        if instance_mlp.output_dim() != 1 || group_mlp.output_dim() != 1 {
            return Err(Error::shape("rater heads must produce a single scalar"));
        }
        if group_mlp.input_dim() != 2 * instance_mlp.input_dim() {
            return Err(Error::shape(format!(
                "group head input must be 2 x {} (mean ‖ variance), got {}",
                instance_mlp.input_dim(),
                group_mlp.input_dim()
            )));
        }
        if group_mlp.activations().last() != Some(&Activation::Sigmoid) {
            return Err(Error::shape("group head must end in a sigmoid"));
        }
        Ok(Self {
            instance_mlp,
            group_mlp,
            feature_map: FeatureMap::ConditionTarget,
            lr_schedule,
            update_rule,
            group_lr_scale: 1.0,
            step: 0,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.instance_mlp.input_dim()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Unnormalised instance score Ŵ for one sample.
    pub fn raw_score(&self, x: &Sample<T>) -> Result<T> {
        Ok(self.instance_mlp.predict(&featurize(x))?[0])
    }

    pub fn compose_weights(&self, batch: &[Sample<T>]) -> Result<BatchWeights<T>> {
        Ok(self.compose_traced(batch)?.weights)
    }

    fn compose_traced(&self, batch: &[Sample<T>]) -> Result<ComposeTrace<T>> {
        if batch.len() < 2 {
            return Err(Error::domain(format!(
                "batch weighting needs at least 2 samples, got {}",
                batch.len()
            )));
        }
        let features: Vec<Vec<T>> = batch.iter().map(featurize).collect();
        let mut raw_scores = Vec::with_capacity(batch.len());
        let mut inst_caches = Vec::with_capacity(batch.len());
        for f in &features {
            let (out, cache) = self.instance_mlp.forward(f)?;
            raw_scores.push(out[0]);
            inst_caches.push(cache);
        }
        let instance_weights = softmax(&raw_scores)?;
        let (mut stat, var) = column_mean_var(&features);
        stat.extend(var);
        let (b, group_cache) = self.group_mlp.forward(&stat)?;
        let batch_weight = b[0];
        let final_weights = instance_weights.iter().map(|&s| s * batch_weight).collect();
        Ok(ComposeTrace {
            weights: BatchWeights {
                raw_scores,
                instance_weights,
                batch_weight,
                final_weights,
            },
            inst_caches,
            group_cache,
        })
    }

    /// `∇_μ Σ_i c_i · W_i` for the batch-composed weights `W_i`.
    pub fn weights_vjp(&self, batch: &[Sample<T>], coeffs: &[T]) -> Result<RaterGrad<T>> {
        if coeffs.len() != batch.len() {
            return Err(Error::shape(format!(
                "{} coefficients for a batch of {}",
                coeffs.len(),
                batch.len()
            )));
        }
        let trace = self.compose_traced(batch)?;
        let s = &trace.weights.instance_weights;
        let b = trace.weights.batch_weight;
        // W_i = s_i b,  s = softmax(r)
        // ∂F/∂b   = Σ_i c_i s_i
        // ∂F/∂r_j = b s_j (c_j − Σ_i c_i s_i)
        let c_bar: T = coeffs.iter().zip(s).map(|(&c, &si)| c * si).sum();
        let mut grad = RaterGrad::zeros_for(self);
        for (j, cache) in trace.inst_caches.iter().enumerate() {
            let dr = b * s[j] * (coeffs[j] - c_bar);
            self.instance_mlp
                .backward_accumulate(cache, &[dr], T::one(), &mut grad.instance)?;
        }
        self.group_mlp
            .backward_accumulate(&trace.group_cache, &[c_bar], T::one(), &mut grad.group)?;
        Ok(grad)
    }

    /// `∇_μ W_i`, including the softmax coupling through every other sample
    /// in the batch and the batch-statistic path through the group head.
    pub fn weight_grad(&self, batch: &[Sample<T>], i: usize) -> Result<RaterGrad<T>> {
        if i >= batch.len() {
            return Err(Error::domain(format!(
                "index {i} out of range for batch of {}",
                batch.len()
            )));
        }
        let mut onehot = vec![T::zero(); batch.len()];
        onehot[i] = T::one();
        self.weights_vjp(batch, &onehot)
    }

    /// Per-sample gaps under this rater's update rule.
    pub fn loss_gaps(&self, batch: &[Sample<T>], theta: &MlpParams<T>, theta_ref: &MlpParams<T>) -> Result<Vec<T>> {
        let mut gaps = Vec::with_capacity(batch.len());
        for x in batch {
            let main = sample_loss(theta, x)?;
            let reference = match self.update_rule {
                UpdateRule::FullGap => sample_loss(theta_ref, x)?,
                UpdateRule::Simplified => T::zero(),
            };
            gaps.push(main - reference);
        }
        Ok(gaps)
    }

    /// `μ ← μ − α_k Σ_i gap_i ∇_μ W_i`, with the gaps given by the update rule.
    pub fn update(
        &mut self,
        batch: &[Sample<T>],
        theta: &MlpParams<T>,
        theta_ref: &MlpParams<T>,
    ) -> Result<RaterStep<T>> {
        let gaps = self.loss_gaps(batch, theta, theta_ref)?;
        self.update_with_gaps(batch, gaps)
    }

    /// Same as [`RaterParams::update`] with explicit losses; the reference
    /// losses are ignored under [`UpdateRule::Simplified`].
    pub fn update_with_losses(
        &mut self,
        batch: &[Sample<T>],
        main_losses: &[T],
        ref_losses: &[T],
    ) -> Result<RaterStep<T>> {
        if main_losses.len() != batch.len() || ref_losses.len() != batch.len() {
            return Err(Error::shape("one main and one reference loss per sample"));
        }
        let gaps = match self.update_rule {
            UpdateRule::FullGap => main_losses.iter().zip(ref_losses).map(|(&a, &b)| a - b).collect(),
            UpdateRule::Simplified => main_losses.iter().map(|&a| a - T::zero()).collect(),
        };
        self.update_with_gaps(batch, gaps)
    }

    fn update_with_gaps(&mut self, batch: &[Sample<T>], gaps: Vec<T>) -> Result<RaterStep<T>> {
        if gaps.iter().any(|g| !g.is_finite()) {
            return Err(Error::numeric("non-finite loss in rater update"));
        }
        let grad = self.weights_vjp(batch, &gaps)?;
        let lr = self.lr_schedule.at(self.step);
        self.instance_mlp.descend(&grad.instance, T::of(lr))?;
        self.group_mlp.descend(&grad.group, T::of(lr * self.group_lr_scale))?;
        self.step += 1;
        if !self.instance_mlp.is_finite() || !self.group_mlp.is_finite() {
            return Err(Error::numeric("rater parameters diverged"));
        }
        Ok(RaterStep { gaps, grad })
    }

    pub fn cast<U: Scalar>(&self) -> RaterParams<U> {
        RaterParams {
            instance_mlp: self.instance_mlp.cast(),
            group_mlp: self.group_mlp.cast(),
            feature_map: self.feature_map,
            lr_schedule: self.lr_schedule,
            update_rule: self.update_rule,
            group_lr_scale: self.group_lr_scale,
            step: self.step,
        }
    }
}

/// What one rater update did.
#[derive(Debug, Clone, PartialEq)]
pub struct RaterStep<T> {
    pub gaps: Vec<T>,
    pub grad: RaterGrad<T>,
}

struct ComposeTrace<T> {
    weights: BatchWeights<T>,
    inst_caches: Vec<ForwardCache<T>>,
    group_cache: ForwardCache<T>,
}

impl<T: Scalar> RaterGrad<T> {
    pub fn zeros_for(rater: &RaterParams<T>) -> Self {
        Self {
            instance: GradBuffer::zeros_for(&rater.instance_mlp),
            group: GradBuffer::zeros_for(&rater.group_mlp),
        }
    }

    pub fn add_scaled(&mut self, other: &RaterGrad<T>, scale: T) {
        self.instance.add_scaled(&other.instance, scale);
        self.group.add_scaled(&other.group, scale);
    }

    pub fn dot(&self, other: &RaterGrad<T>) -> T {
        self.instance.dot(&other.instance) + self.group.dot(&other.group)
    }

    pub fn l2_norm(&self) -> T {
        self.dot(self).sqrt()
    }
}

impl<T: Scalar> FlatParams<T> for RaterParams<T> {
    fn flat_len(&self) -> usize {
        self.instance_mlp.flat_len() + self.group_mlp.flat_len()
    }

    fn flat_get(&self, k: usize) -> T {
        let n = self.instance_mlp.flat_len();
        if k < n {
            self.instance_mlp.flat_get(k)
        } else {
            self.group_mlp.flat_get(k - n)
        }
    }

    fn flat_set(&mut self, k: usize, v: T) {
        let n = self.instance_mlp.flat_len();
        if k < n {
            self.instance_mlp.flat_set(k, v)
        } else {
            self.group_mlp.flat_set(k - n, v)
        }
    }
}

impl<T: Scalar> FlatParams<T> for RaterGrad<T> {
    fn flat_len(&self) -> usize {
        self.instance.flat_len() + self.group.flat_len()
    }

    fn flat_get(&self, k: usize) -> T {
        let n = self.instance.flat_len();
        if k < n {
            self.instance.flat_get(k)
        } else {
            self.group.flat_get(k - n)
        }
    }

    fn flat_set(&mut self, k: usize, v: T) {
        let n = self.instance.flat_len();
        if k < n {
            self.instance.flat_set(k, v)
        } else {
            self.group.flat_set(k - n, v)
        }
    }
}

/// Final rating of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub raw_score: f64,
    /// Rank position in `[0, 100)`: 0 is the highest score.
    pub percentile: f64,
}

/// Ranks `(id, raw score)` pairs: highest score first, ties by id, then
/// `percentile = 100 · rank / N`.
pub fn rank_scores(mut scored: Vec<(String, f64)>) -> Result<Vec<ScoreRecord>> {
    if scored.is_empty() {
        return Err(Error::domain("cannot rank an empty corpus"));
    }
    if scored.iter().any(|(_, s)| !s.is_finite()) {
        return Err(Error::numeric("non-finite raw score"));
    }
    scored.sort_by(|a, b| match b.1.partial_cmp(&a.1) {
        Some(Ordering::Equal) | None => a.0.cmp(&b.0),
        Some(o) => o,
    });
    let n = scored.len() as f64;
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(rank, (sample_id, raw_score))| ScoreRecord {
            sample_id,
            raw_score,
            percentile: 100.0 * rank as f64 / n,
        })
        .collect())
}

/// Scores every sample independently with the instance head and assigns
/// global percentiles.
pub fn score_corpus<T: Scalar>(rater: &RaterParams<T>, corpus: &[Sample<T>]) -> Result<Vec<ScoreRecord>> {
    let scored = corpus
        .iter()
        .map(|x| Ok((x.id.clone(), rater.raw_score(x)?.as_f64())))
        .collect::<Result<Vec<_>>>()?;
    rank_scores(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Matrix, StreamId};

    fn batch(n: usize) -> Vec<Sample<f64>> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                Sample::new(format!("s{i}"), vec![0.1 * t, -0.3 + t * 0.05], vec![0.2 * t - 0.1])
            })
            .collect()
    }

    fn rater(seed: u64) -> RaterParams<f64> {
        let mut rng = RngStream::new(seed, StreamId::Init);
        let shape = RaterShape {
            feature_dim: 3,
            instance_hidden: vec![5],
            group_hidden: 4,
        };
        RaterParams::init(&shape, LrSchedule::constant(0.1), UpdateRule::Simplified, &mut rng).unwrap()
    }

    #[test]
    fn featurize_concatenates() {
        let x = Sample::new("a", vec![1.0], vec![2.0]);
        assert_eq!(featurize(&x), vec![1.0, 2.0]);
        let y = Sample::new("b", vec![0.0; 4], vec![0.0; 8]);
        assert_eq!(featurize(&y).len(), 12);
    }

    #[test]
    fn zero_instance_head_gives_uniform_weights() {
        let mut r = rater(1);
        let last = r.instance_mlp.weights().len() - 1;
        r.instance_mlp.weight_mut(last).scale(0.0);
        r.instance_mlp.bias_mut(last)[0] = 0.0;
        let bw = r.compose_weights(&batch(5)).unwrap();
        assert!(bw.instance_weights.iter().all(|&w| (w - 0.2).abs() < 1e-15));
    }

    #[test]
    fn identical_samples_have_zero_variance_statistic() {
        let r = rater(2);
        let b: Vec<_> = (0..4)
            .map(|i| Sample::new(format!("{i}"), vec![0.5, 0.1], vec![1.0]))
            .collect();
        let features: Vec<_> = b.iter().map(featurize).collect();
        let (_, var) = column_mean_var(&features);
        assert!(var.iter().all(|&v| v == 0.0));
        let bw = r.compose_weights(&b).unwrap();
        assert!(bw.batch_weight > 0.0 && bw.batch_weight < 1.0);
    }

    #[test]
    fn batch_of_one_is_rejected() {
        assert!(matches!(rater(1).compose_weights(&batch(1)), Err(Error::Domain(_))));
    }

    #[test]
    fn weight_grad_index_out_of_range() {
        assert!(matches!(rater(1).weight_grad(&batch(3), 3), Err(Error::Domain(_))));
    }

    #[test]
    fn instance_path_gradients_cancel_across_batch() {
        let r = rater(4);
        let b = batch(6);
        let mut total = RaterGrad::zeros_for(&r);
        for i in 0..b.len() {
            total.add_scaled(&r.weight_grad(&b, i).unwrap(), 1.0);
        }
        // Σ_i W_i = W_batch, so instance-head gradients sum to zero.
        assert!(total.instance.l2_norm() < 1e-14);
        assert!(total.group.l2_norm() > 0.0);
    }

    #[test]
    fn constant_group_and_linear_instance_head_match_chain_rule() {
        // One-layer linear instance head r_i = a·f_i + c; group head pinned to
        // output exactly sigmoid(0) = 1/2 by zero parameters.
        let inst = MlpParams::from_layers(
            vec![Matrix::from_vec(1, 3, vec![0.3, -0.2, 0.5]).unwrap()],
            vec![vec![0.1]],
            vec![Activation::Identity],
        )
        .unwrap();
        let group = MlpParams::zeros(&[6, 1], &[Activation::Sigmoid]).unwrap();
        let r = RaterParams::from_parts(inst, group, LrSchedule::constant(0.1), UpdateRule::Simplified).unwrap();
        let b = batch(3);
        let bw = r.compose_weights(&b).unwrap();
        assert_eq!(bw.batch_weight, 0.5);
        let i = 1;
        let g = r.weight_grad(&b, i).unwrap();
        // ∂W_i/∂a = ½ s_i (f_i − Σ_j s_j f_j)
        let s = &bw.instance_weights;
        let feats: Vec<Vec<f64>> = b.iter().map(featurize).collect();
        for k in 0..3 {
            let fbar: f64 = (0..3).map(|j| s[j] * feats[j][k]).sum();
            let expect = 0.5 * s[i] * (feats[i][k] - fbar);
            assert!((g.instance.weights()[0].get(0, k) - expect).abs() < 1e-15);
        }
        // the bias shifts every logit equally, so it has no effect on W_i
        assert!(g.instance.biases()[0][0].abs() < 1e-16);
    }

    #[test]
    fn two_scores_get_percentiles_zero_and_fifty() {
        let recs = rank_scores(vec![("b".into(), 1.0), ("a".into(), 3.0)]).unwrap();
        assert_eq!(recs[0].sample_id, "a");
        assert_eq!(recs[0].percentile, 0.0);
        assert_eq!(recs[1].percentile, 50.0);
    }

    #[test]
    fn ties_are_broken_by_id() {
        let recs = rank_scores(vec![("z".into(), 1.0), ("m".into(), 1.0), ("a".into(), 1.0)]).unwrap();
        let ids: Vec<_> = recs.iter().map(|r| r.sample_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "m", "z"]);
    }

    #[test]
    fn single_sample_gets_percentile_zero() {
        let r = rater(1);
        let recs = score_corpus(&r, &batch(1)).unwrap();
        assert_eq!(recs[0].percentile, 0.0);
        assert!(matches!(score_corpus(&r, &[]), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_alpha_leaves_rater_unchanged() {
        let mut r = rater(5);
        r.lr_schedule = LrSchedule::constant(0.0);
        let before = r.clone();
        let b = batch(4);
        r.update_with_losses(&b, &[1.0, 2.0, 3.0, 4.0], &[0.0; 4]).unwrap();
        assert_eq!(r.instance_mlp, before.instance_mlp);
        assert_eq!(r.group_mlp, before.group_mlp);
    }

    #[test]
    fn non_finite_loss_is_numeric_error() {
        let mut r = rater(5);
        let b = batch(2);
        assert!(matches!(
            r.update_with_losses(&b, &[f64::NAN, 1.0], &[0.0, 0.0]),
            Err(Error::Numeric(_))
        ));
    }
}
