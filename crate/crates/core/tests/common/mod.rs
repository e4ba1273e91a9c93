//! Shared fixtures and an independent reference implementation used as a
//! test oracle. The reference code walks every neuron with plain loops over
//! the serialized parameters and never calls the library's forward/backward.

#![allow(dead_code)]

use metaprune::numerics::MlpParams;
use metaprune::proxy::proxy_network;
use metaprune::rater::{RaterParams, RaterShape};
use metaprune::{Activation, FlatParams, LrSchedule, Mlp, Rater, RngStream, Sample, StreamId, UpdateRule};

pub fn init_rng(seed: u64) -> RngStream {
    RngStream::new(seed, StreamId::Init)
}

/// 2-4-1 network, tanh hidden layer, linear output, seed 42.
pub fn net_241() -> Mlp {
    MlpParams::init_with(&[2, 4, 1], Activation::Tanh, Activation::Identity, &mut init_rng(42)).unwrap()
}

/// Proxy network 2 → [4] → 2, seed 42, with its fixed sample.
pub fn proxy_42() -> (Mlp, Sample) {
    let net = proxy_network(2, &[4], 2, &mut init_rng(42)).unwrap();
    (net, Sample::new("fx", vec![0.3, -0.7], vec![0.1, 0.2]))
}

/// Joint-step instance: 2-3-1 proxy (seed 11), three train samples with
/// fixed weights, two validation samples, β = 0.1.
pub struct JointFixture {
    pub net: Mlp,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub weights: Vec<f64>,
    pub beta: f64,
}

pub fn joint_11() -> JointFixture {
    JointFixture {
        net: proxy_network(2, &[3], 1, &mut init_rng(11)).unwrap(),
        train: vec![
            Sample::new("t0", vec![0.5, -1.0], vec![0.25]),
            Sample::new("t1", vec![-0.3, 0.8], vec![-0.6]),
            Sample::new("t2", vec![1.2, 0.1], vec![0.9]),
        ],
        val: vec![
            Sample::new("v0", vec![0.0, 0.4], vec![0.1]),
            Sample::new("v1", vec![-1.1, -0.2], vec![-0.4]),
        ],
        weights: vec![0.2, 0.3, 0.5],
        beta: 0.1,
    }
}

/// Rater over 3 features (2 condition + 1 target), instance head 3-4-1,
/// group head 6-3-1, seed 13, with its fixed 4-sample batch.
pub fn rater_13() -> (Rater, Vec<Sample>) {
    let shape = RaterShape {
        feature_dim: 3,
        instance_hidden: vec![4],
        group_hidden: 3,
    };
    let rater = RaterParams::init(
        &shape,
        LrSchedule::constant(0.1),
        UpdateRule::Simplified,
        &mut init_rng(13),
    )
    .unwrap();
    let batch = vec![
        Sample::new("a", vec![0.1, -0.2], vec![0.3]),
        Sample::new("b", vec![-0.5, 0.4], vec![1.0]),
        Sample::new("c", vec![0.9, 0.0], vec![-0.7]),
        Sample::new("d", vec![0.2, 0.6], vec![0.05]),
    ];
    (rater, batch)
}

// ---------------------------------------------------------------------------
// Reference implementation

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        Activation::Tanh => x.tanh(),
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        Activation::Identity => x,
    }
}

fn act_deriv(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - x.tanh().powi(2),
        Activation::Sigmoid => {
            let s = 1.0 / (1.0 + (-x).exp());
            s * (1.0 - s)
        }
        Activation::Identity => 1.0,
    }
}

/// A network as nested vectors: `w[l][o][i]`, `b[l][o]`.
#[derive(Debug, Clone)]
pub struct RefNet {
    pub w: Vec<Vec<Vec<f64>>>,
    pub b: Vec<Vec<f64>>,
    pub act: Vec<Activation>,
}

impl RefNet {
    pub fn from_mlp(m: &Mlp) -> Self {
        let w = m
            .weights()
            .iter()
            .map(|mat| (0..mat.rows()).map(|r| mat.row(r).to_vec()).collect())
            .collect();
        Self {
            w,
            b: m.biases().to_vec(),
            act: m.activations().to_vec(),
        }
    }

    /// Same layout as the library's flat order: W0 row-major, b0, W1, b1, …
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(&self.b) {
            for row in w {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(b);
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: self
                .w
                .iter()
                .map(|l| l.iter().map(|r| vec![0.0; r.len()]).collect())
                .collect(),
            b: self.b.iter().map(|l| vec![0.0; l.len()]).collect(),
            act: self.act.clone(),
        }
    }

    pub fn axpy(&mut self, s: f64, g: &RefNet) {
        for l in 0..self.w.len() {
            for o in 0..self.w[l].len() {
                for i in 0..self.w[l][o].len() {
                    self.w[l][o][i] += s * g.w[l][o][i];
                }
                self.b[l][o] += s * g.b[l][o];
            }
        }
    }

    /// Returns (pre-activations, post-activations) per layer; `post[0]` is the input.
    pub fn forward(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut pre = Vec::new();
        let mut post = vec![x.to_vec()];
        for l in 0..self.w.len() {
            let input = post.last().unwrap();
            let mut z = Vec::with_capacity(self.w[l].len());
            for o in 0..self.w[l].len() {
                let mut acc = self.b[l][o];
                for i in 0..input.len() {
                    acc += self.w[l][o][i] * input[i];
                }
                z.push(acc);
            }
            let a = z.iter().map(|&v| act(self.act[l], v)).collect();
            pre.push(z);
            post.push(a);
        }
        (pre, post)
    }

    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).1.pop().unwrap()
    }

    /// Gradient of `Σ_k dout_k · out_k`; also returns the input gradient.
    pub fn backward(&self, x: &[f64], dout: &[f64]) -> (RefNet, Vec<f64>) {
        let (pre, post) = self.forward(x);
        let mut g = self.zeros_like();
        let mut delta: Vec<f64> = dout.to_vec();
        for l in (0..self.w.len()).rev() {
            for o in 0..delta.len() {
                delta[o] *= act_deriv(self.act[l], pre[l][o]);
            }
            for o in 0..self.w[l].len() {
                for i in 0..post[l].len() {
                    g.w[l][o][i] = delta[o] * post[l][i];
                }
                g.b[l][o] = delta[o];
            }
            let mut prev = vec![0.0; post[l].len()];
            for o in 0..self.w[l].len() {
                for i in 0..prev.len() {
                    prev[i] += self.w[l][o][i] * delta[o];
                }
            }
            delta = prev;
        }
        (g, delta)
    }

    /// `½ · mean_j (out_j − y_j)²`.
    pub fn loss(&self, x: &Sample) -> f64 {
        let out = self.output(&x.condition);
        let m = out.len() as f64;
        out.iter().zip(&x.target).map(|(o, y)| (o - y) * (o - y)).sum::<f64>() / (2.0 * m)
    }

    pub fn loss_grad(&self, x: &Sample) -> RefNet {
        let out = self.output(&x.condition);
        let m = out.len() as f64;
        let dout: Vec<f64> = out.iter().zip(&x.target).map(|(o, y)| (o - y) / m).collect();
        self.backward(&x.condition, &dout).0
    }
}

pub fn features(x: &Sample) -> Vec<f64> {
    x.condition.iter().chain(&x.target).copied().collect()
}

/// Batch statistic `mean ‖ population variance` over featurized samples.
pub fn batch_stat(batch: &[Sample]) -> Vec<f64> {
    let f: Vec<Vec<f64>> = batch.iter().map(features).collect();
    let n = f.len() as f64;
    let d = f[0].len();
    let mut mean = vec![0.0; d];
    for row in &f {
        for k in 0..d {
            mean[k] += row[k] / n;
        }
    }
    let mut var = vec![0.0; d];
    for row in &f {
        for k in 0..d {
            var[k] += (row[k] - mean[k]).powi(2) / n;
        }
    }
    mean.extend(var);
    mean
}

/// Reference rater: instance and group heads as [`RefNet`]s.
#[derive(Debug, Clone)]
pub struct RefRater {
    pub inst: RefNet,
    pub group: RefNet,
}

pub struct RefWeights {
    pub raw: Vec<f64>,
    pub soft: Vec<f64>,
    pub batch_weight: f64,
    pub weights: Vec<f64>,
}

impl RefRater {
    pub fn from_rater(r: &Rater) -> Self {
        Self {
            inst: RefNet::from_mlp(&r.instance_mlp),
            group: RefNet::from_mlp(&r.group_mlp),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.inst.flat();
        v.extend(self.group.flat());
        v
    }

    pub fn compose(&self, batch: &[Sample]) -> RefWeights {
        let raw: Vec<f64> = batch.iter().map(|x| self.inst.output(&features(x))[0]).collect();
        let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = raw.iter().map(|r| (r - max).exp()).collect();
        let z: f64 = e.iter().sum();
        let soft: Vec<f64> = e.iter().map(|v| v / z).collect();
        let batch_weight = self.group.output(&batch_stat(batch))[0];
        let weights = soft.iter().map(|s| s * batch_weight).collect();
        RefWeights {
            raw,
            soft,
            batch_weight,
            weights,
        }
    }

    /// Gradient of `Σ_i c_i W_i`, written out through the softmax Jacobian
    /// `∂s_i/∂r_j = s_i (δ_ij − s_j)` without any simplification.
    pub fn vjp(&self, batch: &[Sample], c: &[f64]) -> (RefNet, RefNet) {
        let cw = self.compose(batch);
        let n = batch.len();
        let mut g_inst = self.inst.zeros_like();
        for j in 0..n {
            let mut d_rj = 0.0;
            for i in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                d_rj += c[i] * cw.batch_weight * cw.soft[i] * (delta - cw.soft[j]);
            }
            let (g, _) = self.inst.backward(&features(&batch[j]), &[d_rj]);
            g_inst.axpy(1.0, &g);
        }
        let d_b: f64 = (0..n).map(|i| c[i] * cw.soft[i]).sum();
        let (g_group, _) = self.group.backward(&batch_stat(batch), &[d_b]);
        (g_inst, g_group)
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn flat_of<P: FlatParams<f64>>(p: &P) -> Vec<f64> {
    (0..p.flat_len()).map(|k| p.flat_get(k)).collect()
}

/// Flat view of `P` with one coordinate hidden.
#[derive(Debug, Clone)]
pub struct Skip<P> {
    pub inner: P,
    skip: usize,
}

impl<P: FlatParams<f64>> Skip<P> {
    pub fn new(inner: P, skip: usize) -> Self {
        assert!(skip < inner.flat_len());
        Self { inner, skip }
    }

    fn map(&self, k: usize) -> usize {
        if k < self.skip {
            k
        } else {
            k + 1
        }
    }
}

impl<P: FlatParams<f64>> FlatParams<f64> for Skip<P> {
    fn flat_len(&self) -> usize {
        self.inner.flat_len() - 1
    }

    fn flat_get(&self, k: usize) -> f64 {
        self.inner.flat_get(self.map(k))
    }

    fn flat_set(&mut self, k: usize, v: f64) {
        let k = self.map(k);
        self.inner.flat_set(k, v)
    }
}
