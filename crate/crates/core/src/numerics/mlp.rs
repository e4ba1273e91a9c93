use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::rng::RngStream;
use super::FlatParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation `x` and the activation output `y`.
    #[inline]
    pub fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Identity => T::one(),
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Parameters of a dense feed-forward network.
///
/// `weights[i]` maps layer `i` to layer `i + 1` and has shape
/// `layer_dims[i + 1] x layer_dims[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams<T> {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix<T>>,
    biases: Vec<Vec<T>>,
    activations: Vec<Activation>,
}

/// Per-layer values recorded by [`MlpParams::forward`], sufficient for an
/// exact backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache<T> {
    layer_dims: Vec<usize>,
    /// `inputs[i]` is the input to layer `i` (so `inputs[0]` is the network input).
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    post: Vec<Vec<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        self.post.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn input(&self) -> &[T] {
        &self.inputs[0]
    }
}

/// Gradient accumulators shaped like an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer<T> {
    weights: Vec<Matrix<T>>,
    biases: Vec<Vec<T>>,
}

fn check_dims(layer_dims: &[usize], activations: &[Activation]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::shape("an MLP needs at least an input and an output layer"));
    }
    if layer_dims.contains(&0) {
        return Err(Error::shape("layer widths must be positive"));
    }
    if activations.len() != layer_dims.len() - 1 {
        return Err(Error::shape(format!(
            "{} layers need {} activations, got {}",
            layer_dims.len() - 1,
            layer_dims.len() - 1,
            activations.len()
        )));
    }
    Ok(())
}

impl<T: Scalar> MlpParams<T> {
    /// All-zero parameters.
    pub fn zeros(layer_dims: &[usize], activations: &[Activation]) -> Result<Self> {
        check_dims(layer_dims, activations)?;
        let weights = layer_dims.windows(2).map(|w| Matrix::zeros(w[1], w[0])).collect();
        let biases = layer_dims[1..].iter().map(|&d| vec![T::zero(); d]).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activations: activations.to_vec(),
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(layer_dims: &[usize], activations: &[Activation], rng: &mut RngStream) -> Result<Self> {
        let mut params = Self::zeros(layer_dims, activations)?;
        for w in &mut params.weights {
            let (fan_out, fan_in) = w.shape();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w.as_mut_slice() {
                *v = rng.uniform(-limit, limit);
            }
        }
        Ok(params)
    }

    /// Same activation on every hidden layer, `output` on the last.
    pub fn init_with(
        layer_dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let n = layer_dims.len().saturating_sub(1);
        let mut acts = vec![hidden; n];
        if let Some(last) = acts.last_mut() {
            *last = output;
        }
        Self::init(layer_dims, &acts, rng)
    }

    /// Builds a network from explicit layers, validating every shape.
    pub fn from_layers(weights: Vec<Matrix<T>>, biases: Vec<Vec<T>>, activations: Vec<Activation>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::shape("weights and biases must be non-empty and paired"));
        }
        let mut layer_dims = vec![weights[0].cols()];
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.cols() != *layer_dims.last().unwrap() {
                return Err(Error::shape(format!("layer {i} input width mismatch")));
            }
            if b.len() != w.rows() {
                return Err(Error::shape(format!("layer {i} bias length mismatch")));
            }
            layer_dims.push(w.rows());
        }
        check_dims(&layer_dims, &activations)?;
        Ok(Self {
            layer_dims,
            weights,
            biases,
            activations,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn weights(&self) -> &[Matrix<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<T>] {
        &self.biases
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Matrix<T> {
        &mut self.weights[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Vec<T> {
        &mut self.biases[layer]
    }

    /// `Σ layer_dims[i+1] * (layer_dims[i] + 1)`.
    pub fn num_params(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    pub fn forward(&self, input: &[T]) -> Result<(Vec<T>, ForwardCache<T>)> {
        if input.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "network expects input of length {}, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let n = self.weights.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut post = Vec::with_capacity(n);
        let mut x = input.to_vec();
        for ((w, b), act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let mut z = w.matvec(&x)?;
            for (zi, &bi) in z.iter_mut().zip(b) {
                *zi = *zi + bi;
            }
            let y: Vec<T> = z.iter().map(|&v| act.apply(v)).collect();
            inputs.push(std::mem::replace(&mut x, y.clone()));
            pre.push(z);
            post.push(y);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("network output is not finite"));
        }
        Ok((
            x,
            ForwardCache {
                layer_dims: self.layer_dims.clone(),
                inputs,
                pre,
                post,
            },
        ))
    }

    /// Output only.
    pub fn predict(&self, input: &[T]) -> Result<Vec<T>> {
        self.forward(input).map(|(y, _)| y)
    }

    /// Exact gradient of a scalar loss whose gradient w.r.t. the network
    /// output is `output_grad`.
    pub fn backward(&self, cache: &ForwardCache<T>, output_grad: &[T]) -> Result<GradBuffer<T>> {
        let mut grad = GradBuffer::zeros_for(self);
        self.backward_accumulate(cache, output_grad, T::one(), &mut grad)?;
        Ok(grad)
    }

    /// Adds `scale` times the gradient into `grad`; returns the gradient with
    /// respect to the network input.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache<T>,
        output_grad: &[T],
        scale: T,
        grad: &mut GradBuffer<T>,
    ) -> Result<Vec<T>> {
        if cache.layer_dims != self.layer_dims {
            return Err(Error::shape("forward cache was produced by a different architecture"));
        }
        if !grad.matches(self) {
            return Err(Error::shape("gradient buffer does not match parameters"));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::shape(format!(
                "output gradient has length {}, network output has {}",
                output_grad.len(),
                self.output_dim()
            )));
        }
        let mut upstream = output_grad.to_vec();
        for l in (0..self.weights.len()).rev() {
            let act = self.activations[l];
            let delta: Vec<T> = upstream
                .iter()
                .zip(cache.pre[l].iter().zip(&cache.post[l]))
                .map(|(&g, (&z, &y))| g * act.derivative(z, y))
                .collect();
            grad.weights[l].add_outer(scale, &delta, &cache.inputs[l]);
            for (gb, &d) in grad.biases[l].iter_mut().zip(&delta) {
                *gb = *gb + scale * d;
            }
            upstream = self.weights[l].matvec_t(&delta)?;
        }
        Ok(upstream)
    }

    /// `self -= lr * grad`.
    pub fn descend(&mut self, grad: &GradBuffer<T>, lr: T) -> Result<()> {
        if !grad.matches(self) {
            return Err(Error::shape("gradient buffer does not match parameters"));
        }
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            w.axpy(-lr, g);
        }
        for (b, g) in self.biases.iter_mut().zip(&grad.biases) {
            for (bi, &gi) in b.iter_mut().zip(g) {
                *bi = *bi - lr * gi;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite) && self.biases.iter().flatten().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> MlpParams<U> {
        MlpParams {
            layer_dims: self.layer_dims.clone(),
            weights: self.weights.iter().map(Matrix::cast).collect(),
            biases: self
                .biases
                .iter()
                .map(|b| b.iter().map(|v| U::of(v.as_f64())).collect())
                .collect(),
            activations: self.activations.clone(),
        }
    }
}

impl<T: Scalar> GradBuffer<T> {
    pub fn zeros_for(params: &MlpParams<T>) -> Self {
        Self {
            weights: params
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: params.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
        }
    }

    pub fn matches(&self, params: &MlpParams<T>) -> bool {
        self.weights.len() == params.weights.len()
            && self
                .weights
                .iter()
                .zip(&params.weights)
                .all(|(g, w)| g.shape() == w.shape())
            && self.biases.iter().zip(&params.biases).all(|(g, b)| g.len() == b.len())
    }

    pub fn weights(&self) -> &[Matrix<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<T>] {
        &self.biases
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradBuffer<T>, scale: T) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.axpy(scale, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = *x + scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for w in &mut self.weights {
            w.scale(s);
        }
        for v in self.biases.iter_mut().flatten() {
            *v = *v * s;
        }
    }

    pub fn dot(&self, other: &GradBuffer<T>) -> T {
        let w: T = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| super::matrix::dot(a.as_slice(), b.as_slice()))
            .sum();
        let b: T = self
            .biases
            .iter()
            .zip(&other.biases)
            .map(|(a, b)| super::matrix::dot(a, b))
            .sum();
        w + b
    }

    pub fn l2_norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.weights
            .iter()
            .flat_map(|w| w.as_slice())
            .chain(self.biases.iter().flatten())
            .all(|&v| v == T::zero())
    }
}

fn flat_get<T: Scalar>(weights: &[Matrix<T>], biases: &[Vec<T>], mut k: usize) -> T {
    for (w, b) in weights.iter().zip(biases) {
        let n = w.as_slice().len();
        if k < n {
            return w.as_slice()[k];
        }
        k -= n;
        if k < b.len() {
            return b[k];
        }
        k -= b.len();
    }
    panic!("flat parameter index out of range");
}

fn flat_set<T: Scalar>(weights: &mut [Matrix<T>], biases: &mut [Vec<T>], mut k: usize, v: T) {
    for (w, b) in weights.iter_mut().zip(biases.iter_mut()) {
        let n = w.as_slice().len();
        if k < n {
            w.as_mut_slice()[k] = v;
            return;
        }
        k -= n;
        if k < b.len() {
            b[k] = v;
            return;
        }
        k -= b.len();
    }
    panic!("flat parameter index out of range");
}

impl<T: Scalar> FlatParams<T> for MlpParams<T> {
    fn flat_len(&self) -> usize {
        self.num_params()
    }

    fn flat_get(&self, k: usize) -> T {
        flat_get(&self.weights, &self.biases, k)
    }

    fn flat_set(&mut self, k: usize, v: T) {
        flat_set(&mut self.weights, &mut self.biases, k, v)
    }
}

impl<T: Scalar> FlatParams<T> for GradBuffer<T> {
    fn flat_len(&self) -> usize {
        self.weights.iter().map(|w| w.as_slice().len()).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    fn flat_get(&self, k: usize) -> T {
        flat_get(&self.weights, &self.biases, k)
    }

    fn flat_set(&mut self, k: usize, v: T) {
        flat_set(&mut self.weights, &mut self.biases, k, v)
    }
}
