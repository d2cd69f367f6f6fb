//! Dense feed-forward classifier, cross-entropy loss and plain SGD.
//!
//! This is the only training engine in the crate. A network is a chain of
//! affine layers `z = W x + b`; every layer except the last applies the
//! configured hidden activation. The last layer produces raw logits which the
//! classifier path normalizes with a softmax into a [`LogitVector`].
//!
//! Weights are row-major `(out_dim, in_dim)`, scalars are `f64`.
//!
//! The gradient of the distillation-regularized loss is computed analytically,
//! including the `1e-12` guard inside the logarithm, so it agrees with central
//! finite differences of [`cross_entropy`] to rounding error.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Guard added to probabilities inside the logarithm of [`cross_entropy`].
pub const LOG_EPS: f64 = 1e-12;

/// Allowed deviation of a probability vector's sum from one.
pub const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("layer {layer}: expected input of length {expected}, got {found}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("vector length mismatch: expected {expected}, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid layer sizes {0:?}: need at least two sizes, all positive")]
    InvalidDims(Vec<usize>),
    #[error("gradient structure does not match the weights")]
    Incongruent,
    #[error("non-finite value in gradient")]
    NonFiniteGradient,
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidLearningRate(f64),
    #[error("distillation weight must be non-negative and finite, got {0}")]
    InvalidGamma(f64),
    #[error("label {label} out of range for {num_labels} labels")]
    InvalidLabel { label: usize, num_labels: usize },
    #[error("not a probability vector: {0}")]
    InvalidProbabilities(String),
    #[error("snapshot holds {found} parameters, dims imply {expected}")]
    SnapshotSize { expected: usize, found: usize },
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Sigmoid,
    LeakyRelu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    0.2 * z
                }
            }
        }
    }

    /// Derivative given the pre-activation `z` and the activation `a = f(z)`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.2
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// A labelled feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

/// Affine layer, weights row-major `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).fold(*b, |acc, (w, v)| acc + w * v))
            .collect()
    }
}

/// Network parameters. Also used as the gradient container, since a gradient
/// is congruent with the weights it was taken against.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    layers: Vec<DenseLayer>,
    activation: Activation,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[t]` is the input to layer `t`; `inputs[0]` is the sample.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations per layer; the last entry is the raw output logits.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        self.pre.last().expect("network has at least one layer")
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(NnError::InvalidDims(dims.to_vec()));
    }
    Ok(())
}

impl ModelWeights {
    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        validate_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::zeros(w[0], w[1]))
            .collect();
        Ok(Self { layers, activation })
    }

    /// Xavier-uniform weights in `[-r, r]`, `r = sqrt(6 / (fan_in + fan_out))`,
    /// zero biases.
    pub fn xavier<R: Rng + ?Sized>(
        dims: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut w = Self::zeros(dims, activation)?;
        for layer in &mut w.layers {
            let r = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            for v in &mut layer.weights {
                *v = rng.random_range(-r..=r);
            }
        }
        Ok(w)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.in_dim, l.out_dim))
                .collect(),
            activation: self.activation,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].in_dim];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameters in snapshot order: per layer, weights row-major then biases.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    pub fn is_congruent(&self, other: &ModelWeights) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &ModelWeights, alpha: f64) -> Result<()> {
        if !self.is_congruent(other) {
            return Err(NnError::Incongruent);
        }
        for (a, b) in self.params_mut().zip(other.params()) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in self.params_mut() {
            *v *= alpha;
        }
    }

    pub fn forward_cache(&self, features: &[f64]) -> Result<ForwardCache> {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut x = features.to_vec();
        for (t, layer) in self.layers.iter().enumerate() {
            if x.len() != layer.in_dim {
                return Err(NnError::DimensionMismatch {
                    layer: t,
                    expected: layer.in_dim,
                    found: x.len(),
                });
            }
            let z = layer.affine(&x);
            let next = if t + 1 < n {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                Vec::new()
            };
            inputs.push(x);
            pre.push(z);
            x = next;
        }
        Ok(ForwardCache { inputs, pre })
    }

    /// Raw output-layer values, before any output normalization.
    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        let mut cache = self.forward_cache(features)?;
        Ok(cache.pre.pop().expect("at least one layer"))
    }

    /// Backpropagates `d_logits` (dL/d output logits) through a cached pass.
    /// Returns the parameter gradient and dL/d input.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &[f64]) -> (ModelWeights, Vec<f64>) {
        let mut grad = self.zeros_like();
        let mut delta = d_logits.to_vec();
        let mut d_input = Vec::new();
        for t in (0..self.layers.len()).rev() {
            let layer = &self.layers[t];
            let input = &cache.inputs[t];
            let g = &mut grad.layers[t];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] = d;
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gw, &x) in row.iter_mut().zip(input) {
                    *gw = d * x;
                }
            }
            let mut d_in = vec![0.0; layer.in_dim];
            for (row, &d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
                for (acc, &w) in d_in.iter_mut().zip(row) {
                    *acc += w * d;
                }
            }
            if t > 0 {
                let z_prev = &cache.pre[t - 1];
                for ((v, &z), &a) in d_in.iter_mut().zip(z_prev).zip(input) {
                    *v *= self.activation.derivative(z, a);
                }
                delta = d_in;
            } else {
                d_input = d_in;
            }
        }
        (grad, d_input)
    }

    pub fn snapshot(&self) -> WeightSnapshot {
        WeightSnapshot {
            dims: self.dims(),
            activation: self.activation,
            params: self.params().copied().collect(),
        }
    }

    pub fn from_snapshot(s: &WeightSnapshot) -> Result<Self> {
        let mut w = Self::zeros(&s.dims, s.activation)?;
        let expected = w.param_count();
        if s.params.len() != expected {
            return Err(NnError::SnapshotSize {
                expected,
                found: s.params.len(),
            });
        }
        for (dst, src) in w.params_mut().zip(&s.params) {
            *dst = *src;
        }
        Ok(w)
    }
}

/// Flat checkpoint form: dimension header plus parameters in [`ModelWeights::params`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSnapshot {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
}

/// Softmax-normalized class-probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    /// Validates entries in `[0, 1]` summing to one within [`SUM_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(NnError::InvalidProbabilities("empty".into()));
        }
        if let Some(v) = probs.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(NnError::InvalidProbabilities(format!(
                "entry {v} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(NnError::InvalidProbabilities(format!("sums to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    pub fn one_hot(len: usize, hot: usize) -> Self {
        let mut v = vec![0.0; len];
        v[hot] = 1.0;
        Self(v)
    }

    pub fn from_logits(logits: &[f64]) -> Self {
        Self(softmax(logits))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for LogitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for LogitVector {
    type Error = NnError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LogitVector> for Vec<f64> {
    fn from(v: LogitVector) -> Self {
        v.0
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Model prediction: softmax of the network output.
pub fn forward(w: &ModelWeights, features: &[f64]) -> Result<LogitVector> {
    Ok(LogitVector::from_logits(&w.logits(features)?))
}

/// `-sum_l target_l * ln(pred_l + 1e-12)`.
pub fn cross_entropy(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(NnError::LengthMismatch {
            expected: target.len(),
            found: pred.len(),
        });
    }
    let ce = -pred
        .iter()
        .zip(target)
        .map(|(p, t)| t * (p + LOG_EPS).ln())
        .sum::<f64>();
    // ln(1 + eps) > 0 would otherwise push a perfect prediction just below zero
    Ok(ce.max(0.0))
}

/// Combined per-sample loss: CE against the one-hot label plus
/// `gamma` times CE against the teacher, when one is given.
pub fn fd_loss(
    w: &ModelWeights,
    sample: &Sample,
    teacher: Option<&LogitVector>,
    gamma: f64,
) -> Result<f64> {
    let pred = forward(w, &sample.features)?;
    let l = pred.len();
    check_label(sample.label, l)?;
    let mut loss = cross_entropy(
        pred.as_slice(),
        LogitVector::one_hot(l, sample.label).as_slice(),
    )?;
    if let Some(t) = teacher {
        loss += gamma * cross_entropy(pred.as_slice(), t.as_slice())?;
    }
    Ok(loss)
}

fn check_label(label: usize, num_labels: usize) -> Result<()> {
    if label >= num_labels {
        return Err(NnError::InvalidLabel { label, num_labels });
    }
    Ok(())
}

/// dL/dz for `L = -sum_k c_k ln(p_k + eps)`, `p = softmax(z)`.
///
/// With `g_k = -c_k / (p_k + eps)`, `dL/dz_j = p_j (g_j - sum_k g_k p_k)`.
fn weighted_ce_logit_grad(probs: &[f64], weights: &[f64]) -> Vec<f64> {
    let g: Vec<f64> = probs
        .iter()
        .zip(weights)
        .map(|(p, c)| -c / (p + LOG_EPS))
        .collect();
    let s: f64 = g.iter().zip(probs).map(|(g, p)| g * p).sum();
    probs.iter().zip(&g).map(|(p, g)| p * (g - s)).collect()
}

/// Exact gradient of [`fd_loss`] with respect to every weight.
pub fn fd_loss_gradient(
    w: &ModelWeights,
    sample: &Sample,
    teacher: Option<&LogitVector>,
    gamma: f64,
) -> Result<ModelWeights> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(NnError::InvalidGamma(gamma));
    }
    let cache = w.forward_cache(&sample.features)?;
    let probs = softmax(cache.logits());
    let l = probs.len();
    check_label(sample.label, l)?;
    let mut target = vec![0.0; l];
    target[sample.label] = 1.0;
    if let Some(t) = teacher {
        if t.len() != l {
            return Err(NnError::LengthMismatch {
                expected: l,
                found: t.len(),
            });
        }
        for (c, v) in target.iter_mut().zip(t.as_slice()) {
            *c += gamma * v;
        }
    }
    let d_logits = weighted_ce_logit_grad(&probs, &target);
    Ok(w.backward(&cache, &d_logits).0)
}

/// `w - eta * grad`.
pub fn sgd_step(w: &ModelWeights, grad: &ModelWeights, eta: f64) -> Result<ModelWeights> {
    let mut next = w.clone();
    sgd_step_in_place(&mut next, grad, eta)?;
    Ok(next)
}

pub fn sgd_step_in_place(w: &mut ModelWeights, grad: &ModelWeights, eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(NnError::InvalidLearningRate(eta));
    }
    if !w.is_congruent(grad) {
        return Err(NnError::Incongruent);
    }
    if !grad.is_finite() {
        return Err(NnError::NonFiniteGradient);
    }
    w.add_scaled(grad, -eta)
}

pub fn predict(w: &ModelWeights, features: &[f64]) -> Result<usize> {
    Ok(argmax(&w.logits(features)?))
}

/// Fraction of samples whose predicted label matches; 0 for an empty set.
pub fn accuracy(w: &ModelWeights, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for s in samples {
        if predict(w, &s.features)? == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelTally {
    pub correct: usize,
    pub total: usize,
}

impl LabelTally {
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

pub fn per_label_accuracy(
    w: &ModelWeights,
    samples: &[Sample],
    num_labels: usize,
) -> Result<Vec<LabelTally>> {
    let mut tallies = vec![LabelTally::default(); num_labels];
    for s in samples {
        check_label(s.label, num_labels)?;
        let t = &mut tallies[s.label];
        t.total += 1;
        if predict(w, &s.features)? == s.label {
            t.correct += 1;
        }
    }
    Ok(tallies)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Central finite differences of `fd_loss`, perturbing one parameter at a time.
    fn numeric_gradient(
        w: &ModelWeights,
        s: &Sample,
        teacher: Option<&LogitVector>,
        gamma: f64,
        h: f64,
    ) -> Vec<f64> {
        let n = w.param_count();
        (0..n)
            .map(|i| {
                let mut plus = w.clone();
                *plus.params_mut().nth(i).unwrap() += h;
                let mut minus = w.clone();
                *minus.params_mut().nth(i).unwrap() -= h;
                let lp = fd_loss(&plus, s, teacher, gamma).unwrap();
                let lm = fd_loss(&minus, s, teacher, gamma).unwrap();
                (lp - lm) / (2.0 * h)
            })
            .collect()
    }

    fn rel_error(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / (na + nb).max(1e-12)
    }

    #[test]
    fn zero_network_is_uniform() {
        let w = ModelWeights::zeros(&[5, 4, 3], Activation::Relu).unwrap();
        let p = forward(&w, &[0.3, 0.1, 0.9, 0.0, 1.0]).unwrap();
        for v in p.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_like_single_layer_picks_hot_index() {
        let mut w = ModelWeights::zeros(&[4, 4], Activation::Relu).unwrap();
        for i in 0..4 {
            w.layers_mut()[0].weights[i * 4 + i] = 3.0;
        }
        for hot in 0..4 {
            let mut x = vec![0.0; 4];
            x[hot] = 1.0;
            let p = forward(&w, &x).unwrap();
            assert_eq!(p.argmax(), hot);
            // logits are 3 at `hot`, 0 elsewhere
            let expected = 3f64.exp() / (3f64.exp() + 3.0);
            assert!((p.as_slice()[hot] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_reports_offending_layer() {
        let w = ModelWeights::zeros(&[3, 2, 2], Activation::Relu).unwrap();
        assert_eq!(
            forward(&w, &[1.0, 2.0]).unwrap_err(),
            NnError::DimensionMismatch {
                layer: 0,
                expected: 3,
                found: 2
            }
        );
    }

    #[test]
    fn cross_entropy_reference_values() {
        let perfect = cross_entropy(&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert!((0.0..1e-11).contains(&perfect));

        let l = 7;
        let uniform = vec![1.0 / l as f64; l];
        let ce = cross_entropy(&uniform, LogitVector::one_hot(l, 2).as_slice()).unwrap();
        assert!((ce - (l as f64).ln()).abs() < 1e-9);

        let ce = cross_entropy(&[0.7, 0.3], &[0.5, 0.5]).unwrap();
        assert!((ce - 0.780_32).abs() < 1e-5);
        assert!((ce - 0.5 * (-(0.7f64).ln() - (0.3f64).ln())).abs() < 1e-10);

        assert!(matches!(
            cross_entropy(&[0.5, 0.5], &[1.0]),
            Err(NnError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn gamma_zero_matches_plain_gradient() {
        let w = ModelWeights::xavier(&[3, 5, 4], Activation::Tanh, &mut rng(1)).unwrap();
        let s = Sample::new(vec![0.2, 0.5, 0.9], 1);
        let teacher = LogitVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let plain = fd_loss_gradient(&w, &s, None, 0.0).unwrap();
        let zeroed = fd_loss_gradient(&w, &s, Some(&teacher), 0.0).unwrap();
        assert_eq!(plain, zeroed);
    }

    #[test]
    fn one_hot_teacher_doubles_gradient() {
        let w = ModelWeights::xavier(&[3, 5, 4], Activation::Relu, &mut rng(2)).unwrap();
        let s = Sample::new(vec![0.7, 0.1, 0.4], 3);
        let plain = fd_loss_gradient(&w, &s, None, 0.0).unwrap();
        let doubled = fd_loss_gradient(&w, &s, Some(&LogitVector::one_hot(4, 3)), 1.0).unwrap();
        for (p, d) in plain.params().zip(doubled.params()) {
            assert!((2.0 * p - d).abs() <= 1e-12 * (1.0 + d.abs()));
        }
    }

    #[test]
    fn gradient_matches_finite_differences_on_2_4_3() {
        let mut r = rng(3);
        let w = ModelWeights::xavier(&[2, 4, 3], Activation::Tanh, &mut r).unwrap();
        let s = Sample::new(vec![r.random(), r.random()], 2);
        let teacher = LogitVector::from_logits(&[r.random(), r.random(), r.random()]);
        let analytic: Vec<f64> = fd_loss_gradient(&w, &s, Some(&teacher), 0.7)
            .unwrap()
            .params()
            .copied()
            .collect();
        let numeric = numeric_gradient(&w, &s, Some(&teacher), 0.7, 1e-5);
        assert!(rel_error(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn invalid_gamma_rejected() {
        let w = ModelWeights::zeros(&[2, 2], Activation::Relu).unwrap();
        let s = Sample::new(vec![0.0, 0.0], 0);
        assert!(matches!(
            fd_loss_gradient(&w, &s, None, -1.0),
            Err(NnError::InvalidGamma(_))
        ));
    }

    #[test]
    fn sgd_step_properties() {
        let w = ModelWeights::xavier(&[3, 4, 2], Activation::Relu, &mut rng(4)).unwrap();
        let zero = w.zeros_like();
        assert_eq!(sgd_step(&w, &zero, 0.1).unwrap(), w);

        let cleared = sgd_step(&w, &w, 1.0).unwrap();
        assert!(cleared.params().all(|&v| v == 0.0));

        let g = ModelWeights::xavier(&[3, 4, 2], Activation::Relu, &mut rng(5)).unwrap();
        let twice = sgd_step(&sgd_step(&w, &g, 0.25).unwrap(), &g, 0.25).unwrap();
        let mut direct = w.clone();
        direct.add_scaled(&g, -0.5).unwrap();
        for (a, b) in twice.params().zip(direct.params()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn sgd_step_rejects_bad_inputs() {
        let w = ModelWeights::zeros(&[2, 2], Activation::Relu).unwrap();
        let mut g = w.zeros_like();
        assert!(matches!(
            sgd_step(&w, &g, 0.0),
            Err(NnError::InvalidLearningRate(_))
        ));
        g.layers_mut()[0].bias[1] = f64::NAN;
        assert_eq!(
            sgd_step(&w, &g, 0.1).unwrap_err(),
            NnError::NonFiniteGradient
        );
        let other = ModelWeights::zeros(&[2, 3], Activation::Relu).unwrap();
        assert_eq!(sgd_step(&w, &other, 0.1).unwrap_err(), NnError::Incongruent);
    }

    #[test]
    fn snapshot_restores_weights() {
        let w = ModelWeights::xavier(&[6, 5, 3], Activation::LeakyRelu, &mut rng(6)).unwrap();
        let snap = w.snapshot();
        assert_eq!(snap.dims, vec![6, 5, 3]);
        assert_eq!(snap.params.len(), 6 * 5 + 5 + 5 * 3 + 3);
        let json = serde_json::to_string(&snap).unwrap();
        let back: WeightSnapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(ModelWeights::from_snapshot(&back).unwrap(), w);

        let mut short = snap;
        short.params.pop();
        assert!(matches!(
            ModelWeights::from_snapshot(&short),
            Err(NnError::SnapshotSize { .. })
        ));
    }

    #[test]
    fn logit_vector_validation() {
        assert!(LogitVector::new(vec![0.5, 0.5]).is_ok());
        assert!(LogitVector::new(vec![0.6, 0.5]).is_err());
        assert!(LogitVector::new(vec![1.2, -0.2]).is_err());
        assert!(serde_json::from_str::<LogitVector>("[0.9, 0.9]").is_err());
    }

    proptest! {
        #[test]
        fn forward_output_is_probability_vector(
            seed in any::<u64>(),
            scale in 0.1f64..20.0,
            x in proptest::collection::vec(0.0f64..1.0, 4),
        ) {
            let mut w = ModelWeights::xavier(&[4, 6, 5], Activation::Relu, &mut rng(seed)).unwrap();
            w.scale(scale);
            let p = forward(&w, &x).unwrap();
            let sum: f64 = p.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() <= SUM_TOLERANCE);
            prop_assert!(p.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(forward(&w, &x).unwrap(), p);
        }

        #[test]
        fn cross_entropy_non_negative(
            logits in proptest::collection::vec(-10.0f64..10.0, 5),
            target_logits in proptest::collection::vec(-10.0f64..10.0, 5),
        ) {
            let ce = cross_entropy(&softmax(&logits), &softmax(&target_logits)).unwrap();
            prop_assert!(ce >= 0.0);
        }
    }
}
