//! Task models and their mini-batch losses.
//!
//! Every model is a stack of affine layers. Parameters are flattened layer
//! by layer; within a layer the `out × in` weight matrix comes first (row
//! major, one row per output unit) followed by the `out` biases.
//!
//! - linear regression: one layer `[d, 1]`, loss `½(ŷ − y)²`
//! - logistic regression: one layer `[d, C]`, softmax cross-entropy
//! - MLP: `[d, h₁, …, C]` with tanh or ReLU hidden units, softmax
//!   cross-entropy

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LinearRegression,
    LogisticRegression,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    // Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    kind: ModelKind,
    layer_dims: Vec<usize>,
    activation: Activation,
}

impl ModelSpec {
    pub fn linear_regression(input_dim: usize) -> Self {
        Self {
            kind: ModelKind::LinearRegression,
            layer_dims: vec![input_dim, 1],
            activation: Activation::default(),
        }
    }

    pub fn logistic_regression(input_dim: usize, classes: usize) -> Self {
        Self {
            kind: ModelKind::LogisticRegression,
            layer_dims: vec![input_dim, classes],
            activation: Activation::default(),
        }
    }

    pub fn mlp(layer_dims: Vec<usize>, activation: Activation) -> Self {
        Self {
            kind: ModelKind::Mlp,
            layer_dims,
            activation,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated spec")
    }

    pub fn is_classifier(&self) -> bool {
        self.kind != ModelKind::LinearRegression
    }

    pub fn validate(&self) -> Result<()> {
        let dims = &self.layer_dims;
        if dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("layer dims {dims:?} contain zero")));
        }
        let ok = match self.kind {
            ModelKind::LinearRegression => dims.len() == 2 && dims[1] == 1,
            ModelKind::LogisticRegression => dims.len() == 2 && dims[1] >= 2,
            ModelKind::Mlp => dims.len() >= 3 && dims[dims.len() - 1] >= 2,
        };
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "layer dims {dims:?} do not fit a {:?} model",
                self.kind
            )));
        }
        Ok(())
    }

    /// Flattened parameter count `n`.
    pub fn num_params(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Starting point shared by all clients. Single-layer models start at
    /// zero; MLP weights are uniform in `±sqrt(6 / (in + out))` with zero
    /// biases.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut w = vec![0.0; self.num_params()];
        if self.kind != ModelKind::Mlp {
            return w;
        }
        let mut rng = rng::stream(seed, rng::MODEL_INIT);
        let mut offset = 0;
        for pair in self.layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in &mut w[offset..offset + fan_in * fan_out] {
                *x = rng.random_range(-limit..limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        w
    }

    fn check(&self, w: &[f64], data: &Dataset, batch: &[usize]) -> Result<()> {
        if w.len() != self.num_params() {
            return Err(Error::InvalidArgument(format!(
                "parameter vector has length {}, model needs {}",
                w.len(),
                self.num_params()
            )));
        }
        if data.dim() != self.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "feature dimension {} does not match model input {}",
                data.dim(),
                self.input_dim()
            )));
        }
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        Ok(())
    }

    /// Mean loss over `batch`.
    pub fn loss(&self, w: &[f64], data: &Dataset, batch: &[usize]) -> Result<f64> {
        self.check(w, data, batch)?;
        let mut net = Workspace::new(self);
        let mut total = 0.0;
        for &i in batch {
            total += net.sample(self, w, data.row(i), data.target(i), None)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean loss and mean gradient over `batch`.
    pub fn loss_and_grad(&self, w: &[f64], data: &Dataset, batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check(w, data, batch)?;
        let mut net = Workspace::new(self);
        let mut grad = vec![0.0; w.len()];
        let mut total = 0.0;
        for &i in batch {
            total += net.sample(self, w, data.row(i), data.target(i), Some(&mut grad))?;
        }
        let inv = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok((total * inv, grad))
    }

    /// Network output for one input row.
    pub fn predict(&self, w: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let mut net = Workspace::new(self);
        net.forward(self, w, x)?;
        Ok(net.acts.last().expect("output layer").clone())
    }

    /// Top-1 accuracy for classifiers. For regression, the coefficient of
    /// determination clamped to [0, 1].
    pub fn accuracy(&self, w: &[f64], data: &Dataset, idx: &[usize]) -> Result<f64> {
        if idx.is_empty() {
            return Ok(0.0);
        }
        self.check(w, data, idx)?;
        let mut net = Workspace::new(self);
        if self.is_classifier() {
            let mut correct = 0usize;
            for &i in idx {
                net.forward(self, w, data.row(i))?;
                let out = net.acts.last().expect("output layer");
                let best = argmax(out);
                correct += usize::from(best == data.target(i) as usize);
            }
            Ok(correct as f64 / idx.len() as f64)
        } else {
            let mean = idx.iter().map(|&i| data.target(i)).sum::<f64>() / idx.len() as f64;
            let (mut sse, mut sst) = (0.0, 0.0);
            for &i in idx {
                net.forward(self, w, data.row(i))?;
                let y = data.target(i);
                sse += (net.acts.last().expect("output layer")[0] - y).powi(2);
                sst += (y - mean).powi(2);
            }
            if sst == 0.0 {
                return Ok(if sse == 0.0 { 1.0 } else { 0.0 });
            }
            Ok((1.0 - sse / sst).clamp(0.0, 1.0))
        }
    }
}

/// Mean loss and gradient of the task loss on a mini-batch.
pub fn task_loss_and_grad(spec: &ModelSpec, w: &[f64], data: &Dataset, batch: &[usize]) -> Result<(f64, Vec<f64>)> {
    spec.loss_and_grad(w, data, batch)
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) },
        )
        .0
}

// Per-sample activations and backprop deltas, reused across a batch.
struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    fn new(spec: &ModelSpec) -> Self {
        let widest = spec.layer_dims.iter().copied().max().unwrap_or(0);
        Self {
            acts: spec.layer_dims.iter().map(|&d| vec![0.0; d]).collect(),
            delta: Vec::with_capacity(widest),
            delta_prev: Vec::with_capacity(widest),
        }
    }

    fn forward(&mut self, spec: &ModelSpec, w: &[f64], x: &[f64]) -> Result<()> {
        self.acts[0].copy_from_slice(x);
        let layers = spec.layer_dims.len() - 1;
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (spec.layer_dims[l], spec.layer_dims[l + 1]);
            let weights = &w[offset..offset + fan_out * fan_in];
            let bias = &w[offset + fan_out * fan_in..offset + fan_out * fan_in + fan_out];
            let (before, after) = self.acts.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            for (o, value) in out.iter_mut().enumerate() {
                *value = bias[o] + linalg::dot(&weights[o * fan_in..(o + 1) * fan_in], input);
            }
            if l + 1 < layers {
                out.iter_mut().for_each(|v| *v = spec.activation.apply(*v));
            }
            if !linalg::all_finite(out) {
                return Err(Error::numeric(format!("forward pass, layer {l}")));
            }
            offset += fan_out * fan_in + fan_out;
        }
        Ok(())
    }

    // Returns the sample loss; accumulates its gradient into `grad` if given.
    fn sample(&mut self, spec: &ModelSpec, w: &[f64], x: &[f64], y: f64, grad: Option<&mut [f64]>) -> Result<f64> {
        self.forward(spec, w, x)?;
        let out = self.acts.last().expect("output layer");
        self.delta.clear();
        let loss = if spec.is_classifier() {
            let label = y as usize;
            if y < 0.0 || y.fract() != 0.0 || label >= out.len() {
                return Err(Error::InvalidArgument(format!("label {y} outside 0..{}", out.len())));
            }
            let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = out.iter().map(|z| (z - max).exp()).sum();
            let lse = max + sum.ln();
            self.delta.extend(out.iter().map(|z| (z - lse).exp()));
            self.delta[label] -= 1.0;
            lse - out[label]
        } else {
            let r = out[0] - y;
            self.delta.push(r);
            0.5 * r * r
        };
        if !loss.is_finite() {
            return Err(Error::numeric(format!("loss, layer {}", spec.layer_dims.len() - 2)));
        }

        let Some(grad) = grad else { return Ok(loss) };
        let layers = spec.layer_dims.len() - 1;
        let mut end = w.len();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (spec.layer_dims[l], spec.layer_dims[l + 1]);
            let w_start = end - fan_out - fan_out * fan_in;
            let b_start = end - fan_out;
            let input = &self.acts[l];
            for o in 0..fan_out {
                let d = self.delta[o];
                grad[b_start + o] += d;
                linalg::axpy(d, input, &mut grad[w_start + o * fan_in..w_start + (o + 1) * fan_in]);
            }
            if l > 0 {
                self.delta_prev.clear();
                self.delta_prev.resize(fan_in, 0.0);
                for o in 0..fan_out {
                    let row = &w[w_start + o * fan_in..w_start + (o + 1) * fan_in];
                    linalg::axpy(self.delta[o], row, &mut self.delta_prev);
                }
                for (dp, &a) in self.delta_prev.iter_mut().zip(input) {
                    *dp *= spec.activation.derivative_from_output(a);
                }
                std::mem::swap(&mut self.delta, &mut self.delta_prev);
            }
            end = w_start;
        }
        Ok(loss)
    }
}
