//! Dense feed-forward networks with two training heads: softmax
//! cross-entropy (beam predictor) and masked squared error (Q-network).
//!
//! Weights of a layer are stored input-major, `w[i * out + j]` connecting
//! input `i` to output `j`, so a batch forward pass is a single
//! `X (B x in) * W (in x out)` product.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, FORMAT_VERSION, MAGIC};
pub use optim::{Optimizer, OptimizerKind};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probabilities are floored here before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{what}: expected length {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("gradient contains a non-finite value; update rejected")]
    NonFiniteGradient,
    #[error("parameters became non-finite after an update")]
    NonFiniteParameters,
    #[error("learning rate must be finite and > 0, got {0}")]
    BadLearningRate(f64),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Relu => 1,
            Activation::Identity => 0,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            output_dim,
            activation,
        }
    }

    pub fn num_params(&self) -> usize {
        self.input_dim * self.output_dim + self.output_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    seed: u64,
}

/// Parameter-shaped buffers: one weight and one bias vector per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &Mlp) -> Self {
        Self {
            weights: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.biases.len()])
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.biases).flatten()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, g| m.max(g.abs()))
    }

    fn matches(&self, model: &Mlp) -> bool {
        self.weights.len() == model.layers.len()
            && self.biases.len() == model.layers.len()
            && model.layers.iter().enumerate().all(|(k, l)| {
                self.weights[k].len() == l.weights.len() && self.biases[k].len() == l.biases.len()
            })
    }
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(NnError::InvalidSpec(
            "at least one layer is required".into(),
        ));
    }
    for (k, s) in specs.iter().enumerate() {
        if s.input_dim == 0 || s.output_dim == 0 {
            return Err(NnError::InvalidSpec(format!(
                "layer {k} has a zero dimension"
            )));
        }
        if k > 0 && specs[k - 1].output_dim != s.input_dim {
            return Err(NnError::InvalidSpec(format!(
                "layer {k} input_dim {} does not match layer {} output_dim {}",
                s.input_dim,
                k - 1,
                specs[k - 1].output_dim
            )));
        }
    }
    Ok(())
}

/// Layer specs for `input -> hidden... -> output` with relu hidden layers and
/// an identity output layer.
pub fn dense_stack(input: usize, hidden: &[usize], output: usize) -> Vec<LayerSpec> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims.windows(2)
        .enumerate()
        .map(|(k, w)| {
            let act = if k + 2 == dims.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            LayerSpec::new(w[0], w[1], act)
        })
        .collect()
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_specs(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .map(|&spec| {
                let limit = (6.0 / (spec.input_dim + spec.output_dim) as f64).sqrt();
                let weights = (0..spec.input_dim * spec.output_dim)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                Dense {
                    spec,
                    weights,
                    biases: vec![0.0; spec.output_dim],
                }
            })
            .collect();
        Ok(Self { layers, seed })
    }

    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        validate_specs(specs)?;
        let layers = specs
            .iter()
            .map(|&spec| Dense {
                spec,
                weights: vec![0.0; spec.input_dim * spec.output_dim],
                biases: vec![0.0; spec.output_dim],
            })
            .collect();
        Ok(Self { layers, seed: 0 })
    }

    /// Builds a model from explicit parameters, checking every shape.
    pub fn from_layers(layers: Vec<Dense>, seed: u64) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        validate_specs(&specs)?;
        for (k, l) in layers.iter().enumerate() {
            if l.weights.len() != l.spec.input_dim * l.spec.output_dim
                || l.biases.len() != l.spec.output_dim
            {
                return Err(NnError::InvalidSpec(format!(
                    "layer {k} parameter lengths do not match its spec"
                )));
            }
        }
        Ok(Self { layers, seed })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.output_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.spec.num_params()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    pub fn params_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    /// Copies every parameter from `other`, which must share the layout.
    pub fn copy_params_from(&mut self, other: &Mlp) {
        assert_eq!(self.specs(), other.specs(), "layout mismatch");
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weights.copy_from_slice(&src.weights);
            dst.biases.copy_from_slice(&src.biases);
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward_batch(input, 1)
    }

    /// Outputs for `batch` row-major inputs, `batch x output_dim`.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut acts = self.forward_trace(inputs, batch)?;
        Ok(acts.pop().unwrap_or_default())
    }

    /// Post-activation outputs of every layer, input included.
    fn forward_trace(&self, inputs: &[f64], batch: usize) -> Result<Vec<Vec<f64>>> {
        let expected = batch * self.input_dim();
        if inputs.len() != expected {
            return Err(NnError::Shape {
                what: "input",
                expected,
                got: inputs.len(),
            });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.to_vec());
        for layer in &self.layers {
            let (n_in, n_out) = (layer.spec.input_dim, layer.spec.output_dim);
            let x = acts.last().unwrap();
            let mut z = Vec::with_capacity(batch * n_out);
            for _ in 0..batch {
                z.extend_from_slice(&layer.biases);
            }
            gemm(
                batch,
                n_in,
                n_out,
                1.0,
                x,
                (n_in, 1),
                &layer.weights,
                (n_out, 1),
                1.0,
                &mut z,
            );
            if layer.spec.activation == Activation::Relu {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Backpropagates `d_out` (gradient w.r.t. the final outputs, `batch x out`).
    fn backward_from(&self, acts: &[Vec<f64>], mut delta: Vec<f64>, batch: usize) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let (n_in, n_out) = (layer.spec.input_dim, layer.spec.output_dim);
            let x = &acts[k];
            // dW = X^T * delta
            gemm(
                n_in,
                batch,
                n_out,
                1.0,
                x,
                (1, n_in),
                &delta,
                (n_out, 1),
                0.0,
                &mut grads.weights[k],
            );
            let db = &mut grads.biases[k];
            for row in delta.chunks_exact(n_out) {
                db.iter_mut().zip(row).for_each(|(b, d)| *b += d);
            }
            if k == 0 {
                break;
            }
            // dX = delta * W^T, masked by the previous layer's relu
            let mut dx = vec![0.0; batch * n_in];
            gemm(
                batch,
                n_out,
                n_in,
                1.0,
                &delta,
                (n_out, 1),
                &layer.weights,
                (1, n_out),
                0.0,
                &mut dx,
            );
            if self.layers[k - 1].spec.activation == Activation::Relu {
                dx.iter_mut().zip(x).for_each(|(d, &a)| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            delta = dx;
        }
        grads
    }

    /// Mean softmax cross-entropy over a batch and its exact gradient.
    pub fn ce_gradients(&self, inputs: &[f64], labels: &[usize]) -> Result<(Gradients, f64)> {
        self.ce_gradients_counted(inputs, labels)
            .map(|(g, l, _)| (g, l))
    }

    /// As [`Mlp::ce_gradients`], also counting rows whose argmax equals the label.
    pub fn ce_gradients_counted(
        &self,
        inputs: &[f64],
        labels: &[usize],
    ) -> Result<(Gradients, f64, usize)> {
        let batch = labels.len();
        let classes = self.output_dim();
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(NnError::LabelOutOfRange { label, classes });
        }
        let acts = self.forward_trace(inputs, batch)?;
        let logits = acts.last().unwrap();
        let scale = 1.0 / batch as f64;
        let mut delta = Vec::with_capacity(logits.len());
        let mut loss = 0.0;
        let mut hits = 0;
        for (row, &label) in logits.chunks_exact(classes).zip(labels) {
            let p = softmax(row);
            loss += cross_entropy(&p, label)?;
            hits += (argmax(row) == label) as usize;
            delta.extend(p.iter().enumerate().map(|(m, &pm)| {
                let target = if m == label { 1.0 } else { 0.0 };
                (pm - target) * scale
            }));
        }
        Ok((self.backward_from(&acts, delta, batch), loss * scale, hits))
    }

    /// Mean over the batch of `0.5 * sum_i mask_i * (out_i - target_i)^2` and its gradient.
    pub fn mse_gradients(
        &self,
        inputs: &[f64],
        targets: &[f64],
        masks: &[f64],
        batch: usize,
    ) -> Result<(Gradients, f64)> {
        let expected = batch * self.output_dim();
        for (what, v) in [("target", targets), ("mask", masks)] {
            if v.len() != expected {
                return Err(NnError::Shape {
                    what,
                    expected,
                    got: v.len(),
                });
            }
        }
        let acts = self.forward_trace(inputs, batch)?;
        let out = acts.last().unwrap();
        let scale = 1.0 / batch as f64;
        let mut loss = 0.0;
        let delta = out
            .iter()
            .zip(targets)
            .zip(masks)
            .map(|((&o, &t), &m)| {
                let e = m * (o - t);
                loss += 0.5 * m * (o - t) * (o - t);
                e * scale
            })
            .collect();
        Ok((self.backward_from(&acts, delta, batch), loss * scale))
    }
}

/// Single-example cross-entropy gradient.
pub fn backward(model: &Mlp, input: &[f64], label: usize) -> Result<Gradients> {
    model.ce_gradients(input, &[label]).map(|(g, _)| g)
}

/// Single-example gradient of `0.5 * sum_i mask_i * (out_i - target_i)^2`.
pub fn mse_backward(model: &Mlp, input: &[f64], target: &[f64], mask: &[f64]) -> Result<Gradients> {
    model.mse_gradients(input, target, mask, 1).map(|(g, _)| g)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln(max(p[label], 1e-12))`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or(NnError::LabelOutOfRange {
        label,
        classes: probs.len(),
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Index of the largest entry, ties to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `C = alpha * A * B + beta * C` with `C` row-major `m x n`; strides are `(row, col)`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: slice lengths cover every index reachable with the given
    // dimensions and strides (checked above in debug builds, guaranteed by
    // the callers' shape validation).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
