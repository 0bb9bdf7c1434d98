//! Feed-forward ReLU classifier with exact gradients.
//!
//! Layers are named `layer0 .. layer{K-1}` for the hidden stack and `logits`
//! for the output map. Weights are stored `[fan_in × fan_out]` so a batch
//! propagates as `X · W + b`.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{argmax, Matrix};
use crate::{json, rng};

pub const LOGITS: &str = "logits";
/// Alias accepted by [`Mlp::forward`] for the last hidden layer.
pub const PENULTIMATE: &str = "penultimate";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub n_classes: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl ArchitectureSpec {
    /// `input → 64 → 32 → n_classes`.
    pub fn default_for(input_dim: usize, n_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_widths: vec![64, 32],
            n_classes,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.is_empty() {
            return Err(Error::argument("hidden_widths must not be empty"));
        }
        if self.input_dim == 0 || self.n_classes == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::argument("all layer widths must be at least 1"));
        }
        Ok(())
    }

    /// Number of affine layers, including the logits layer.
    pub fn n_layers(&self) -> usize {
        self.hidden_widths.len() + 1
    }

    pub fn layer_names(&self) -> Vec<String> {
        (0..self.n_layers()).map(|i| self.layer_name(i)).collect()
    }

    pub fn layer_name(&self, index: usize) -> String {
        if index + 1 == self.n_layers() {
            LOGITS.to_string()
        } else {
            format!("layer{index}")
        }
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        if name == LOGITS {
            return Some(self.n_layers() - 1);
        }
        if name == PENULTIMATE {
            return Some(self.n_layers() - 2);
        }
        let i: usize = name.strip_prefix("layer")?.parse().ok()?;
        (i + 1 < self.n_layers()).then_some(i)
    }

    /// `(fan_in, fan_out)` of layer `index`.
    pub fn layer_shape(&self, index: usize) -> (usize, usize) {
        let fan_in = if index == 0 {
            self.input_dim
        } else {
            self.hidden_widths[index - 1]
        };
        let fan_out = self.hidden_widths.get(index).copied().unwrap_or(self.n_classes);
        (fan_in, fan_out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Model parameters plus the architecture they instantiate.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub arch: ArchitectureSpec,
    pub init_seed: u64,
    pub layers: Vec<Layer>,
}

/// Gradient with the same layout as [`Mlp::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &Mlp) -> Self {
        Self {
            weights: model.layers.iter().map(|l| Matrix::zeros(l.weights.rows(), l.weights.cols())).collect(),
            bias: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    /// All entries in the canonical order: per layer, weights row-major then bias.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite) && self.bias.iter().flatten().all(|v| v.is_finite())
    }

    pub fn add_scaled(&mut self, other: &Gradients, c: f64) {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            for (a, b) in w.as_mut_slice().iter_mut().zip(o.as_slice()) {
                *a += c * b;
            }
        }
        for (w, o) in self.bias.iter_mut().zip(&other.bias) {
            for (a, b) in w.iter_mut().zip(o) {
                *a += c * b;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Descent,
    Ascent,
}

/// Activations captured by [`Mlp::forward`].
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub activations: BTreeMap<String, Matrix>,
    pub logits: Matrix,
}

/// Post-activation outputs of every layer, input first. Needed for backprop.
struct Cache {
    outputs: Vec<Matrix>,
}

impl Mlp {
    /// He-normal weights, zero biases.
    pub fn init(arch: &ArchitectureSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut r = rng::rng(rng::derive(seed, &[rng::tag("init")]));
        let layers = (0..arch.n_layers())
            .map(|i| {
                let (fan_in, fan_out) = arch.layer_shape(i);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let data = (0..fan_in * fan_out).map(|_| normal.sample(&mut r)).collect();
                Layer {
                    name: arch.layer_name(i),
                    weights: Matrix::from_vec(fan_in, fan_out, data),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self {
            arch: arch.clone(),
            init_seed: seed,
            layers,
        })
    }

    /// Replaces layers `from..` with freshly initialized ones drawn from `seed`.
    pub fn reinit_from(&mut self, from: usize, seed: u64) -> Result<()> {
        let fresh = Mlp::init(&self.arch, seed)?;
        for (dst, src) in self.layers.iter_mut().zip(fresh.layers).skip(from) {
            *dst = src;
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len() + l.bias.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    fn check_input(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols() != self.arch.input_dim {
            return Err(Error::argument(format!(
                "input width {} does not match model input_dim {}",
                inputs.cols(),
                self.arch.input_dim
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, inputs: &Matrix) -> Cache {
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(inputs.clone());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = outputs[i].matmul(&layer.weights);
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                    if i < last && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            outputs.push(z);
        }
        Cache { outputs }
    }

    pub fn logits(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_input(inputs)?;
        Ok(self.forward_cached(inputs).outputs.pop().expect("at least one layer"))
    }

    /// Runs the network and returns the requested layer outputs (post-ReLU
    /// for hidden layers) plus raw logits. Unknown names are an error.
    pub fn forward(&self, inputs: &Matrix, capture: &[&str]) -> Result<ForwardTrace> {
        self.check_input(inputs)?;
        let indices = capture
            .iter()
            .map(|&name| {
                self.arch
                    .layer_index(name)
                    .map(|i| (name.to_string(), i))
                    .ok_or_else(|| Error::argument(format!("unknown layer `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cache = self.forward_cached(inputs);
        let activations = indices
            .into_iter()
            .map(|(name, i)| (name, cache.outputs[i + 1].clone()))
            .collect();
        let logits = cache.outputs.pop().expect("at least one layer");
        Ok(ForwardTrace { activations, logits })
    }

    pub fn predict(&self, inputs: &Matrix) -> Result<Vec<usize>> {
        Ok(self.logits(inputs)?.iter_rows().map(argmax).collect())
    }

    /// Backpropagates `dlogits` (already scaled by the batch mean).
    fn backward(&self, cache: &Cache, dlogits: Matrix) -> Gradients {
        let n_layers = self.layers.len();
        let mut weights = vec![Matrix::zeros(0, 0); n_layers];
        let mut bias = vec![Vec::new(); n_layers];
        let mut delta = dlogits;
        for i in (0..n_layers).rev() {
            let input = &cache.outputs[i];
            weights[i] = input.t_matmul(&delta);
            let mut db = vec![0.0; delta.cols()];
            for row in delta.iter_rows() {
                for (d, v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
            bias[i] = db;
            if i > 0 {
                let mut prev = delta.matmul_t(&self.layers[i].weights);
                for (g, &a) in prev.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Gradients { weights, bias }
    }

    /// Generic objective: `objective` maps the batch logits to
    /// `(loss, ∂loss/∂logits)`.
    pub fn objective_and_grads<F>(&self, inputs: &Matrix, objective: F) -> Result<(f64, Gradients)>
    where
        F: FnOnce(&Matrix) -> Result<(f64, Matrix)>,
    {
        self.check_input(inputs)?;
        if inputs.rows() == 0 {
            return Err(Error::argument("empty batch"));
        }
        let cache = self.forward_cached(inputs);
        let (loss, dlogits) = objective(cache.outputs.last().expect("logits"))?;
        Ok((loss, self.backward(&cache, dlogits)))
    }

    /// Mean cross-entropy and its gradient.
    pub fn loss_and_grads(&self, inputs: &Matrix, labels: &[usize]) -> Result<(f64, Gradients)> {
        if inputs.rows() != labels.len() {
            return Err(Error::argument("feature rows and labels differ in length"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.arch.n_classes) {
            return Err(Error::argument(format!("label {bad} outside 0..{}", self.arch.n_classes)));
        }
        self.objective_and_grads(inputs, |logits| Ok(cross_entropy(logits, labels)))
    }

    pub fn loss(&self, inputs: &Matrix, labels: &[usize]) -> Result<f64> {
        if inputs.rows() == 0 {
            return Err(Error::argument("empty batch"));
        }
        let logits = self.logits(inputs)?;
        Ok(cross_entropy(&logits, labels).0)
    }

    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64, direction: Direction) -> Result<()> {
        self.apply_update(grads, lr, direction, None)
    }

    /// Like [`Mlp::sgd_step`] but only entries whose mask bit is set move.
    /// The mask follows [`Mlp::params_flat`] order.
    pub fn sgd_step_masked(&mut self, grads: &Gradients, lr: f64, direction: Direction, mask: &[bool]) -> Result<()> {
        if mask.len() != self.n_params() {
            return Err(Error::argument("mask length differs from parameter count"));
        }
        self.apply_update(grads, lr, direction, Some(mask))
    }

    fn apply_update(&mut self, grads: &Gradients, lr: f64, direction: Direction, mask: Option<&[bool]>) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::argument("learning rate must be finite and non-negative"));
        }
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        let mut offset = 0;
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads.weights.iter().zip(&grads.bias)) {
            let params = layer.weights.as_mut_slice().iter_mut().chain(layer.bias.iter_mut());
            let g = gw.as_slice().iter().chain(gb.iter());
            for (k, (p, &g)) in params.zip(g).enumerate() {
                if mask.is_some_and(|m| !m[offset + k]) {
                    continue;
                }
                match direction {
                    Direction::Descent => *p -= lr * g,
                    Direction::Ascent => *p += lr * g,
                }
            }
            offset += gw.as_slice().len() + gb.len();
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            arch: self.arch.clone(),
            init_seed: self.init_seed,
            layers: self
                .layers
                .iter()
                .map(|l| CheckpointLayer {
                    name: l.name.clone(),
                    weights: l.weights.to_rows(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }

    pub fn serialize(&self) -> Result<String> {
        json::to_string(&self.to_checkpoint())
    }

    pub fn deserialize(text: &str) -> Result<Self> {
        json::from_str::<Checkpoint>(text)?.into_model()
    }

    /// Checks that `self` has exactly the layer shapes of `arch`, naming the
    /// first offending layer otherwise.
    pub fn check_arch(&self, arch: &ArchitectureSpec) -> Result<()> {
        self.to_checkpoint().validate_against(arch)
    }
}

/// On-disk model format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub arch: ArchitectureSpec,
    pub init_seed: u64,
    pub layers: Vec<CheckpointLayer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub name: String,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Checkpoint {
    fn validate_against(&self, arch: &ArchitectureSpec) -> Result<()> {
        arch.validate().map_err(|e| Error::format("arch", e.to_string()))?;
        if self.layers.len() != arch.n_layers() {
            return Err(Error::format(
                "layers",
                format!("expected {} layers, found {}", arch.n_layers(), self.layers.len()),
            ));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let expected_name = arch.layer_name(i);
            if layer.name != expected_name {
                return Err(Error::format(
                    format!("layers[{i}].name"),
                    format!("expected `{expected_name}`, found `{}`", layer.name),
                ));
            }
            let (fan_in, fan_out) = arch.layer_shape(i);
            let rows_ok = layer.weights.len() == fan_in;
            let cols_ok = layer.weights.iter().all(|r| r.len() == fan_out);
            if !rows_ok || !cols_ok {
                let found_cols = layer.weights.first().map_or(0, Vec::len);
                return Err(Error::format(
                    format!("layers[{i}].weights"),
                    format!(
                        "layer `{expected_name}` expects {fan_in}x{fan_out} weights, found {}x{found_cols}",
                        layer.weights.len()
                    ),
                ));
            }
            if layer.bias.len() != fan_out {
                return Err(Error::format(
                    format!("layers[{i}].bias"),
                    format!("layer `{expected_name}` expects {fan_out} biases, found {}", layer.bias.len()),
                ));
            }
            if layer.weights.iter().flatten().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(Error::format(format!("layers[{i}]"), format!("layer `{expected_name}` has non-finite values")));
            }
        }
        Ok(())
    }

    pub fn into_model(self) -> Result<Mlp> {
        self.validate_against(&self.arch)?;
        let layers = self
            .layers
            .into_iter()
            .map(|l| Layer {
                weights: Matrix::from_rows(&l.weights).expect("validated shape"),
                name: l.name,
                bias: l.bias,
            })
            .collect();
        Ok(Mlp {
            arch: self.arch,
            init_seed: self.init_seed,
            layers,
        })
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN logit".into()));
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        out.row_mut(r).copy_from_slice(&softmax_unchecked(logits.row(r)));
    }
    out
}

/// Mean cross-entropy against hard labels and `∂/∂logits`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let n = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let logp = log_softmax(logits.row(r));
        loss -= logp[y];
        let g = grad.row_mut(r);
        for (gi, lp) in g.iter_mut().zip(&logp) {
            *gi = lp.exp() / n;
        }
        g[y] -= 1.0 / n;
    }
    (loss / n, grad)
}

/// Mean `KL(student ‖ teacher)` over rows and its gradient w.r.t. the
/// student logits. `teacher_log_probs` holds log-softmax rows.
pub fn kl_student_teacher(student_logits: &Matrix, teacher_log_probs: &Matrix) -> (f64, Matrix) {
    let n = student_logits.rows() as f64;
    let mut grad = Matrix::zeros(student_logits.rows(), student_logits.cols());
    let mut total = 0.0;
    for r in 0..student_logits.rows() {
        let logp = log_softmax(student_logits.row(r));
        let logq = teacher_log_probs.row(r);
        let diff: Vec<f64> = logp.iter().zip(logq).map(|(a, b)| a - b).collect();
        let kl: f64 = logp.iter().zip(&diff).map(|(lp, d)| lp.exp() * d).sum();
        total += kl;
        for ((g, lp), d) in grad.row_mut(r).iter_mut().zip(&logp).zip(&diff) {
            *g = lp.exp() * (d - kl) / n;
        }
    }
    (total / n, grad)
}

/// Log-softmax of every row.
pub fn log_softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        out.row_mut(r).copy_from_slice(&log_softmax(logits.row(r)));
    }
    out
}
