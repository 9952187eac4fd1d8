//! Small differentiable classifiers with per-sample loss and analytic gradient.
//!
//! Two kinds are supported: multinomial logistic regression and a tanh MLP.
//! Both use softmax cross-entropy, float64 arithmetic, and a flat parameter
//! layout of `[W_0 row-major, b_0, W_1, b_1, ...]`. All operations are pure
//! functions of immutable inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};

/// Flat vector of model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn zeros(dim: usize) -> Self {
        ParameterVector {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Mlp,
}

/// Architecture and initialization of a model; the parameter count is
/// derivable from the spec alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Hidden layer widths; must be empty for `logistic`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hidden_dims: Vec<usize>,
    pub init_seed: u64,
    pub init_scale: f64,
}

impl ModelSpec {
    pub fn logistic(feature_dim: usize, num_classes: usize, init_seed: u64, init_scale: f64) -> Self {
        ModelSpec {
            kind: ModelKind::Logistic,
            feature_dim,
            num_classes,
            hidden_dims: Vec::new(),
            init_seed,
            init_scale,
        }
    }

    pub fn mlp(
        feature_dim: usize,
        hidden_dims: Vec<usize>,
        num_classes: usize,
        init_seed: u64,
        init_scale: f64,
    ) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            feature_dim,
            num_classes,
            hidden_dims,
            init_seed,
            init_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 1 {
            return Err(Error::InvalidArgument("feature_dim must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("num_classes must be >= 2".into()));
        }
        if self.kind == ModelKind::Logistic && !self.hidden_dims.is_empty() {
            return Err(Error::InvalidArgument(
                "logistic models take no hidden_dims".into(),
            ));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument("hidden dims must be >= 1".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidArgument("init_scale must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// `(input, output)` size of each affine layer.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut sizes = Vec::with_capacity(self.hidden_dims.len() + 2);
        sizes.push(self.feature_dim);
        sizes.extend_from_slice(&self.hidden_dims);
        sizes.push(self.num_classes);
        sizes.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Total number of parameters: `sum(in*out + out)` over layers.
    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Anything that can produce a per-sample loss gradient at given parameters.
///
/// [`ModelSpec`] is the production implementation; tests substitute mock
/// providers with hand-constructed gradients.
pub trait GradientProvider: Sync {
    fn gradient(&self, params: &ParameterVector, z: &Sample) -> Result<Vec<f64>>;
}

impl GradientProvider for ModelSpec {
    fn gradient(&self, params: &ParameterVector, z: &Sample) -> Result<Vec<f64>> {
        grad(self, params, z)
    }
}

fn check_dims(spec: &ModelSpec, params: &ParameterVector, z: &Sample) -> Result<()> {
    if params.dim() != spec.param_count() {
        return Err(Error::InvalidArgument(format!(
            "parameter vector has dim {}, spec requires {}",
            params.dim(),
            spec.param_count()
        )));
    }
    if z.features.len() != spec.feature_dim {
        return Err(Error::InvalidArgument(format!(
            "sample \"{}\" has {} features, model expects {}",
            z.id,
            z.features.len(),
            spec.feature_dim
        )));
    }
    if z.label >= spec.num_classes {
        return Err(Error::InvalidArgument(format!(
            "sample \"{}\" has label {} outside 0..{}",
            z.id, z.label, spec.num_classes
        )));
    }
    Ok(())
}

/// Deterministic initialization: weights uniform in `[-init_scale, init_scale]`,
/// biases zero.
pub fn init_params(spec: &ModelSpec) -> Result<ParameterVector> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
    let mut values = Vec::with_capacity(spec.param_count());
    for (n_in, n_out) in spec.layer_dims() {
        for _ in 0..n_in * n_out {
            let w = if spec.init_scale > 0.0 {
                rng.random_range(-spec.init_scale..spec.init_scale)
            } else {
                0.0
            };
            values.push(w);
        }
        values.extend(std::iter::repeat_n(0.0, n_out));
    }
    Ok(ParameterVector { values })
}

/// Forward pass keeping every activation; `activations[0]` is the input,
/// the last entry holds the raw logits.
fn forward(spec: &ModelSpec, params: &ParameterVector, x: &[f64]) -> Vec<Vec<f64>> {
    let dims = spec.layer_dims();
    let n_layers = dims.len();
    let mut activations = Vec::with_capacity(n_layers + 1);
    activations.push(x.to_vec());
    let mut offset = 0;
    for (l, &(n_in, n_out)) in dims.iter().enumerate() {
        let weights = &params.values[offset..offset + n_in * n_out];
        let biases = &params.values[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;

        let input = activations.last().expect("nonempty");
        let mut out = Vec::with_capacity(n_out);
        for o in 0..n_out {
            let row = &weights[o * n_in..(o + 1) * n_in];
            let mut acc = biases[o];
            for (w, v) in row.iter().zip(input) {
                acc += w * v;
            }
            out.push(acc);
        }
        if l + 1 < n_layers {
            out.iter_mut().for_each(|v| *v = v.tanh());
        }
        activations.push(out);
    }
    activations
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Class probabilities of the softmax output; rows sum to one.
pub fn predict(spec: &ModelSpec, params: &ParameterVector, z: &Sample) -> Result<Vec<f64>> {
    check_dims(spec, params, z)?;
    let activations = forward(spec, params, &z.features);
    Ok(softmax(activations.last().expect("nonempty")))
}

/// Per-sample cross-entropy, exactly `-ln(predict[label])`.
pub fn loss(spec: &ModelSpec, params: &ParameterVector, z: &Sample) -> Result<f64> {
    let probs = predict(spec, params, z)?;
    Ok(-probs[z.label].ln())
}

/// Analytic gradient of [`loss`] with respect to every parameter.
pub fn grad(spec: &ModelSpec, params: &ParameterVector, z: &Sample) -> Result<Vec<f64>> {
    check_dims(spec, params, z)?;
    let dims = spec.layer_dims();
    let activations = forward(spec, params, &z.features);

    let mut delta = softmax(activations.last().expect("nonempty"));
    delta[z.label] -= 1.0;

    // Layer parameter offsets into the flat vector.
    let mut offsets = Vec::with_capacity(dims.len());
    let mut offset = 0;
    for &(n_in, n_out) in &dims {
        offsets.push(offset);
        offset += n_in * n_out + n_out;
    }

    let mut grad = vec![0.0; params.dim()];
    for l in (0..dims.len()).rev() {
        let (n_in, n_out) = dims[l];
        let base = offsets[l];
        let input = &activations[l];

        for o in 0..n_out {
            let row = &mut grad[base + o * n_in..base + (o + 1) * n_in];
            for (g, v) in row.iter_mut().zip(input) {
                *g = delta[o] * v;
            }
        }
        let bias_base = base + n_in * n_out;
        grad[bias_base..bias_base + n_out].copy_from_slice(&delta);

        if l > 0 {
            let weights = &params.values[base..base + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += w * delta[o];
                }
            }
            // tanh' = 1 - a^2 at the already-activated output of layer l-1.
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }
    Ok(grad)
}

/// Max relative disagreement between the analytic gradient and central
/// finite differences with per-coordinate step `h * (1 + |w_j|)`.
pub fn grad_check(spec: &ModelSpec, params: &ParameterVector, z: &Sample, h: f64) -> Result<f64> {
    if h <= 0.0 {
        return Err(Error::InvalidArgument("finite-difference step must be > 0".into()));
    }
    let analytic = grad(spec, params, z)?;
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for (j, analytic_j) in analytic.iter().enumerate() {
        let w = params.values[j];
        let step = h * (1.0 + w.abs());
        probe.values[j] = w + step;
        let up = loss(spec, &probe, z)?;
        probe.values[j] = w - step;
        let down = loss(spec, &probe, z)?;
        probe.values[j] = w;
        let central = (up - down) / (2.0 * step);
        let rel = (analytic_j - central).abs() / (central.abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
