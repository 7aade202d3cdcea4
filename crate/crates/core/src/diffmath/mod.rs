//! Dense fully connected networks and exact reverse-mode gradients.
//!
//! Parameters of one network live in a single flat `Vec<f64>`. Layers are
//! stored in order; each layer contributes its weights as a row-major
//! `(fan_out, fan_in)` block followed by `fan_out` biases.

mod graph;

pub use graph::{grad_scalar, Evaluation, Gradients, LossGraph, LossGraphBuilder, NodeId};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer nonlinearity. The output layer is always affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            // relu'(0) is taken as 0; `z > 0` keeps that consistent with the
            // derivative below.
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidSpec(format!(
                "unknown activation `{other}` (expected relu, tanh or identity)"
            ))),
        }
    }
}

/// Shape of one fully connected network.
///
/// Depth is the number of hidden layers; an empty `hidden_widths` gives a
/// pure affine map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

/// Offsets of one layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerShape {
    pub fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.weight_offset..self.bias_offset]
    }

    pub fn biases<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.bias_offset..self.bias_offset + self.fan_out]
    }

    fn end(&self) -> usize {
        self.bias_offset + self.fan_out
    }
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        let spec = MlpSpec {
            input_dim,
            hidden_widths,
            output_dim,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be at least 1".into()));
        }
        if self.output_dim == 0 {
            return Err(Error::InvalidSpec("output_dim must be at least 1".into()));
        }
        if let Some(pos) = self.hidden_widths.iter().position(|&w| w == 0) {
            return Err(Error::InvalidSpec(format!(
                "hidden layer {pos} has width 0"
            )));
        }
        Ok(())
    }

    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.hidden_widths.len()
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_widths);
        dims.push(self.output_dim);

        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let shape = LayerShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                };
                offset = shape.end();
                shape
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().last().map_or(0, LayerShape::end)
    }

    /// Flat indices of every weight (biases excluded).
    pub fn weight_indices(&self) -> impl Iterator<Item = usize> {
        self.layer_shapes()
            .into_iter()
            .flat_map(|l| l.weight_offset..l.bias_offset)
    }

    pub fn max_width(&self) -> usize {
        self.hidden_widths
            .iter()
            .copied()
            .chain([self.input_dim, self.output_dim])
            .max()
            .unwrap_or(0)
    }
}

/// Weights and biases of one layer, unflattened.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Flat parameter storage for one network. All entries are finite and the
/// length always matches the spec it was built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MlpParams(Vec<f64>);

impl MlpParams {
    pub fn from_vec(spec: &MlpSpec, values: Vec<f64>) -> Result<Self> {
        check_len("parameter vector", spec.param_count(), values.len())?;
        check_finite("parameter vector", &values)?;
        Ok(MlpParams(values))
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        MlpParams(vec![0.0; spec.param_count()])
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

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn unflatten(&self, spec: &MlpSpec) -> Result<Vec<LayerParams>> {
        check_len("parameter vector", spec.param_count(), self.0.len())?;
        Ok(spec
            .layer_shapes()
            .iter()
            .map(|l| LayerParams {
                weights: l.weights(&self.0).to_vec(),
                biases: l.biases(&self.0).to_vec(),
            })
            .collect())
    }

    pub fn flatten(spec: &MlpSpec, layers: &[LayerParams]) -> Result<Self> {
        let shapes = spec.layer_shapes();
        check_len("layer list", shapes.len(), layers.len())?;
        let mut flat = Vec::with_capacity(spec.param_count());
        for (shape, layer) in shapes.iter().zip(layers) {
            check_len(
                "layer weights",
                shape.fan_in * shape.fan_out,
                layer.weights.len(),
            )?;
            check_len("layer biases", shape.fan_out, layer.biases.len())?;
            flat.extend_from_slice(&layer.weights);
            flat.extend_from_slice(&layer.biases);
        }
        MlpParams::from_vec(spec, flat)
    }

    /// Sum of squared weights, biases excluded.
    pub fn weight_norm_sq(&self, spec: &MlpSpec) -> f64 {
        spec.weight_indices().map(|i| self.0[i] * self.0[i]).sum()
    }
}

/// Partial derivatives laid out exactly like the [`MlpParams`] they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector(pub Vec<f64>);

impl GradVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Seeded Glorot-uniform weights, zero biases.
pub fn init_params(spec: &MlpSpec, seed: u64) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; spec.param_count()];
    for layer in spec.layer_shapes() {
        let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
        for w in &mut values[layer.weight_offset..layer.bias_offset] {
            *w = rng.gen_range(-limit..limit);
        }
    }
    MlpParams(values)
}

/// One affine layer applied to a single row. Shared by every forward path
/// so single-row and batched evaluation are bit-identical.
#[inline]
pub(crate) fn affine_row(weights: &[f64], biases: &[f64], x: &[f64], out: &mut [f64]) {
    for ((row, b), o) in weights
        .chunks_exact(x.len())
        .zip(biases)
        .zip(out.iter_mut())
    {
        let mut acc = *b;
        for (w, xi) in row.iter().zip(x) {
            acc += w * xi;
        }
        *o = acc;
    }
}

/// Forward pass for one row writing each layer's post-activation output
/// into `acts[layer]`.
pub(crate) fn forward_row_into(
    spec: &MlpSpec,
    shapes: &[LayerShape],
    params: &[f64],
    input: &[f64],
    acts: &mut [Vec<f64>],
) {
    let last = shapes.len() - 1;
    for (l, shape) in shapes.iter().enumerate() {
        let (done, rest) = acts.split_at_mut(l);
        let x: &[f64] = if l == 0 { input } else { &done[l - 1] };
        let out = &mut rest[0];
        affine_row(shape.weights(params), shape.biases(params), x, out);
        if l != last {
            for v in out.iter_mut() {
                *v = spec.activation.apply(*v);
            }
        }
    }
}

pub(crate) fn activation_buffers(shapes: &[LayerShape]) -> Vec<Vec<f64>> {
    shapes.iter().map(|s| vec![0.0; s.fan_out]).collect()
}

/// Evaluate a network on one input vector.
pub fn mlp_forward(spec: &MlpSpec, params: &MlpParams, input: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    check_len("parameter vector", spec.param_count(), params.len())?;
    check_len("network input", spec.input_dim, input.len())?;
    check_finite("network input", input)?;

    let shapes = spec.layer_shapes();
    let mut acts = activation_buffers(&shapes);
    forward_row_into(spec, &shapes, params.as_slice(), input, &mut acts);
    Ok(acts.pop().expect("at least one layer"))
}

/// Evaluate a network on each row of `inputs`. Row `i` of the result is
/// identical to `mlp_forward` on row `i`.
pub fn mlp_batch_forward<R: AsRef<[f64]>>(
    spec: &MlpSpec,
    params: &MlpParams,
    inputs: &[R],
) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    check_len("parameter vector", spec.param_count(), params.len())?;
    for row in inputs {
        check_len("network input", spec.input_dim, row.as_ref().len())?;
        check_finite("network input", row.as_ref())?;
    }

    let shapes = spec.layer_shapes();
    let mut acts = activation_buffers(&shapes);
    Ok(inputs
        .iter()
        .map(|row| {
            forward_row_into(spec, &shapes, params.as_slice(), row.as_ref(), &mut acts);
            acts[shapes.len() - 1].clone()
        })
        .collect())
}

pub(crate) fn check_len(context: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            context: context.to_string(),
            expected,
            got,
        });
    }
    Ok(())
}

pub(crate) fn check_finite(context: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: context.to_string(),
        })
    }
}
