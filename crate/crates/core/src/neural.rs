//! A small dense-network toolkit: affine layers with ReLU, MSE, exact
//! reverse-mode gradients and Adam. Everything is `f64` and batch-major
//! (rows are samples).

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

static PARAM_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    PARAM_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative w.r.t. the pre-activation; ReLU'(0) = 0.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// out x in
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Which way the latent dimensions must run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlpShape {
    Encoder,
    Decoder,
    Free,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    version: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct Trace {
    version: u64,
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Trace {
    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre_activations
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrad>,
}

impl MlpGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|g| {
                [
                    g.weight.as_slice().expect("contiguous"),
                    g.bias.as_slice().expect("contiguous"),
                ]
            })
            .collect()
    }
}

fn check_dims(dims: &[usize], shape: MlpShape) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "MLP needs at least two positive dims, got {dims:?}"
        )));
    }
    // An encoder's latent dims are its layer outputs; a decoder mirrors that,
    // so its latent dims are its layer inputs.
    let ok = match shape {
        MlpShape::Encoder => dims[1..].windows(2).all(|w| w[1] <= w[0]),
        MlpShape::Decoder => dims[..dims.len() - 1].windows(2).all(|w| w[1] >= w[0]),
        MlpShape::Free => true,
    };
    if !ok {
        return Err(Error::InvalidArgument(format!(
            "dims {dims:?} are not monotone for {shape:?}"
        )));
    }
    Ok(())
}

impl Mlp {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("MLP without layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Shape(format!(
                    "layer {i}: bias {} for {} outputs",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        let layers = layers
            .into_iter()
            .map(|l| DenseLayer {
                weight: l.weight.as_standard_layout().into_owned(),
                bias: l.bias,
                activation: l.activation,
            })
            .collect();
        Ok(Mlp {
            layers,
            version: next_version(),
        })
    }

    /// Glorot-uniform weights, zero biases. `activations` has one entry per
    /// layer (`dims.len() - 1`).
    pub fn init<R: Rng>(
        dims: &[usize],
        activations: &[Activation],
        shape: MlpShape,
        rng: &mut R,
    ) -> Result<Self> {
        check_dims(dims, shape)?;
        if activations.len() != dims.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} activations for {} layers",
                activations.len(),
                dims.len() - 1
            )));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..=bound));
                DenseLayer {
                    weight,
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Mlp::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(DenseLayer::out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Flat parameter slices in (weight, bias) order per layer. Taking them
    /// invalidates earlier traces.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.version = next_version();
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("contiguous"),
                    l.bias.as_slice_mut().expect("contiguous"),
                ]
            })
            .collect()
    }

    pub fn param_lengths(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Trace> {
        if x.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                x.ncols(),
                self.in_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for layer in &self.layers {
            let pre = current.dot(&layer.weight.t()) + &layer.bias;
            let act = layer.activation;
            let out = pre.mapv(|v| act.apply(v));
            inputs.push(current);
            pre_activations.push(pre);
            current = out;
        }
        Ok(Trace {
            version: self.version,
            inputs,
            pre_activations,
            output: current,
        })
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x)?.output)
    }

    /// Gradients of a scalar loss given `d loss / d output`. Returns the
    /// parameter gradients and `d loss / d input`.
    pub fn backward(
        &self,
        trace: &Trace,
        output_grad: ArrayView2<'_, f64>,
    ) -> Result<(MlpGrads, Array2<f64>)> {
        if trace.version != self.version || trace.inputs.len() != self.layers.len() {
            return Err(Error::StaleTrace);
        }
        if output_grad.dim() != trace.output.dim() {
            return Err(Error::Shape(format!(
                "output gradient {:?} vs output {:?}",
                output_grad.dim(),
                trace.output.dim()
            )));
        }
        let mut grad = output_grad.to_owned();
        let mut layer_grads = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            let pre = &trace.pre_activations[i];
            grad.zip_mut_with(pre, |g, &p| *g *= act.derivative(p));
            let weight = grad
                .t()
                .dot(&trace.inputs[i])
                .as_standard_layout()
                .into_owned();
            let bias = grad.sum_axis(Axis(0));
            let input_grad = grad.dot(&layer.weight);
            layer_grads.push(LayerGrad { weight, bias });
            grad = input_grad;
        }
        layer_grads.reverse();
        Ok((
            MlpGrads {
                layers: layer_grads,
            },
            grad,
        ))
    }

    pub fn to_checkpoint(&self) -> MlpCheckpoint {
        MlpCheckpoint {
            layers: self
                .layers
                .iter()
                .map(|l| LayerCheckpoint {
                    in_dim: l.in_dim(),
                    out_dim: l.out_dim(),
                    activation: l.activation,
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &MlpCheckpoint) -> Result<Self> {
        let layers = ckpt
            .layers
            .iter()
            .map(|l| {
                Ok(DenseLayer {
                    weight: Array2::from_shape_vec((l.out_dim, l.in_dim), l.weight.clone())
                        .map_err(|e| Error::Shape(e.to_string()))?,
                    bias: Array1::from(l.bias.clone()),
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(layers)
    }
}

/// Serialized layer: row-major `out_dim x in_dim` weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub layers: Vec<LayerCheckpoint>,
}

/// Mean over all elements of the squared difference.
pub fn mse(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let sum: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `d mse / d pred`.
pub fn mse_grad(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let scale = 2.0 / pred.len() as f64;
    Ok((&pred - &target) * scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, param_lengths: &[usize]) -> Self {
        AdamState {
            config,
            first_moment: param_lengths.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: param_lengths.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Rejects non-finite gradients before
    /// touching any parameter.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} parameter tensors, {} gradients, state tracks {}",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for (i, ((p, g), m)) in params.iter().zip(grads).zip(&self.first_moment).enumerate() {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::Shape(format!("tensor {i}: length mismatch")));
            }
            if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient tensor {i} element {pos} = {}",
                    g[pos]
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
