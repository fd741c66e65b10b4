//! Fully connected perceptron with sigmoid hidden layers and a linear output
//! layer, plus reverse-mode gradients for an arbitrary output-space error.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gain of the sigmoid-tailored Gaussian initializer.
pub const INIT_GAIN: f64 = 3.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
}

/// Builds the layer chain `input -> hidden[0] -> ... -> output` with sigmoid
/// hidden layers and a linear head.
pub fn mlp_specs(input: usize, hidden: &[usize], output: usize) -> Vec<LayerSpec> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input);
    dims.extend_from_slice(hidden);
    dims.push(output);
    let last = dims.len() - 2;
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i == last {
                Activation::Linear
            } else {
                Activation::Sigmoid
            };
            LayerSpec::new(w[0], w[1], act)
        })
        .collect()
}

/// Denominator used for the initial weight standard deviation `3.6 / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScale {
    /// `n` is the fan-in of each layer.
    #[default]
    FanIn,
    /// `n` is the number of weight layers.
    Depth,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InitOptions {
    pub scale: InitScale,
    /// Standard deviation of the initial biases; zero keeps them at zero.
    pub bias_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Frobenius norm of the weights and biases taken together.
    pub fn param_norm(&self) -> f64 {
        (self.weights.norm_squared() + self.biases.norm_squared()).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    // Bumped on every mutable access so stale caches can be rejected.
    revision: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Values retained by [`Network::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: DVector<f64>,
    /// Post-activation output of every layer.
    outputs: Vec<DVector<f64>>,
    revision: u64,
}

impl ForwardCache {
    pub fn input(&self) -> &DVector<f64> {
        &self.input
    }

    pub fn layer_outputs(&self) -> &[DVector<f64>] {
        &self.outputs
    }

    pub fn output(&self) -> &DVector<f64> {
        self.outputs.last().expect("network has at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
}

impl LayerGradient {
    pub fn norm(&self) -> f64 {
        (self.weights.norm_squared() + self.biases.norm_squared()).sqrt()
    }
}

/// Per-layer loss gradients, shape-congruent with the network that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGradient>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: DMatrix::zeros(l.output_dim(), l.input_dim()),
                    biases: DVector::zeros(l.output_dim()),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.biases.iter().all(|v| v.is_finite())
        })
    }

    pub fn congruent_with(&self, net: &Network) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.shape() == l.weights.shape() && g.biases.len() == l.biases.len()
            })
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

fn check_chain(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("network needs at least one layer".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.input_dim == 0 || s.output_dim == 0 {
            return Err(Error::Config(format!("layer {i} has a zero dimension")));
        }
        let last = i + 1 == specs.len();
        match (last, s.activation) {
            (true, Activation::Sigmoid) => {
                return Err(Error::Config("output layer must be linear".into()))
            }
            (false, Activation::Linear) => {
                return Err(Error::Config(format!("hidden layer {i} must be sigmoid")))
            }
            _ => {}
        }
    }
    for (i, pair) in specs.windows(2).enumerate() {
        if pair[0].output_dim != pair[1].input_dim {
            return Err(Error::Config(format!(
                "layer {} outputs {} values but layer {} expects {}",
                i,
                pair[0].output_dim,
                i + 1,
                pair[1].input_dim
            )));
        }
    }
    Ok(())
}

impl Network {
    /// Gaussian initialization with zero biases and fan-in scaling.
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        Self::init_with(specs, seed, &InitOptions::default())
    }

    pub fn init_with(specs: &[LayerSpec], seed: u64, opts: &InitOptions) -> Result<Self> {
        check_chain(specs)?;
        if !(opts.bias_std >= 0.0 && opts.bias_std.is_finite()) {
            return Err(Error::Config("bias_std must be finite and non-negative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = specs.len();
        let layers = specs
            .iter()
            .map(|s| {
                let std = init_std(s.input_dim, depth, opts.scale);
                let normal = Normal::new(0.0, std).expect("finite positive std");
                let weights =
                    DMatrix::from_fn(s.output_dim, s.input_dim, |_, _| normal.sample(&mut rng));
                let biases = if opts.bias_std > 0.0 {
                    let bn = Normal::new(0.0, opts.bias_std).expect("finite positive std");
                    DVector::from_fn(s.output_dim, |_, _| bn.sample(&mut rng))
                } else {
                    DVector::zeros(s.output_dim)
                };
                Layer {
                    weights,
                    biases,
                    activation: s.activation,
                }
            })
            .collect();
        Ok(Self {
            layers,
            revision: 0,
        })
    }

    /// Wraps explicit layers, checking the same chain rules as initialization.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers
            .iter()
            .map(|l| LayerSpec::new(l.input_dim(), l.output_dim(), l.activation))
            .collect();
        check_chain(&specs)?;
        for (i, l) in layers.iter().enumerate() {
            if l.biases.len() != l.output_dim() {
                return Err(Error::Config(format!("layer {i} bias length mismatch")));
            }
        }
        Ok(Self {
            layers,
            revision: 0,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.revision = self.revision.wrapping_add(1);
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec::new(l.input_dim(), l.output_dim(), l.activation))
            .collect()
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Largest parameter magnitude over all weights and biases.
    pub fn max_abs_param(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.biases.iter().all(|v| v.is_finite())
        })
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<(DVector<f64>, ForwardCache)> {
        if x.len() != self.input_dim() {
            return Err(Error::Input(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite network input".into()));
        }
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            let mut z = &layer.weights * &a + &layer.biases;
            if layer.activation == Activation::Sigmoid {
                z.apply(|v| *v = sigmoid(*v));
            }
            outputs.push(z.clone());
            a = z;
        }
        let cache = ForwardCache {
            input: x.clone(),
            outputs,
            revision: self.revision,
        };
        Ok((a, cache))
    }

    /// Convenience wrapper returning only the network output.
    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Gradients of the scalar loss whose derivative with respect to the
    /// network output is `output_error`.
    pub fn backward(&self, cache: &ForwardCache, output_error: &DVector<f64>) -> Result<GradientSet> {
        if cache.revision != self.revision || cache.outputs.len() != self.layers.len() {
            return Err(Error::Usage(
                "forward cache does not belong to the current network parameters".into(),
            ));
        }
        if output_error.len() != self.output_dim() {
            return Err(Error::Usage(format!(
                "output error has {} entries, network output has {}",
                output_error.len(),
                self.output_dim()
            )));
        }
        let n = self.layers.len();
        let mut grads: Vec<LayerGradient> = Vec::with_capacity(n);
        let mut delta = output_error.clone();
        for l in (0..n).rev() {
            let a_prev = if l == 0 { &cache.input } else { &cache.outputs[l - 1] };
            grads.push(LayerGradient {
                weights: &delta * a_prev.transpose(),
                biases: delta.clone(),
            });
            if l > 0 {
                let mut back = self.layers[l].weights.tr_mul(&delta);
                // every layer below the head is sigmoid
                back.zip_apply(&cache.outputs[l - 1], |d, s| *d *= s * (1.0 - s));
                delta = back;
            }
        }
        grads.reverse();
        Ok(GradientSet { layers: grads })
    }
}

fn init_std(fan_in: usize, depth: usize, scale: InitScale) -> f64 {
    let n = match scale {
        InitScale::FanIn => fan_in,
        InitScale::Depth => depth,
    };
    INIT_GAIN / (n as f64).sqrt()
}
