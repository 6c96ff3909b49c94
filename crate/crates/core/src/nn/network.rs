use std::sync::Arc;

use rand::Rng;

use super::Matrix;
use crate::error::{Error, Result};
use crate::rng::{self, streams};

/// Architecture of a dense ReLU classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    /// Input width, hidden widths, then the class count `K`.
    pub layer_dims: Vec<usize>,
    /// Inverted-dropout rate on hidden activations, in `[0, 1)`.
    pub dropout_rate: f64,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn new(layer_dims: Vec<usize>, dropout_rate: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            layer_dims,
            dropout_rate,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::config(format!(
                "network needs at least 2 layer dims, got {:?}",
                self.layer_dims
            )));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::config("layer dims must be >= 1"));
        }
        if self.num_classes() < 2 {
            return Err(Error::config("output layer needs at least 2 classes"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().unwrap_or(&0)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len().saturating_sub(1)
    }

    /// `(out, in)` shape of each weight matrix.
    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        self.layer_dims.windows(2).map(|w| (w[1], w[0])).collect()
    }
}

/// Weights (`out × in`) and biases of one dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weights: Matrix::zeros(out, inp),
            biases: vec![0.0; out],
        }
    }
}

/// Trainable parameters plus the frozen values they were initialised with.
///
/// The snapshot is shared and never mutated; clones and rewinds all point at
/// the same allocation.
#[derive(Clone, Debug)]
pub struct ParamSet {
    spec: NetworkSpec,
    pub layers: Vec<Layer>,
    init: Arc<Vec<Layer>>,
}

impl ParamSet {
    /// Wraps explicit layers; the snapshot is taken from them.
    pub fn from_layers(spec: NetworkSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.weight_shapes();
        if layers.len() != shapes.len() {
            return Err(Error::dim(format!(
                "{} layers for a {}-layer spec",
                layers.len(),
                shapes.len()
            )));
        }
        for (i, (layer, &(out, inp))) in layers.iter().zip(&shapes).enumerate() {
            if layer.weights.shape() != (out, inp) || layer.biases.len() != out {
                return Err(Error::dim(format!(
                    "layer {i}: expected {out}x{inp} weights and {out} biases, got {:?} and {}",
                    layer.weights.shape(),
                    layer.biases.len()
                )));
            }
            if !layer.weights.is_finite() || layer.biases.iter().any(|b| !b.is_finite()) {
                return Err(Error::Numeric(format!("layer {i} has non-finite parameters")));
            }
        }
        let init = Arc::new(layers.clone());
        Ok(Self { spec, layers, init })
    }

    pub(crate) fn with_snapshot(spec: NetworkSpec, layers: Vec<Layer>, init: Arc<Vec<Layer>>) -> Self {
        Self { spec, layers, init }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn init_snapshot(&self) -> &[Layer] {
        &self.init
    }

    pub(crate) fn snapshot_handle(&self) -> Arc<Vec<Layer>> {
        Arc::clone(&self.init)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Same shapes, every value zero, sharing this set's snapshot.
    pub fn zeros_like(&self) -> ParamSet {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer::zeros(l.weights.rows(), l.weights.cols()))
            .collect();
        Self::with_snapshot(self.spec.clone(), layers, Arc::clone(&self.init))
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.biases.iter().all(|b| b.is_finite()))
    }

    /// Visits every trainable value (weights then biases, layer by layer).
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(l.biases.iter()).copied())
    }

    pub(crate) fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.as_mut_slice().iter_mut().chain(l.biases.iter_mut()))
    }
}

/// Draws fresh parameters: weights uniform on `±sqrt(6 / (fan_in + fan_out))`,
/// biases zero. The draw consumes the `INIT` stream of `spec.seed`.
pub fn init_network(spec: &NetworkSpec) -> Result<ParamSet> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, streams::INIT);
    let layers = spec
        .weight_shapes()
        .into_iter()
        .map(|(out, inp)| {
            let bound = (6.0 / (inp + out) as f64).sqrt();
            let data = (0..out * inp)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Layer {
                weights: Matrix::from_vec_unchecked(out, inp, data),
                biases: vec![0.0; out],
            }
        })
        .collect();
    ParamSet::from_layers(spec.clone(), layers)
}
