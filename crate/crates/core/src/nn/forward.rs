use rand::Rng;

use super::matrix::{matmul, matmul_a_bt, matmul_at_b};
use super::{Layer, Matrix, ParamSet};
use crate::error::{Error, Result};
use crate::pruning::{masked_weights, zero_dropped, Mask};

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Input to each layer: the batch itself, then each hidden activation
    /// after ReLU and dropout.
    pub inputs: Vec<Matrix>,
    /// Pre-activation of each layer; the last entry holds the logits.
    pub pre_activations: Vec<Matrix>,
    /// Inverted-dropout multipliers (`0` or `1/(1-rate)`) per hidden layer.
    pub dropout: Vec<Option<Vec<f64>>>,
}

/// Weights with the mask folded in, computed once and shared by every pass
/// over the same parameters.
pub(crate) struct EffectiveNet<'a> {
    params: &'a ParamSet,
    weights: Vec<Matrix>,
}

impl<'a> EffectiveNet<'a> {
    pub(crate) fn new(params: &'a ParamSet, mask: &Mask) -> Result<Self> {
        mask.check_matches(params)?;
        let weights = params
            .layers
            .iter()
            .zip(mask.layers())
            .map(|(l, m)| masked_weights(&l.weights, m))
            .collect();
        Ok(Self { params, weights })
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        let d = self.params.spec().input_dim();
        if x.cols() != d {
            return Err(Error::dim(format!("input has {} columns, network expects {d}", x.cols())));
        }
        if !x.is_finite() {
            return Err(Error::Numeric("non-finite input".into()));
        }
        Ok(())
    }

    pub(crate) fn forward<R: Rng + ?Sized>(
        &self,
        x: &Matrix,
        dropout_on: bool,
        rng: &mut R,
    ) -> Result<(Matrix, ForwardTrace)> {
        self.check_input(x)?;
        let rate = self.params.spec().dropout_rate;
        let n = x.rows();
        let last = self.weights.len() - 1;
        let mut trace = ForwardTrace {
            inputs: Vec::with_capacity(self.weights.len()),
            pre_activations: Vec::with_capacity(self.weights.len()),
            dropout: Vec::with_capacity(last),
        };
        let mut current = x.clone();
        for (i, (w, layer)) in self.weights.iter().zip(&self.params.layers).enumerate() {
            let mut z = Matrix::zeros(n, w.rows());
            matmul_a_bt(&current, w, &mut z);
            add_bias(&mut z, &layer.biases);
            trace.inputs.push(current);
            if i == last {
                let probs = softmax(&z);
                trace.pre_activations.push(z);
                if !probs.is_finite() {
                    return Err(Error::Numeric("non-finite probabilities".into()));
                }
                return Ok((probs, trace));
            }
            let mut h = z.clone();
            for v in h.as_mut_slice() {
                *v = v.max(0.0);
            }
            let drop = if dropout_on && rate > 0.0 {
                let scale = 1.0 / (1.0 - rate);
                let keep = 1.0 - rate;
                let mult: Vec<f64> = (0..h.as_slice().len())
                    .map(|_| if rng.random_bool(keep) { scale } else { 0.0 })
                    .collect();
                for (v, m) in h.as_mut_slice().iter_mut().zip(&mult) {
                    *v *= m;
                }
                Some(mult)
            } else {
                None
            };
            trace.pre_activations.push(z);
            trace.dropout.push(drop);
            current = h;
        }
        unreachable!("network has at least one layer")
    }

    /// Reverse pass from `dL/dlogits`. Weight gradients are masked.
    pub(crate) fn backward(&self, mask: &Mask, trace: &ForwardTrace, dlogits: Matrix) -> Vec<Layer> {
        let mut grads: Vec<Layer> = Vec::with_capacity(self.weights.len());
        let mut dz = dlogits;
        for i in (0..self.weights.len()).rev() {
            let w = &self.weights[i];
            let input = &trace.inputs[i];
            let mut dw = Matrix::zeros(w.rows(), w.cols());
            matmul_at_b(&dz, input, &mut dw);
            zero_dropped(dw.as_mut_slice(), mask.layer(i).bits());
            let mut db = vec![0.0; w.rows()];
            for row in dz.iter_rows() {
                for (b, g) in db.iter_mut().zip(row) {
                    *b += g;
                }
            }
            grads.push(Layer { weights: dw, biases: db });
            if i == 0 {
                break;
            }
            let mut dh = Matrix::zeros(dz.rows(), w.cols());
            matmul(&dz, w, &mut dh);
            if let Some(mult) = &trace.dropout[i - 1] {
                for (g, m) in dh.as_mut_slice().iter_mut().zip(mult) {
                    *g *= m;
                }
            }
            for (g, &z) in dh.as_mut_slice().iter_mut().zip(trace.pre_activations[i - 1].as_slice()) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
            dz = dh;
        }
        grads.reverse();
        grads
    }
}

fn add_bias(z: &mut Matrix, b: &[f64]) {
    let cols = z.cols();
    for row in z.as_mut_slice().chunks_exact_mut(cols) {
        for (v, bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    let cols = out.cols();
    for row in out.as_mut_slice().chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Pulls `dL/dp` back through the softmax: `p ⊙ (g - <g, p>)`.
pub(crate) fn softmax_backward(probs: &Matrix, dprobs: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let g = dprobs.row(r);
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for ((o, &pk), &gk) in out.row_mut(r).iter_mut().zip(p).zip(g) {
            *o = pk * (gk - dot);
        }
    }
    out
}

/// Class probabilities for `x` under `params ⊙ mask`.
///
/// ReLU between layers, softmax on the output. With `dropout_on`, hidden
/// activations pass through inverted dropout at the spec's rate; otherwise
/// the output is deterministic and `rng` is untouched.
pub fn forward<R: Rng + ?Sized>(
    params: &ParamSet,
    mask: &Mask,
    x: &Matrix,
    dropout_on: bool,
    rng: &mut R,
) -> Result<(Matrix, ForwardTrace)> {
    EffectiveNet::new(params, mask)?.forward(x, dropout_on, rng)
}

/// `passes` independent dropout realisations of the forward pass.
pub fn stochastic_forward<R: Rng + ?Sized>(
    params: &ParamSet,
    mask: &Mask,
    x: &Matrix,
    passes: usize,
    rng: &mut R,
) -> Result<Vec<Matrix>> {
    if passes == 0 {
        return Err(Error::config("stochastic inference needs at least one pass"));
    }
    if params.spec().dropout_rate == 0.0 {
        log::warn!("stochastic forward with dropout rate 0; all passes will be identical");
    }
    let net = EffectiveNet::new(params, mask)?;
    (0..passes)
        .map(|_| net.forward(x, true, rng).map(|(p, _)| p))
        .collect()
}
