use rand::Rng;

use super::forward::{softmax_backward, EffectiveNet};
use super::ParamSet;
use crate::calib::{self, Batch, StrategyKind, StrategySpec};
use crate::error::{Error, Result};
use crate::pruning::Mask;

#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    /// Shaped like the parameters; zero at masked-out weights.
    pub grads: ParamSet,
    /// Per-sample `α_i` / `β_i` actually used, for strategies that have them.
    pub sample_weights: Option<Vec<f64>>,
}

/// Strategy objective on one batch and its reverse-mode gradient.
///
/// Randomness is drawn from `rng` in a fixed order: the mixup permutation and
/// `λ` draws (mixup only), then the dropout masks of each stochastic pass in
/// turn (`vwcc` and `lwcc_si` only). Other strategies run a single pass with
/// dropout off.
pub fn loss_and_grad<R: Rng + ?Sized>(
    params: &ParamSet,
    mask: &Mask,
    batch: &Batch,
    strategy: &StrategySpec,
    rng: &mut R,
) -> Result<LossGrad> {
    if batch.is_empty() {
        return Err(Error::data("empty batch"));
    }
    strategy.validate()?;
    let k = params.spec().num_classes();
    let mixed;
    let batch = if strategy.kind == StrategyKind::Mixup {
        mixed = calib::mixup_batch(batch, k, strategy.mixup_alpha, strategy.force_lambda, rng)?;
        &mixed
    } else {
        batch
    };

    let net = EffectiveNet::new(params, mask)?;
    let stochastic = strategy.kind.is_stochastic();
    let mut probs = Vec::with_capacity(strategy.forward_passes());
    let mut traces = Vec::with_capacity(strategy.forward_passes());
    for _ in 0..strategy.forward_passes() {
        let (p, t) = net.forward(&batch.inputs, stochastic, rng)?;
        probs.push(p);
        traces.push(t);
    }

    let obj = calib::objective(strategy, &probs, batch.targets())?;
    if !obj.loss.is_finite() {
        return Err(Error::Numeric(format!("{} loss is {}", strategy.kind, obj.loss)));
    }

    let mut grads: Option<ParamSet> = None;
    for ((p, trace), dp) in probs.iter().zip(&traces).zip(&obj.dprobs) {
        let dlogits = softmax_backward(p, dp);
        let layers = net.backward(mask, trace, dlogits);
        match &mut grads {
            None => {
                let mut g = params.zeros_like();
                g.layers = layers;
                grads = Some(g);
            }
            Some(acc) => {
                for (a, l) in acc.layers.iter_mut().zip(layers) {
                    for (x, y) in a.weights.as_mut_slice().iter_mut().zip(l.weights.as_slice()) {
                        *x += y;
                    }
                    for (x, y) in a.biases.iter_mut().zip(&l.biases) {
                        *x += y;
                    }
                }
            }
        }
    }
    let grads = grads.expect("at least one pass");
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok(LossGrad {
        loss: obj.loss,
        grads,
        sample_weights: obj.sample_weights,
    })
}
