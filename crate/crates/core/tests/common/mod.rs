#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod oracles;

use lth::calib::{
    cross_entropy, lwcc_betas, lwcc_loss_with_beta, mda_penalty, mean_prediction, mixup_batch, nba_penalty,
    vwcc_alphas, vwcc_loss_with_alpha, Batch, StrategyKind, StrategySpec, Targets,
};
use lth::nn::{forward, init_network, loss_and_grad, stochastic_forward, Layer, Matrix, NetworkSpec, ParamSet};
use lth::pruning::{LayerMask, Mask};
use lth::rng::{stream, RandomStream};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
/// Relative errors are taken against `max(|analytic|, |numeric|, FD_FLOOR)`.
pub const FD_FLOOR: f64 = 1e-6;

pub fn random_net(dims: &[usize], dropout: f64, seed: u64) -> ParamSet {
    let spec = NetworkSpec::new(dims.to_vec(), dropout, seed).unwrap();
    let base = init_network(&spec).unwrap();
    let mut rng = stream(seed, 77);
    let layers = base
        .layers
        .iter()
        .map(|l| Layer {
            weights: l.weights.clone(),
            biases: l.biases.iter().map(|_| rng.random_range(-0.2..0.2)).collect(),
        })
        .collect();
    ParamSet::from_layers(spec, layers).unwrap()
}

/// Random mask keeping roughly `keep` of each layer, never emptying one.
pub fn random_mask(params: &ParamSet, keep: f64, seed: u64) -> Mask {
    let mut rng = stream(seed, 78);
    Mask::new(
        params
            .layers
            .iter()
            .map(|l| {
                let (r, c) = l.weights.shape();
                let mut bits: Vec<bool> = (0..r * c).map(|_| rng.random_bool(keep)).collect();
                let first = rng.random_range(0..bits.len());
                bits[first] = true;
                LayerMask::from_bits(r, c, bits).unwrap()
            })
            .collect(),
    )
}

pub fn random_batch(n: usize, d: usize, k: usize, seed: u64) -> Batch {
    let mut rng = stream(seed, 79);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    Batch::new(Matrix::new(n, d, x).unwrap(), y).unwrap()
}

/// Copy of `params` with one coordinate shifted by `delta`.
pub fn nudged(params: &ParamSet, layer: usize, bias: bool, idx: usize, delta: f64) -> ParamSet {
    let mut layers = params.layers.clone();
    let l = &mut layers[layer];
    if bias {
        l.biases[idx] += delta;
    } else {
        let (r, c) = l.weights.shape();
        let mut w = l.weights.as_slice().to_vec();
        w[idx] += delta;
        l.weights = Matrix::new(r, c, w).unwrap();
    }
    ParamSet::from_layers(params.spec().clone(), layers).unwrap()
}

/// Per-sample weights held fixed while differencing.
pub enum Frozen {
    Nothing,
    Alpha(Vec<f64>),
    Beta(Vec<f64>),
}

fn probs_det(params: &ParamSet, mask: &Mask, x: &Matrix, rng: &mut RandomStream) -> Matrix {
    forward(params, mask, x, false, rng).unwrap().0
}

/// Strategy objective rebuilt from the public scalar operations, replaying
/// the randomness of `rng` in the same order as training does.
pub fn oracle_loss(
    params: &ParamSet,
    mask: &Mask,
    batch: &Batch,
    spec: &StrategySpec,
    rng: &RandomStream,
    frozen: &Frozen,
) -> f64 {
    let mut r = rng.clone();
    let labels = &batch.labels;
    let k = params.spec().num_classes();
    match spec.kind {
        StrategyKind::None => {
            let p = probs_det(params, mask, &batch.inputs, &mut r);
            cross_entropy(&p, Targets::Hard(labels)).unwrap()
        }
        StrategyKind::Mixup => {
            let mixed = mixup_batch(batch, k, spec.mixup_alpha, spec.force_lambda, &mut r).unwrap();
            let p = probs_det(params, mask, &mixed.inputs, &mut r);
            cross_entropy(&p, mixed.targets()).unwrap()
        }
        StrategyKind::Mda => {
            let p = probs_det(params, mask, &batch.inputs, &mut r);
            cross_entropy(&p, Targets::Hard(labels)).unwrap() + mda_penalty(&p, spec.prior.as_deref(), spec.gamma_d)
        }
        StrategyKind::Nba => {
            let p = probs_det(params, mask, &batch.inputs, &mut r);
            cross_entropy(&p, Targets::Hard(labels)).unwrap() + nba_penalty(&p, spec)
        }
        StrategyKind::Lwcc => {
            let p = probs_det(params, mask, &batch.inputs, &mut r);
            let betas = match frozen {
                Frozen::Beta(b) => b.clone(),
                _ => lwcc_betas(&p, labels),
            };
            lwcc_loss_with_beta(&p, labels, &betas).unwrap()
        }
        StrategyKind::Vwcc | StrategyKind::LwccSi => {
            let passes = stochastic_forward(params, mask, &batch.inputs, spec.passes, &mut r).unwrap();
            let mean = mean_prediction(&passes).unwrap();
            if spec.kind == StrategyKind::Vwcc {
                let alphas = match frozen {
                    Frozen::Alpha(a) => a.clone(),
                    _ => vwcc_alphas(&passes, spec.vwcc_alpha_complement).unwrap(),
                };
                vwcc_loss_with_alpha(&mean, labels, &alphas).unwrap()
            } else {
                let betas = match frozen {
                    Frozen::Beta(b) => b.clone(),
                    _ => lwcc_betas(&mean, labels),
                };
                lwcc_loss_with_beta(&mean, labels, &betas).unwrap()
            }
        }
    }
}

/// The per-sample weights the objective holds constant at `params`.
pub fn freeze(params: &ParamSet, mask: &Mask, batch: &Batch, spec: &StrategySpec, rng: &RandomStream) -> Frozen {
    let mut r = rng.clone();
    match spec.kind {
        StrategyKind::Lwcc => {
            let p = probs_det(params, mask, &batch.inputs, &mut r);
            Frozen::Beta(lwcc_betas(&p, &batch.labels))
        }
        StrategyKind::Vwcc | StrategyKind::LwccSi => {
            let passes = stochastic_forward(params, mask, &batch.inputs, spec.passes, &mut r).unwrap();
            if spec.kind == StrategyKind::Vwcc {
                Frozen::Alpha(vwcc_alphas(&passes, spec.vwcc_alpha_complement).unwrap())
            } else {
                Frozen::Beta(lwcc_betas(&mean_prediction(&passes).unwrap(), &batch.labels))
            }
        }
        _ => Frozen::Nothing,
    }
}

#[derive(Debug)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub worst: String,
    /// `|analytic - oracle|` of the loss value itself.
    pub loss_gap: f64,
    /// Largest analytic gradient at a masked-out weight (must be 0).
    pub masked_leak: f64,
    pub coords: usize,
}

/// Central differences of [`oracle_loss`] against the analytic gradient.
pub fn fd_check(params: &ParamSet, mask: &Mask, batch: &Batch, spec: &StrategySpec, seed: u64) -> FdReport {
    let rng = stream(seed, 80);
    let lg = loss_and_grad(params, mask, batch, spec, &mut rng.clone()).unwrap();
    let frozen = freeze(params, mask, batch, spec, &rng);
    let base = oracle_loss(params, mask, batch, spec, &rng, &frozen);
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst: String::new(),
        loss_gap: (base - lg.loss).abs(),
        masked_leak: 0.0,
        coords: 0,
    };
    for (li, layer) in params.layers.iter().enumerate() {
        let keep = mask.layer(li).bits();
        let coords = (0..layer.weights.as_slice().len())
            .map(|i| (false, i))
            .chain((0..layer.biases.len()).map(|i| (true, i)));
        for (bias, idx) in coords {
            let analytic = if bias {
                lg.grads.layers[li].biases[idx]
            } else {
                lg.grads.layers[li].weights.as_slice()[idx]
            };
            if !bias && !keep[idx] {
                report.masked_leak = report.masked_leak.max(analytic.abs());
                continue;
            }
            let up = oracle_loss(&nudged(params, li, bias, idx, FD_STEP), mask, batch, spec, &rng, &frozen);
            let down = oracle_loss(&nudged(params, li, bias, idx, -FD_STEP), mask, batch, spec, &rng, &frozen);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR);
            report.coords += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = format!(
                    "layer {li} {} {idx}: analytic {analytic:e}, numeric {numeric:e}",
                    if bias { "bias" } else { "weight" }
                );
            }
        }
    }
    report
}

pub fn strategy(kind: StrategyKind) -> StrategySpec {
    StrategySpec {
        kind,
        passes: 3,
        // Larger than the defaults so the extra terms carry real gradient.
        gamma_d: 0.5,
        gamma_n: 0.5,
        nba_bandwidth: 0.1,
        ..StrategySpec::new(kind)
    }
}

/// Random simplex rows of width `k` with labels.
pub fn random_predictions(n: usize, k: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = stream(seed, 81);
    let rows = (0..n)
        .map(|_| {
            let sharp: f64 = rng.random_range(0.5..6.0);
            let raw: Vec<f64> = (0..k).map(|_| (rng.random_range(-1.0f64..1.0) * sharp).exp()).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
    (rows, labels)
}
