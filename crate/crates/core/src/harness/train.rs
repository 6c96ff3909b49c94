//! Mini-batch training and batched evaluation.

use crate::calib::{Batch, StrategySpec};
use crate::data::{batch_iter, Dataset};
use crate::error::{Error, Result};
use crate::nn::{optimizer_step, loss_and_grad, EffectiveNet, Matrix, OptimState, ParamSet, PredictionSet};
use crate::pruning::Mask;
use crate::rng::{self, streams, RandomStream};

use super::config::{OptimizerConfig, OptimizerKind};

/// Rows per evaluation chunk. Fixed so results do not depend on thread count.
pub const EVAL_CHUNK: usize = 512;

/// Optimiser state plus the stream that feeds dropout and mixup.
pub struct Trainer {
    params: ParamSet,
    mask: Mask,
    state: OptimState,
    lr: f64,
    strategy: StrategySpec,
    rng: RandomStream,
}

impl Trainer {
    pub fn new(params: ParamSet, mask: Mask, opt: &OptimizerConfig, strategy: StrategySpec, seed: u64) -> Result<Self> {
        mask.check_matches(&params)?;
        strategy.validate()?;
        let state = match opt.kind {
            OptimizerKind::Adam => OptimState::adam(&params),
            OptimizerKind::Sgd => OptimState::sgd(&params, opt.momentum, opt.weight_decay, opt.milestones.clone()),
        };
        let mut params = params;
        mask.apply(&mut params)?;
        Ok(Self {
            params,
            mask,
            state,
            lr: opt.lr,
            strategy,
            rng: rng::stream(seed, streams::TRAIN),
        })
    }

    /// One optimiser step on `batch`; returns the loss before the update.
    pub fn step(&mut self, batch: &Batch) -> Result<f64> {
        let lg = loss_and_grad(&self.params, &self.mask, batch, &self.strategy, &mut self.rng)?;
        optimizer_step(&mut self.params, &lg.grads, &mut self.state, self.lr, &self.mask)?;
        Ok(lg.loss)
    }

    /// Full epochs over `ds`; returns the mean batch loss of each epoch.
    pub fn run_epochs(&mut self, ds: &Dataset, batch_size: usize, order_seed: u64, epochs: usize) -> Result<Vec<f64>> {
        let mut losses = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            self.state.set_epoch(epoch);
            let mut sum = 0.0;
            let mut n = 0usize;
            for batch in batch_iter(ds, batch_size, order_seed, epoch)? {
                sum += self.step(&batch)?;
                n += 1;
            }
            let mean = sum / n.max(1) as f64;
            log::debug!("epoch {epoch}: mean loss {mean:.6}");
            losses.push(mean);
        }
        Ok(losses)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }
}

/// Worker count from `LTH_THREADS`, defaulting to 1.
pub fn eval_threads() -> usize {
    std::env::var("LTH_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Deterministic (dropout off) predictions on every sample of `ds`.
///
/// Chunks of [`EVAL_CHUNK`] rows are spread over `threads` workers; the
/// output is identical for any thread count.
pub fn evaluate(params: &ParamSet, mask: &Mask, ds: &Dataset, threads: usize) -> Result<PredictionSet> {
    if ds.is_empty() {
        return Err(Error::data("cannot evaluate on an empty dataset"));
    }
    let net = EffectiveNet::new(params, mask)?;
    let k = params.spec().num_classes();
    let chunks: Vec<Vec<usize>> = (0..ds.len())
        .collect::<Vec<_>>()
        .chunks(EVAL_CHUNK)
        .map(<[usize]>::to_vec)
        .collect();
    let run = |idx: &[usize]| -> Result<Matrix> {
        // Never drawn from with dropout off.
        let mut unused = rng::stream(0, 0);
        net.forward(&ds.features.select_rows(idx), false, &mut unused).map(|(p, _)| p)
    };
    let threads = threads.clamp(1, chunks.len());
    let outputs: Vec<Result<Matrix>> = if threads == 1 {
        chunks.iter().map(|c| run(c)).collect()
    } else {
        let mut slots: Vec<Option<Result<Matrix>>> = (0..chunks.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let chunks = &chunks;
                    let run = &run;
                    s.spawn(move || {
                        (t..chunks.len())
                            .step_by(threads)
                            .map(|i| (i, run(&chunks[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("evaluation worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every chunk evaluated")).collect()
    };
    let mut data = Vec::with_capacity(ds.len() * k);
    for m in outputs {
        data.extend_from_slice(m?.as_slice());
    }
    PredictionSet::new(Matrix::new(ds.len(), k, data)?, ds.labels.clone())
}
