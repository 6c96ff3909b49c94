//! Iterative magnitude pruning with rewinding, and ticket transfer.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::metrics::summarize;
use crate::nn::{init_network, ParamSet, PredictionSet};
use crate::pruning::{random_reinit, read_mask, rewind, sparsity, write_mask, Mask, ReinitMode, TicketRecord};
use crate::rng::derive_seed;

use super::config::{ExperimentConfig, LoadedData};
use super::dump::emit_predictions;
use super::ledger::{emit_csv, write_atomic, LedgerRow};
use super::train::{eval_threads, evaluate, Trainer};

const ORDER_STREAM: u64 = 100;
const TRAIN_STREAM_BASE: u64 = 200;
const REINIT_STREAM_BASE: u64 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Parameters about to be trained.
    Start,
    /// Parameters after the full epoch budget.
    Trained,
}

/// Passed to the observer at the start and end of each iteration's training.
pub struct IterationEvent<'a> {
    pub iteration: usize,
    pub phase: Phase,
    pub params: &'a ParamSet,
    pub mask: &'a Mask,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Complete,
    /// Pruning could not continue; the ledger holds the iterations before it.
    Exhausted { iteration: usize, reason: String },
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub ledger: Vec<LedgerRow>,
    pub status: RunStatus,
    pub tickets: Vec<TicketRecord>,
    pub output_dir: PathBuf,
}

pub fn mask_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join("masks").join(format!("iter_{iteration:03}.lthm"))
}

pub fn predictions_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join("predictions").join(format!("iter_{iteration:03}.json"))
}

pub fn ledger_path(dir: &Path) -> PathBuf {
    dir.join("ledger.csv")
}

pub fn config_path(dir: &Path) -> PathBuf {
    dir.join("config.txt")
}

fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    write_mask(mask, &mut bytes)?;
    write_atomic(path, &bytes)
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    let f = fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_mask(std::io::BufReader::new(f))
}

struct Recorder<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a LoadedData,
    dir: &'a Path,
    reinit_label: String,
    source_run: Option<String>,
    ledger: Vec<LedgerRow>,
    tickets: Vec<TicketRecord>,
}

impl Recorder<'_> {
    /// Trains `params` under `mask`, evaluates, and writes every artifact.
    fn iteration(
        &mut self,
        it: usize,
        params: ParamSet,
        mask: &Mask,
        observer: &mut dyn FnMut(&IterationEvent),
    ) -> Result<ParamSet> {
        let t0 = Instant::now();
        let cfg = self.cfg;
        observer(&IterationEvent {
            iteration: it,
            phase: Phase::Start,
            params: &params,
            mask,
        });
        let mut trainer = Trainer::new(
            params,
            mask.clone(),
            &cfg.optimizer,
            cfg.strategy.clone(),
            derive_seed(cfg.seed, TRAIN_STREAM_BASE + it as u64),
        )?;
        trainer.run_epochs(
            &self.data.train,
            cfg.batch_size,
            derive_seed(cfg.seed, ORDER_STREAM),
            cfg.epochs,
        )?;
        let trained = trainer.into_params();
        observer(&IterationEvent {
            iteration: it,
            phase: Phase::Trained,
            params: &trained,
            mask,
        });
        let preds: PredictionSet = evaluate(&trained, mask, &self.data.test, eval_threads())?;
        let m = summarize(&preds, cfg.eval_bins);
        let remaining = 100.0 * sparsity(mask);
        save_mask(mask, &mask_path(self.dir, it))?;
        emit_predictions(&preds, predictions_path(self.dir, it))?;
        self.ledger.push(LedgerRow {
            iteration: it,
            remaining_weights_pct: remaining,
            accuracy: m.accuracy,
            ece: m.ece,
            nll_mean: m.nll_mean,
            brier: m.brier,
            strategy: cfg.strategy.kind.to_string(),
            reinit_mode: self.reinit_label.clone(),
            seed: cfg.seed,
            wall_seconds: t0.elapsed().as_secs_f64(),
            source_run: self.source_run.clone(),
        });
        self.tickets.push(TicketRecord {
            iteration: it,
            mask: mask.clone(),
            remaining,
            source_run: self.source_run.clone().unwrap_or_else(|| self.dir.display().to_string()),
        });
        emit_csv(&self.ledger, ledger_path(self.dir))?;
        log::info!(
            "iteration {it}: {remaining:.2}% remaining, acc {:.4}, ece {:.4}",
            m.accuracy,
            m.ece
        );
        Ok(trained)
    }

    fn finish(self, status: RunStatus) -> RunOutcome {
        if let RunStatus::Exhausted { iteration, reason } = &status {
            log::warn!("stopped before iteration {iteration}: {reason}");
        }
        RunOutcome {
            ledger: self.ledger,
            status,
            tickets: self.tickets,
            output_dir: self.dir.to_path_buf(),
        }
    }
}

fn prepare_dir(cfg: &ExperimentConfig) -> Result<()> {
    let dir = &cfg.output_dir;
    for sub in ["masks", "predictions"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(format!("creating {}", p.display()), e))?;
    }
    write_atomic(&config_path(dir), cfg.to_text().as_bytes())
}

/// Loads the data named by `cfg` and runs the pruning loop.
pub fn run_lth(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let data = cfg.dataset.load()?;
    run_lth_with(cfg, &data, &mut |_| {})
}

/// Pruning loop on preloaded data.
///
/// Iteration 0 trains the dense network from `θ_i`. Each later iteration
/// prunes the previous trained weights, resets the survivors (rewind to
/// `θ_i`, or a fresh masked draw), and retrains for the full epoch budget.
pub fn run_lth_with(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    observer: &mut dyn FnMut(&IterationEvent),
) -> Result<RunOutcome> {
    cfg.validate()?;
    let spec = cfg.network_spec()?;
    if data.train.dim() != spec.input_dim() {
        return Err(Error::config(format!(
            "network input width {} does not match data width {}",
            spec.input_dim(),
            data.train.dim()
        )));
    }
    if data.train.num_classes > spec.num_classes() {
        return Err(Error::config(format!(
            "network has {} outputs but data has {} classes",
            spec.num_classes(),
            data.train.num_classes
        )));
    }
    prepare_dir(cfg)?;
    let theta = init_network(&spec)?;
    let mut rec = Recorder {
        cfg,
        data,
        dir: &cfg.output_dir,
        reinit_label: cfg.prune.reinit.to_string(),
        source_run: None,
        ledger: Vec::new(),
        tickets: Vec::new(),
    };
    let mut mask = Mask::ones_for(&theta);
    let mut trained = rec.iteration(0, theta, &mask, observer)?;
    for it in 1..=cfg.prune.iterations {
        let next = match cfg.prune.prune(&trained, &mask) {
            Ok(m) => m,
            Err(Error::Prune(reason)) => {
                return Ok(rec.finish(RunStatus::Exhausted { iteration: it, reason }));
            }
            Err(e) => return Err(e),
        };
        if next.surviving() == mask.surviving() {
            let reason = "pruning removed no weights".to_string();
            return Ok(rec.finish(RunStatus::Exhausted { iteration: it, reason }));
        }
        mask = next;
        let start = match cfg.prune.reinit {
            ReinitMode::Rewind => rewind(&trained, &mask)?,
            ReinitMode::Random => random_reinit(&spec, &mask, derive_seed(cfg.seed, REINIT_STREAM_BASE + it as u64))?,
        };
        trained = rec.iteration(it, start, &mask, observer)?;
    }
    Ok(rec.finish(RunStatus::Complete))
}

/// Masks of a finished run, ordered by iteration.
pub fn source_masks(source_dir: &Path) -> Result<Vec<(usize, Mask)>> {
    let dir = source_dir.join("masks");
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    let mut found = Vec::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        let name = e.file_name().to_string_lossy().into_owned();
        if let Some(n) = name.strip_prefix("iter_").and_then(|s| s.strip_suffix(".lthm")) {
            if let Ok(i) = n.parse::<usize>() {
                found.push((i, e.path()));
            }
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::data(format!("no masks under {}", dir.display())));
    }
    found.into_iter().map(|(i, p)| Ok((i, load_mask(&p)?))).collect()
}

pub fn run_transfer(source_dir: &Path, target: &ExperimentConfig, random_ticket: bool) -> Result<RunOutcome> {
    target.validate()?;
    let data = target.dataset.load()?;
    run_transfer_with(source_dir, target, &data, random_ticket, &mut |_| {})
}

/// Retrains every ticket of the run in `source_dir` on the target data.
///
/// A ticket is the source mask applied to the source run's initialisation.
/// With `random_ticket` the survivors are redrawn instead, keeping the mask.
pub fn run_transfer_with(
    source_dir: &Path,
    target: &ExperimentConfig,
    data: &LoadedData,
    random_ticket: bool,
    observer: &mut dyn FnMut(&IterationEvent),
) -> Result<RunOutcome> {
    target.validate()?;
    let source = ExperimentConfig::from_file(config_path(source_dir))?;
    if source.layer_dims != target.layer_dims {
        return Err(Error::config(format!(
            "source network {:?} differs from target network {:?}",
            source.layer_dims, target.layer_dims
        )));
    }
    if data.train.dim() != source.layer_dims[0] {
        return Err(Error::config("target data width does not match the source network"));
    }
    let masks = source_masks(source_dir)?;
    let source_spec = source.network_spec()?;
    let theta = init_network(&source_spec)?;
    let target_spec = target.network_spec()?;
    // Dropout follows the target strategy; the ticket weights come from the source.
    let theta = ParamSet::from_layers(target_spec.clone(), theta.layers)?;
    prepare_dir(target)?;
    let mut rec = Recorder {
        cfg: target,
        data,
        dir: &target.output_dir,
        reinit_label: if random_ticket { ReinitMode::Random } else { ReinitMode::Rewind }.to_string(),
        source_run: Some(source_dir.display().to_string()),
        ledger: Vec::new(),
        tickets: Vec::new(),
    };
    for (it, mask) in &masks {
        mask.check_matches(&theta)?;
        let start = if random_ticket {
            random_reinit(&target_spec, mask, derive_seed(target.seed, REINIT_STREAM_BASE + *it as u64))?
        } else {
            rewind(&theta, mask)?
        };
        rec.iteration(*it, start, mask, observer)?;
    }
    Ok(rec.finish(RunStatus::Complete))
}
