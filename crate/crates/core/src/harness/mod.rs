//! Experiment orchestration: configuration, the pruning loop, transfer, and
//! the ledger, prediction-dump and plot artifacts.

mod config;
mod dump;
mod ledger;
mod lth;
mod plot;
mod train;

pub use config::{DatasetSource, DatasetSpec, ExperimentConfig, Half, LoadedData, OptimizerConfig, OptimizerKind};
pub use dump::{emit_predictions, predictions_from_json, predictions_to_json, read_predictions};
pub use ledger::{emit_csv, parse_csv, read_csv, render_csv, LedgerRow, LEDGER_HEADER};
pub use lth::{
    config_path, ledger_path, load_mask, mask_path, predictions_path, run_lth, run_lth_with, run_transfer,
    run_transfer_with, source_masks, IterationEvent, Phase, RunOutcome, RunStatus,
};
pub use plot::{emit_plots, plot_rows, render_svg};
pub use train::{eval_threads, evaluate, Trainer, EVAL_CHUNK};
