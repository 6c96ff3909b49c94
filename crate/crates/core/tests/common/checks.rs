//! Acceptance checks shared by the focused test files and the acceptance runner.

use std::path::Path;
use std::process::Command;

use lth::calib::{soft_histogram, StrategyKind, StrategySpec};
use lth::harness::{OptimizerConfig, Trainer};
use lth::metrics;
use lth::nn::{init_network, Matrix, NetworkSpec, PredictionSet};
use lth::pruning::{prune_global, prune_local, random_reinit, rewind, Mask};
use lth::rng::stream;
use rand::Rng;

use super::oracles::{self, bits, is_subset, ks, tied_net, train_a_bit};
use super::{fd_check, random_batch, random_mask, random_net, random_predictions, strategy};

#[derive(Debug)]
pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn fail(detail: impl Into<String>) -> Self {
        Check {
            pass: false,
            detail: detail.into(),
        }
    }

    fn pass(detail: impl Into<String>) -> Self {
        Check {
            pass: true,
            detail: detail.into(),
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Check::fail(format!($($msg)+));
        }
    };
}

pub const FD_SHAPES: [&[usize]; 3] = [&[6, 5, 4, 3], &[4, 3], &[5, 6, 2]];
pub const FD_TOL: f64 = 1e-4;

pub fn gradients() -> Check {
    let mut summary = Vec::new();
    for kind in StrategyKind::ALL {
        let spec = strategy(kind);
        let mut worst = 0.0f64;
        for (s, dims) in FD_SHAPES.iter().enumerate() {
            for seed in 0..4u64 {
                let seed = seed + 10 * s as u64;
                let params = random_net(dims, 0.3, seed);
                let mask = if seed.is_multiple_of(2) {
                    Mask::ones_for(&params)
                } else {
                    random_mask(&params, 0.7, seed)
                };
                let n = 2 + (seed as usize % 7);
                let batch = random_batch(n, dims[0], *dims.last().unwrap(), seed);
                let r = fd_check(&params, &mask, &batch, &spec, seed);
                ensure!(r.max_rel_err < FD_TOL, "{kind} dims {dims:?} seed {seed}: {r:?}");
                ensure!(r.loss_gap < 1e-12, "{kind}: loss differs from oracle by {}", r.loss_gap);
                ensure!(r.masked_leak == 0.0, "{kind}: gradient {} at a pruned weight", r.masked_leak);
                worst = worst.max(r.max_rel_err);
            }
        }
        summary.push(format!("{kind} {worst:.1e}"));
    }
    Check::pass(format!("max rel err: {}", summary.join(", ")))
}

/// Random prediction set with edge cases: confidences on bin edges, tied
/// maxima, one-hot rows and zero probabilities.
pub fn prediction_case(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>, usize) {
    let mut rng = stream(seed, 82);
    let n = rng.random_range(1..=300);
    let k = rng.random_range(2..=12);
    let bins: usize = if seed.is_multiple_of(2) { 15 } else { rng.random_range(1..=30) };
    let (mut rows, labels) = random_predictions(n, k, seed);
    for row in rows.iter_mut() {
        match rng.random_range(0..10) {
            0 => {
                let lo = bins.div_ceil(k);
                let b = rng.random_range(lo.max(1)..=bins);
                let c = b as f64 / bins as f64;
                let rest = (1.0 - c) / (k - 1) as f64;
                if rest <= c {
                    let at = rng.random_range(0..k);
                    *row = (0..k).map(|j| if j == at { c } else { rest }).collect();
                }
            }
            1 => *row = vec![1.0 / k as f64; k],
            2 => {
                *row = vec![0.0; k];
                row[rng.random_range(0..k)] = 1.0;
            }
            _ => {}
        }
    }
    (rows, labels, bins)
}

pub const METRIC_CASES: u64 = 200;

pub fn metric_oracles() -> Check {
    let (mut worst_nll, mut worst_brier) = (0.0f64, 0.0f64);
    for seed in 0..METRIC_CASES {
        let (rows, labels, bins) = prediction_case(seed);
        let k = rows[0].len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let preds = PredictionSet::new(Matrix::new(rows.len(), k, flat).unwrap(), labels.clone()).unwrap();
        let (e, report) = metrics::ece(&preds, bins);
        let oe = oracles::ece(&rows, &labels, bins);
        ensure!(e == oe, "case {seed}: ece {e} vs oracle {oe}");
        ensure!(
            report.bins.iter().map(|b| b.count).sum::<usize>() == rows.len(),
            "case {seed}: bin counts do not cover the set"
        );
        let (a, oa) = (metrics::accuracy(&preds), oracles::accuracy(&rows, &labels));
        ensure!(a == oa, "case {seed}: accuracy {a} vs oracle {oa}");
        let dn = (metrics::nll_mean(&preds) - oracles::nll_mean(&rows, &labels)).abs();
        let db = (metrics::brier(&preds) - oracles::brier(&rows, &labels)).abs();
        ensure!(dn <= 1e-12, "case {seed}: nll off by {dn:e}");
        ensure!(db <= 1e-12, "case {seed}: brier off by {db:e}");
        worst_nll = worst_nll.max(dn);
        worst_brier = worst_brier.max(db);
    }
    Check::pass(format!(
        "{METRIC_CASES} sets; ece/accuracy exact; nll {worst_nll:.1e}, brier {worst_brier:.1e}"
    ))
}

/// Fresh weights each round, as after retraining.
fn reshuffled(dims: &[usize], round: u64) -> lth::nn::ParamSet {
    tied_net(dims, 1000 + round)
}

pub fn pruning_oracles() -> Check {
    let dims = [12, 9, 7, 4];
    let mut rounds = 0;
    for seed in 0..20u64 {
        let mut local = Mask::ones_for(&tied_net(&dims, seed));
        let mut global = local.clone();
        let protected: &[usize] = if seed.is_multiple_of(2) { &[2] } else { &[] };
        let ratio = if seed % 3 == 0 { 0.35 } else { 0.2 };
        for round in 0..10 {
            let p = reshuffled(&dims, seed * 100 + round);
            let next_local = prune_local(&p, &local, ratio, 0.1).unwrap();
            ensure!(
                bits(&next_local) == oracles::prune_local(&p, &local, ratio, 0.1),
                "local mismatch at seed {seed} round {round}"
            );
            let next_global = prune_global(&p, &global, ratio, protected).unwrap();
            ensure!(
                bits(&next_global) == oracles::prune_global(&p, &global, ratio, protected),
                "global mismatch at seed {seed} round {round}"
            );
            ensure!(
                is_subset(&next_local, &local) && is_subset(&next_global, &global),
                "mask grew at seed {seed} round {round}"
            );
            for &l in protected {
                ensure!(
                    next_global.layer(l).bits() == global.layer(l).bits(),
                    "protected layer {l} changed"
                );
            }
            local = next_local;
            global = next_global;
            rounds += 1;
        }
    }
    Check::pass(format!("{rounds} local and global rounds match; masks monotone"))
}

pub fn rewind_exactness() -> Check {
    let mut coords = 0usize;
    for seed in 0..10u64 {
        let theta = random_net(&[8, 12, 6, 3], 0.0, seed);
        let snapshot = theta.init_snapshot().to_vec();
        let ones = Mask::ones_for(&theta);
        let trained = train_a_bit(theta, &ones, 5 + seed as usize, seed);
        ensure!(trained.layers != snapshot, "training left the weights unchanged");
        let mask = prune_local(&trained, &ones, 0.3, 0.2).unwrap();
        let r = rewind(&trained, &mask).unwrap();
        for (l, (got, init)) in r.layers.iter().zip(&snapshot).enumerate() {
            let keep = mask.layer(l).bits();
            for (k, (&g, &i)) in got.weights.as_slice().iter().zip(init.weights.as_slice()).enumerate() {
                let want = if keep[k] { i } else { 0.0 };
                ensure!(g.to_bits() == want.to_bits(), "seed {seed} layer {l} weight {k}: {g} vs {want}");
                coords += 1;
            }
            ensure!(got.biases == init.biases, "seed {seed}: biases not restored");
        }
        let again = rewind(&r, &mask).unwrap();
        ensure!(again.layers == r.layers, "rewind is not idempotent");
        let retrained = train_a_bit(r, &mask, 4, seed + 50);
        ensure!(
            rewind(&retrained, &mask).unwrap().layers == again.layers,
            "rewind after retraining differs"
        );
    }
    Check::pass(format!("{coords} coordinates bit-equal; idempotent"))
}

/// Strategy whose calibration terms are switched off.
pub fn neutralised(kind: StrategyKind) -> StrategySpec {
    StrategySpec {
        passes: 1,
        dropout_rate: 0.0,
        gamma_d: 0.0,
        gamma_n: 0.0,
        force_alpha: Some(0.0),
        force_beta: Some(0.0),
        force_lambda: Some(1.0),
        ..StrategySpec::new(kind)
    }
}

pub fn reduction() -> Check {
    let dims = [6, 8, 5, 3];
    let opt = OptimizerConfig::default();
    let batches: Vec<_> = (0..5).map(|s| random_batch(7, 6, 3, 500 + s)).collect();
    let trajectory = |spec: StrategySpec| {
        let params = random_net(&dims, 0.0, 3);
        let mask = random_mask(&params, 0.8, 3);
        let mut t = Trainer::new(params, mask, &opt, spec, 11).unwrap();
        let losses: Vec<u64> = batches.iter().map(|b| t.step(b).unwrap().to_bits()).collect();
        (losses, t.into_params().layers)
    };
    let (base, base_params) = trajectory(StrategySpec::new(StrategyKind::None));
    for kind in StrategyKind::ALL {
        let (losses, params) = trajectory(neutralised(kind));
        ensure!(losses == base, "{kind}: losses {losses:?} vs baseline {base:?}");
        ensure!(params == base_params, "{kind}: parameters diverge from baseline");
    }
    Check::pass("7 strategies reproduce 5 baseline steps bit-for-bit")
}

fn strip_wall(csv: &str) -> String {
    let header: Vec<&str> = csv.lines().next().unwrap_or("").split(',').collect();
    let col = header.iter().position(|h| *h == "wall_seconds");
    csv.lines()
        .map(|line| {
            line.split(',')
                .enumerate()
                .filter(|(i, _)| Some(*i) != col)
                .map(|(_, f)| f)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub const SMALL_CONFIG: &str = "\
seed = 5
epochs = 3
batch_size = 16
dataset.kind = blobs
dataset.classes = 3
dataset.per_class = 60
dataset.test_per_class = 30
dataset.dim = 8
dataset.separation = 2.0
dataset.seed = 9
network.layer_dims = 8,24,12,3
optimizer.lr = 0.01
strategy.kind = vwcc
strategy.passes = 3
prune.iterations = 3
";

fn lth_run(config: &Path, out: &Path, threads: &str) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_lth"))
        .args(["run", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("LTH_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&status.stderr).into_owned())
    }
}

pub fn determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.txt");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    let runs = [("1", dir.path().join("one")), ("3", dir.path().join("two"))];
    for (threads, out) in &runs {
        if let Err(e) = lth_run(&config, out, threads) {
            return Check::fail(format!("lth run failed: {e}"));
        }
    }
    let read = |p: &Path| std::fs::read(p).unwrap();
    let (a, b) = (&runs[0].1, &runs[1].1);
    let csv = |d: &Path| strip_wall(&String::from_utf8(read(&d.join("ledger.csv"))).unwrap());
    ensure!(csv(a) == csv(b), "ledgers differ");
    let mut files = 0;
    for sub in ["masks", "predictions"] {
        let mut names: Vec<_> = std::fs::read_dir(a.join(sub)).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        ensure!(names.len() == 4, "expected 4 files under {sub}, found {}", names.len());
        for name in names {
            ensure!(read(&a.join(sub).join(&name)) == read(&b.join(sub).join(&name)), "{sub}/{name:?} differs");
            files += 1;
        }
    }
    Check::pass(format!("ledger and {files} mask/prediction files byte-identical across runs"))
}

pub const SOFT_BANDWIDTH: f64 = 0.001;
pub const SOFT_TOL: f64 = 0.01;

/// Largest per-bin gap between soft and hard counts, in samples.
pub fn soft_histogram_gap(seed: u64, n: usize, bins: usize) -> f64 {
    let mut rng = stream(seed, 83);
    let conf: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..=0.95)).collect();
    let soft = soft_histogram(&conf, bins, SOFT_BANDWIDTH);
    let hard = oracles::hard_counts(&conf, bins);
    soft.iter().zip(&hard).map(|(s, h)| (s - h).abs()).fold(0.0, f64::max)
}

pub fn soft_histogram_consistency() -> Check {
    let n = 1000;
    let gap = soft_histogram_gap(7, n, 10);
    let detail = format!(
        "max per-bin |soft - hard| = {gap:.4} samples ({:.2e} of N), tolerance {SOFT_TOL}",
        gap / n as f64
    );
    Check {
        pass: gap <= SOFT_TOL,
        detail,
    }
}

/// `random_reinit` survivors against a fresh `init_network` draw.
pub fn reinit_distribution() -> Check {
    let spec = NetworkSpec::new(vec![200, 100, 10], 0.0, 4).unwrap();
    let theta = init_network(&spec).unwrap();
    let mask = prune_local(&theta, &Mask::ones_for(&theta), 0.5, 0.3).unwrap();
    let fresh = random_reinit(&spec, &mask, 99).unwrap();
    let reference = init_network(&NetworkSpec { seed: 12345, ..spec.clone() }).unwrap();
    let keep = mask.layer(0).bits();
    let w = fresh.layers[0].weights.as_slice();
    let r = reference.layers[0].weights.as_slice();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for k in 0..keep.len() {
        if keep[k] {
            a.push(w[k]);
            b.push(r[k]);
        } else {
            ensure!(w[k] == 0.0, "pruned coordinate {k} is {}", w[k]);
        }
    }
    let (n, m) = (a.len() as f64, b.len() as f64);
    let d = ks(a, b);
    let critical = 1.63 * ((n + m) / (n * m)).sqrt();
    ensure!(d < critical, "KS statistic {d} above 1% critical value {critical}");
    Check::pass(format!("KS {d:.4} < {critical:.4}"))
}
