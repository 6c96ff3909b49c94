//! Brute-force reference implementations used only by tests.

use lth::calib::{StrategyKind, StrategySpec};
use lth::harness::{OptimizerConfig, Trainer};
use lth::nn::{Layer, Matrix, NetworkSpec, ParamSet};
use lth::pruning::Mask;
use lth::rng::stream;
use rand::Rng;

use super::random_batch;

pub const LOG_FLOOR: f64 = 1e-12;

/// Compensated (Neumaier) sum.
pub fn comp_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

/// True when `row[y]` beats every earlier entry and ties or beats every later one.
pub fn predicts(row: &[f64], y: usize) -> bool {
    row[..y].iter().all(|&v| row[y] > v) && row[y + 1..].iter().all(|&v| row[y] >= v)
}

pub fn top(row: &[f64]) -> usize {
    (0..row.len()).find(|&k| predicts(row, k)).unwrap()
}

pub fn accuracy(rows: &[Vec<f64>], labels: &[usize]) -> f64 {
    rows.iter().zip(labels).filter(|(r, &y)| predicts(r, y)).count() as f64 / rows.len() as f64
}

/// Per-bin scan over all samples; interior edges belong to the upper bin.
pub fn ece(rows: &[Vec<f64>], labels: &[usize], bins: usize) -> f64 {
    let n = rows.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let (mut count, mut hits, mut conf) = (0usize, 0usize, 0.0);
        for (r, &y) in rows.iter().zip(labels) {
            let t = top(r);
            let c = r[t];
            if c >= lo && (c < hi || b == bins - 1) {
                count += 1;
                conf += c;
                hits += (t == y) as usize;
            }
        }
        if count > 0 {
            let acc = hits as f64 / count as f64;
            total += (count as f64 / n) * (acc - conf / count as f64).abs();
        }
    }
    total
}

pub fn nll_mean(rows: &[Vec<f64>], labels: &[usize]) -> f64 {
    comp_sum(rows.iter().zip(labels).map(|(r, &y)| -r[y].max(LOG_FLOOR).ln())) / rows.len() as f64
}

pub fn brier(rows: &[Vec<f64>], labels: &[usize]) -> f64 {
    let terms = rows.iter().zip(labels).flat_map(|(r, &y)| {
        r.iter().enumerate().map(move |(k, &p)| {
            let d = if k == y { p - 1.0 } else { p };
            d * d
        })
    });
    comp_sum(terms) / rows.len() as f64
}

/// Plain hard histogram on `B` equal-width bins over `[0, 1]`.
pub fn hard_counts(confidences: &[f64], bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    for &c in confidences {
        let b = (0..bins)
            .rev()
            .find(|&b| c >= b as f64 / bins as f64)
            .unwrap_or(0);
        counts[b] += 1.0;
    }
    counts
}

/// Net whose weights are multiples of 0.05, so magnitudes tie often.
pub fn tied_net(dims: &[usize], seed: u64) -> ParamSet {
    let spec = NetworkSpec::new(dims.to_vec(), 0.0, seed).unwrap();
    let mut rng = stream(seed, 90);
    let layers = spec
        .weight_shapes()
        .iter()
        .map(|&(o, i)| Layer {
            weights: Matrix::new(o, i, (0..o * i).map(|_| rng.random_range(-8i32..=8) as f64 * 0.05).collect())
                .unwrap(),
            biases: vec![0.0; o],
        })
        .collect();
    ParamSet::from_layers(spec, layers).unwrap()
}

pub fn bits(mask: &Mask) -> Vec<Vec<bool>> {
    mask.layers().iter().map(|l| l.bits().to_vec()).collect()
}

/// Surviving coordinates of `layers`, sorted by `(|w|, layer, position)`.
fn sorted_candidates(params: &ParamSet, mask: &Mask, layers: &[usize]) -> Vec<(f64, usize, usize)> {
    let mut c: Vec<(f64, usize, usize)> = layers
        .iter()
        .flat_map(|&l| {
            let w = params.layers[l].weights.as_slice();
            let keep = mask.layer(l).bits();
            (0..w.len()).filter(move |&p| keep[p]).map(move |p| (w[p].abs(), l, p))
        })
        .collect();
    c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    c
}

fn drop_first(into: &mut [Vec<bool>], cands: &[(f64, usize, usize)], count: usize) {
    for &(_, l, p) in &cands[..count] {
        into[l][p] = false;
    }
}

pub fn prune_local(params: &ParamSet, mask: &Mask, ratio: f64, last_ratio: f64) -> Vec<Vec<bool>> {
    let n = mask.layers().len();
    let mut out = bits(mask);
    for l in 0..n {
        let cands = sorted_candidates(params, mask, &[l]);
        let r = if l == n - 1 { last_ratio } else { ratio };
        drop_first(&mut out, &cands, (r * cands.len() as f64).floor() as usize);
    }
    out
}

pub fn prune_global(params: &ParamSet, mask: &Mask, ratio: f64, protected: &[usize]) -> Vec<Vec<bool>> {
    let open: Vec<usize> = (0..mask.layers().len()).filter(|l| !protected.contains(l)).collect();
    let cands = sorted_candidates(params, mask, &open);
    let mut out = bits(mask);
    drop_first(&mut out, &cands, (ratio * cands.len() as f64).floor() as usize);
    out
}

pub fn is_subset(a: &Mask, b: &Mask) -> bool {
    a.layers()
        .iter()
        .zip(b.layers())
        .all(|(x, y)| x.bits().iter().zip(y.bits()).all(|(&p, &q)| !p || q))
}

/// A few Adam steps of plain CE on random batches.
pub fn train_a_bit(params: ParamSet, mask: &Mask, steps: usize, seed: u64) -> ParamSet {
    let opt = OptimizerConfig {
        lr: 1e-2,
        ..Default::default()
    };
    let mut t = Trainer::new(params, mask.clone(), &opt, StrategySpec::new(StrategyKind::None), seed).unwrap();
    let dims = t.params().spec().layer_dims.clone();
    for s in 0..steps {
        let b = random_batch(8, dims[0], *dims.last().unwrap(), seed * 31 + s as u64);
        t.step(&b).unwrap();
    }
    t.into_params()
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}
