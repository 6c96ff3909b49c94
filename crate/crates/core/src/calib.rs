//! Calibration-aware training objectives.
//!
//! Every strategy is cross-entropy plus (optionally) a calibration term,
//! averaged over the mini-batch:
//!
//! | kind      | per-batch objective                                               |
//! |-----------|-------------------------------------------------------------------|
//! | `none`    | `mean CE(p, y)`                                                   |
//! | `vwcc`    | `mean (1-α_i) CE(p̄_i, y_i) + α_i KL(U‖p̄_i)` over `T` dropout passes |
//! | `mixup`   | `mean CE(p(x̃), ỹ)` on convex combinations of sample pairs          |
//! | `mda`     | `mean CE + γ_d Σ_k π_k log(π_k / h̄_k)`, `h̄` the batch-mean softmax |
//! | `lwcc`    | `mean CE + β_i KL(U‖p_i)`, `β_i = (1 - max p_i)^[correct]`         |
//! | `lwcc_si` | `lwcc` evaluated on the mean of `T` dropout passes                 |
//! | `nba`     | `mean CE + γ_n Σ_b w_b |Ñ_b/N - 1/B|` with a soft histogram         |
//!
//! `α_i` and `β_i` are confidence weights and carry no gradient. Every log is
//! floored at [`EPS_LOG`].

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Floor applied inside every logarithm.
pub const EPS_LOG: f64 = 1e-12;

/// Smoothing constant for `|x| ≈ sqrt(x² + δ)` in the bin-assignment penalty.
pub const ABS_SMOOTHING: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    None,
    Vwcc,
    Mixup,
    Mda,
    Lwcc,
    LwccSi,
    Nba,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::None,
        StrategyKind::Vwcc,
        StrategyKind::Mixup,
        StrategyKind::Mda,
        StrategyKind::Lwcc,
        StrategyKind::LwccSi,
        StrategyKind::Nba,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::None => "none",
            StrategyKind::Vwcc => "vwcc",
            StrategyKind::Mixup => "mixup",
            StrategyKind::Mda => "mda",
            StrategyKind::Lwcc => "lwcc",
            StrategyKind::LwccSi => "lwcc_si",
            StrategyKind::Nba => "nba",
        }
    }

    /// Whether the objective is computed from several dropout passes.
    pub fn is_stochastic(self) -> bool {
        matches!(self, StrategyKind::Vwcc | StrategyKind::LwccSi)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown strategy `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    /// Stochastic passes `T` for `vwcc` and `lwcc_si`.
    pub passes: usize,
    pub dropout_rate: f64,
    pub mixup_alpha: f64,
    pub gamma_d: f64,
    pub gamma_n: f64,
    pub nba_bins: usize,
    pub nba_bandwidth: f64,
    /// Per-bin weights; `None` selects [`nba_default_weights`].
    pub nba_weights: Option<Vec<f64>>,
    /// Class prior for `mda`; `None` is uniform.
    pub prior: Option<Vec<f64>>,
    /// `α = 1 - mean BC` when set, `α = mean BC` otherwise.
    pub vwcc_alpha_complement: bool,
    /// Overrides every `α_i` (ablations and reduction checks).
    pub force_alpha: Option<f64>,
    /// Overrides every `β_i`.
    pub force_beta: Option<f64>,
    /// Overrides every mixup `λ`.
    pub force_lambda: Option<f64>,
}

impl Default for StrategySpec {
    fn default() -> Self {
        Self {
            kind: StrategyKind::None,
            passes: 5,
            dropout_rate: 0.2,
            mixup_alpha: 0.2,
            gamma_d: 0.05,
            gamma_n: 0.1,
            nba_bins: 10,
            nba_bandwidth: 0.05,
            nba_weights: None,
            prior: None,
            vwcc_alpha_complement: true,
            force_alpha: None,
            force_beta: None,
            force_lambda: None,
        }
    }
}

impl StrategySpec {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: Option<f64>| match v {
            Some(x) if !(0.0..=1.0).contains(&x) => {
                Err(Error::config(format!("{name} {x} outside [0, 1]")))
            }
            _ => Ok(()),
        };
        if self.passes == 0 {
            return Err(Error::config("strategy.passes must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if !(self.mixup_alpha > 0.0) {
            return Err(Error::config("mixup alpha must be > 0"));
        }
        if !(self.gamma_d >= 0.0) || !(self.gamma_n >= 0.0) {
            return Err(Error::config("gamma_d and gamma_n must be >= 0"));
        }
        if self.nba_bins < 2 {
            return Err(Error::config("nba needs at least 2 bins"));
        }
        if !(self.nba_bandwidth > 0.0) {
            return Err(Error::config("nba bandwidth must be > 0"));
        }
        if let Some(w) = &self.nba_weights {
            if w.len() != self.nba_bins || w.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::config("nba weights need one positive entry per bin"));
            }
        }
        if let Some(p) = &self.prior {
            let sum: f64 = p.iter().sum();
            if p.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::config("mda prior must be a probability vector"));
            }
        }
        unit("force_alpha", self.force_alpha)?;
        unit("force_beta", self.force_beta)?;
        unit("force_lambda", self.force_lambda)?;
        Ok(())
    }

    /// Number of forward passes per training step.
    pub fn forward_passes(&self) -> usize {
        if self.kind.is_stochastic() {
            self.passes
        } else {
            1
        }
    }

    pub fn bin_weights(&self) -> Vec<f64> {
        self.nba_weights
            .clone()
            .unwrap_or_else(|| nba_default_weights(self.nba_bins))
    }
}

/// A training mini-batch. Soft labels are present after mixup.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub soft_labels: Option<Matrix>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::dim(format!(
                "{} inputs but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(Self {
            inputs,
            labels,
            soft_labels: None,
        })
    }

    pub fn with_soft_labels(inputs: Matrix, labels: Vec<usize>, soft: Matrix) -> Result<Self> {
        let mut b = Self::new(inputs, labels)?;
        if soft.rows() != b.labels.len() {
            return Err(Error::dim("soft labels do not match batch size"));
        }
        for (i, row) in soft.iter_rows().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 || row.iter().any(|&v| v < 0.0) {
                return Err(Error::data(format!("soft label row {i} is not a distribution")));
            }
        }
        b.soft_labels = Some(soft);
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn targets(&self) -> Targets<'_> {
        match &self.soft_labels {
            Some(s) => Targets::Soft(s),
            None => Targets::Hard(&self.labels),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Targets<'a> {
    Hard(&'a [usize]),
    Soft(&'a Matrix),
}

impl Targets<'_> {
    fn check(&self, probs: &Matrix) -> Result<()> {
        match self {
            Targets::Hard(labels) => {
                if labels.len() != probs.rows() {
                    return Err(Error::dim("label count does not match predictions"));
                }
                if let Some(&bad) = labels.iter().find(|&&y| y >= probs.cols()) {
                    return Err(Error::data(format!(
                        "label {bad} out of range for {} classes",
                        probs.cols()
                    )));
                }
            }
            Targets::Soft(t) => {
                if t.shape() != probs.shape() {
                    return Err(Error::dim("soft targets do not match predictions"));
                }
            }
        }
        Ok(())
    }

    /// `(class, weight)` pairs with non-zero weight for sample `i`.
    fn row(&self, i: usize) -> TargetRow<'_> {
        match self {
            Targets::Hard(labels) => TargetRow::Hard(Some(labels[i])),
            Targets::Soft(t) => TargetRow::Soft(t.row(i).iter().enumerate()),
        }
    }
}

enum TargetRow<'a> {
    Hard(Option<usize>),
    Soft(std::iter::Enumerate<std::slice::Iter<'a, f64>>),
}

impl Iterator for TargetRow<'_> {
    type Item = (usize, f64);
    fn next(&mut self) -> Option<(usize, f64)> {
        match self {
            TargetRow::Hard(y) => y.take().map(|y| (y, 1.0)),
            TargetRow::Soft(it) => it.find(|(_, &t)| t != 0.0).map(|(k, &t)| (k, t)),
        }
    }
}

#[inline]
fn floored_ln(p: f64) -> f64 {
    p.max(EPS_LOG).ln()
}

/// `d/dp log(max(p, ε))`.
#[inline]
fn floored_ln_grad(p: f64) -> f64 {
    if p > EPS_LOG {
        1.0 / p
    } else {
        0.0
    }
}

/// Index of the largest entry; ties go to the smaller index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn ce_row(p: &[f64], t: TargetRow<'_>) -> f64 {
    let mut acc = 0.0;
    for (k, w) in t {
        acc -= w * floored_ln(p[k]);
    }
    acc
}

fn per_sample_ce(probs: &Matrix, targets: Targets<'_>) -> Result<Vec<f64>> {
    targets.check(probs)?;
    Ok((0..probs.rows()).map(|i| ce_row(probs.row(i), targets.row(i))).collect())
}

/// Mean over samples of `-Σ_k t_k log(max(p_k, ε))`.
pub fn cross_entropy(probs: &Matrix, targets: Targets<'_>) -> Result<f64> {
    let ce = per_sample_ce(probs, targets)?;
    Ok(ce.iter().sum::<f64>() / probs.rows() as f64)
}

/// `KL(U ‖ p) = Σ_k (1/K) log((1/K) / max(p_k, ε))`.
pub fn kl_uniform(p: &[f64]) -> f64 {
    let u = 1.0 / p.len() as f64;
    p.iter().map(|&pk| u * (u / pk.max(EPS_LOG)).ln()).sum()
}

/// `Σ_k sqrt(p_k q_k)`, clamped to `[0, 1]`.
pub fn bhattacharyya(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| (a * b).sqrt())
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Mean of several probability rows.
pub fn mean_row(rows: &[&[f64]]) -> Vec<f64> {
    let k = rows.first().map_or(0, |r| r.len());
    let mut mean = vec![0.0; k];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(*r) {
            *m += v;
        }
    }
    let t = rows.len() as f64;
    for m in &mut mean {
        *m /= t;
    }
    mean
}

/// Variance weight of one sample from its `T` stochastic predictions:
/// `1 - mean_t BC(p_t, p̄)` (or the mean BC itself when `complement` is off),
/// clamped to `[0, 1]`.
pub fn vwcc_alpha(rows: &[&[f64]], complement: bool) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let mean = mean_row(rows);
    let bc = rows.iter().map(|r| bhattacharyya(r, &mean)).sum::<f64>() / rows.len() as f64;
    let a = if complement { 1.0 - bc } else { bc };
    a.clamp(0.0, 1.0)
}

/// Elementwise mean of `T` prediction matrices.
pub fn mean_prediction(passes: &[Matrix]) -> Result<Matrix> {
    let first = passes
        .first()
        .ok_or_else(|| Error::config("need at least one stochastic pass"))?;
    let mut mean = Matrix::zeros(first.rows(), first.cols());
    for p in passes {
        if p.shape() != first.shape() {
            return Err(Error::dim("stochastic passes differ in shape"));
        }
        for (m, v) in mean.as_mut_slice().iter_mut().zip(p.as_slice()) {
            *m += v;
        }
    }
    let t = passes.len() as f64;
    for m in mean.as_mut_slice() {
        *m /= t;
    }
    Ok(mean)
}

/// `α_i` for every sample of a set of stochastic passes.
pub fn vwcc_alphas(passes: &[Matrix], complement: bool) -> Result<Vec<f64>> {
    mean_prediction(passes)?;
    let n = passes[0].rows();
    Ok((0..n)
        .map(|i| {
            let rows: Vec<&[f64]> = passes.iter().map(|p| p.row(i)).collect();
            vwcc_alpha(&rows, complement)
        })
        .collect())
}

/// VWCC objective with explicit weights, on the already-averaged prediction.
pub fn vwcc_loss_with_alpha(mean: &Matrix, labels: &[usize], alphas: &[f64]) -> Result<f64> {
    let ce = per_sample_ce(mean, Targets::Hard(labels))?;
    if alphas.len() != ce.len() {
        return Err(Error::dim("one alpha per sample required"));
    }
    let total: f64 = ce
        .iter()
        .zip(alphas)
        .enumerate()
        .map(|(i, (c, a))| (1.0 - a) * c + a * kl_uniform(mean.row(i)))
        .sum();
    Ok(total / ce.len() as f64)
}

/// VWCC objective from `T` stochastic passes (complemented α).
pub fn vwcc_loss(passes: &[Matrix], labels: &[usize]) -> Result<f64> {
    let alphas = vwcc_alphas(passes, true)?;
    vwcc_loss_with_alpha(&mean_prediction(passes)?, labels, &alphas)
}

/// Mixes each sample with `partner[i]` using weight `lambdas[i]`.
pub fn mixup_with(batch: &Batch, num_classes: usize, partner: &[usize], lambdas: &[f64]) -> Result<Batch> {
    let n = batch.len();
    if partner.len() != n || lambdas.len() != n {
        return Err(Error::dim("one partner and one lambda per sample required"));
    }
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::data(format!("label {bad} out of range for {num_classes} classes")));
    }
    let d = batch.inputs.cols();
    let mut x = Matrix::zeros(n, d);
    let mut soft = Matrix::zeros(n, num_classes);
    for i in 0..n {
        let j = partner[i];
        let lam = lambdas[i];
        let (xi, xj) = (batch.inputs.row(i), batch.inputs.row(j));
        for ((o, a), b) in x.row_mut(i).iter_mut().zip(xi).zip(xj) {
            *o = lam * a + (1.0 - lam) * b;
        }
        let row = soft.row_mut(i);
        row[batch.labels[i]] += lam;
        row[batch.labels[j]] += 1.0 - lam;
    }
    Ok(Batch {
        inputs: x,
        labels: batch.labels.clone(),
        soft_labels: Some(soft),
    })
}

/// Vicinal batch: partners are one seeded permutation of the batch, and each
/// pair gets its own `λ ~ Beta(α, α)` (or `force_lambda`). Consumes the
/// permutation first, then the `λ` draws.
pub fn mixup_batch<R: Rng + ?Sized>(
    batch: &Batch,
    num_classes: usize,
    alpha: f64,
    force_lambda: Option<f64>,
    rng: &mut R,
) -> Result<Batch> {
    if batch.len() < 2 {
        return Err(Error::data("mixup needs a batch of at least 2 samples"));
    }
    let mut partner: Vec<usize> = (0..batch.len()).collect();
    partner.shuffle(rng);
    let lambdas = match force_lambda {
        Some(l) => vec![l; batch.len()],
        None => {
            let beta = Beta::new(alpha, alpha)
                .map_err(|e| Error::config(format!("mixup alpha {alpha}: {e}")))?;
            (0..batch.len()).map(|_| beta.sample(rng)).collect()
        }
    };
    mixup_with(batch, num_classes, &partner, &lambdas)
}

fn uniform_prior(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

/// Column means of a batch of predictions.
pub fn batch_marginal(probs: &Matrix) -> Vec<f64> {
    let mut h = vec![0.0; probs.cols()];
    for row in probs.iter_rows() {
        for (a, v) in h.iter_mut().zip(row) {
            *a += v;
        }
    }
    let n = probs.rows() as f64;
    for a in &mut h {
        *a /= n;
    }
    h
}

/// `γ_d Σ_k π_k log(π_k / max(h̄_k, ε))` with `h̄` the batch-mean softmax.
/// Classes with zero prior contribute nothing.
pub fn mda_penalty(probs: &Matrix, prior: Option<&[f64]>, gamma_d: f64) -> f64 {
    let owned;
    let prior = match prior {
        Some(p) => p,
        None => {
            owned = uniform_prior(probs.cols());
            &owned
        }
    };
    let h = batch_marginal(probs);
    let kl: f64 = prior
        .iter()
        .zip(&h)
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(&pk, &hk)| pk * (pk / hk.max(EPS_LOG)).ln())
        .sum();
    gamma_d * kl
}

/// `(1 - max p)` for a correct prediction, `1` otherwise.
pub fn lwcc_beta(row: &[f64], label: usize) -> f64 {
    let top = argmax(row);
    if top == label {
        (1.0 - row[top]).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

pub fn lwcc_betas(probs: &Matrix, labels: &[usize]) -> Vec<f64> {
    probs
        .iter_rows()
        .zip(labels)
        .map(|(r, &y)| lwcc_beta(r, y))
        .collect()
}

pub fn lwcc_loss_with_beta(probs: &Matrix, labels: &[usize], betas: &[f64]) -> Result<f64> {
    let ce = per_sample_ce(probs, Targets::Hard(labels))?;
    if betas.len() != ce.len() {
        return Err(Error::dim("one beta per sample required"));
    }
    let total: f64 = ce
        .iter()
        .zip(betas)
        .enumerate()
        .map(|(i, (c, b))| c + b * kl_uniform(probs.row(i)))
        .sum();
    Ok(total / ce.len() as f64)
}

/// `mean_i CE_i + β_i KL(U ‖ p_i)`.
pub fn lwcc_loss(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    Targets::Hard(labels).check(probs)?;
    lwcc_loss_with_beta(probs, labels, &lwcc_betas(probs, labels))
}

/// LWCC on the mean of `T` stochastic passes.
pub fn lwcc_si_loss(passes: &[Matrix], labels: &[usize]) -> Result<f64> {
    lwcc_loss(&mean_prediction(passes)?, labels)
}

#[inline]
fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn sigmoid_slope(u: f64) -> f64 {
    let s = sigmoid(u);
    s * (1.0 - s)
}

fn bin_edge(b: usize, bins: usize) -> f64 {
    b as f64 / bins as f64
}

/// Differentiable bin counts over `[0, 1]`:
/// `Ñ_b = Σ_i σ((c_i - e_{b-1})/h) - σ((c_i - e_b)/h)` on equal-width edges.
pub fn soft_histogram(confidences: &[f64], bins: usize, bandwidth: f64) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    for &c in confidences {
        for (b, n) in counts.iter_mut().enumerate() {
            let lo = bin_edge(b, bins);
            let hi = bin_edge(b + 1, bins);
            *n += sigmoid((c - lo) / bandwidth) - sigmoid((c - hi) / bandwidth);
        }
    }
    counts
}

/// V-shaped bin weights `1 + |2b - B - 1| / (B - 1)` for `b = 1..=B`: 2 at the
/// extreme bins, near 1 in the middle.
pub fn nba_default_weights(bins: usize) -> Vec<f64> {
    let denom = (bins - 1) as f64;
    (1..=bins)
        .map(|b| 1.0 + (2.0 * b as f64 - bins as f64 - 1.0).abs() / denom)
        .collect()
}

#[inline]
fn smooth_abs(x: f64) -> f64 {
    (x * x + ABS_SMOOTHING).sqrt()
}

/// `γ_n Σ_b w_b |Ñ_b / N - 1/B|` for given counts.
pub fn nba_penalty_from_counts(counts: &[f64], n: usize, weights: &[f64], gamma_n: f64) -> f64 {
    let bins = counts.len() as f64;
    let sum: f64 = counts
        .iter()
        .zip(weights)
        .map(|(&c, &w)| w * smooth_abs(c / n as f64 - 1.0 / bins))
        .sum();
    gamma_n * sum
}

/// Bin-assignment penalty on the confidences (max probability) of a batch.
pub fn nba_penalty(probs: &Matrix, spec: &StrategySpec) -> f64 {
    let conf: Vec<f64> = probs.iter_rows().map(|r| r[argmax(r)]).collect();
    let counts = soft_histogram(&conf, spec.nba_bins, spec.nba_bandwidth);
    nba_penalty_from_counts(&counts, probs.rows(), &spec.bin_weights(), spec.gamma_n)
}

/// Loss and `dL/dp` for every forward pass of one batch.
pub(crate) struct ObjectiveGrad {
    pub loss: f64,
    pub dprobs: Vec<Matrix>,
    /// `α_i` or `β_i` as used, when the strategy has per-sample weights.
    pub sample_weights: Option<Vec<f64>>,
}

/// Accumulates `Σ_i c_i CE_i / N` and its gradient.
fn add_weighted_ce(
    p: &Matrix,
    targets: Targets<'_>,
    coef: Option<&[f64]>,
    grad: &mut Matrix,
) -> f64 {
    let n = p.rows() as f64;
    let mut total = 0.0;
    for i in 0..p.rows() {
        let c = coef.map_or(1.0, |c| c[i]);
        let row = p.row(i);
        total += c * ce_row(row, targets.row(i));
        for (k, t) in targets.row(i) {
            let g = -c * t * floored_ln_grad(row[k]) / n;
            grad.set(i, k, grad.get(i, k) + g);
        }
    }
    total / n
}

/// Accumulates `Σ_i w_i KL(U ‖ p_i) / N` and its gradient.
fn add_weighted_kl_uniform(p: &Matrix, weights: &[f64], grad: &mut Matrix) -> f64 {
    let n = p.rows() as f64;
    let u = 1.0 / p.cols() as f64;
    let mut total = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        let row = p.row(i);
        total += w * kl_uniform(row);
        for (g, &pk) in grad.row_mut(i).iter_mut().zip(row) {
            *g += -w * u * floored_ln_grad(pk) / n;
        }
    }
    total / n
}

fn add_mda(p: &Matrix, prior: Option<&[f64]>, gamma: f64, grad: &mut Matrix) -> f64 {
    let k = p.cols();
    let owned;
    let prior = match prior {
        Some(v) => v,
        None => {
            owned = uniform_prior(k);
            &owned
        }
    };
    let h = batch_marginal(p);
    let n = p.rows() as f64;
    let dh: Vec<f64> = prior
        .iter()
        .zip(&h)
        .map(|(&pk, &hk)| {
            if pk > 0.0 && hk > EPS_LOG {
                -gamma * pk / hk / n
            } else {
                0.0
            }
        })
        .collect();
    for i in 0..p.rows() {
        for (g, d) in grad.row_mut(i).iter_mut().zip(&dh) {
            *g += d;
        }
    }
    mda_penalty(p, Some(prior), gamma)
}

fn add_nba(p: &Matrix, spec: &StrategySpec, grad: &mut Matrix) -> f64 {
    let bins = spec.nba_bins;
    let h = spec.nba_bandwidth;
    let weights = spec.bin_weights();
    let n = p.rows();
    let top: Vec<usize> = p.iter_rows().map(argmax).collect();
    let conf: Vec<f64> = top.iter().enumerate().map(|(i, &k)| p.get(i, k)).collect();
    let counts = soft_histogram(&conf, bins, h);
    let dcount: Vec<f64> = counts
        .iter()
        .zip(&weights)
        .map(|(&c, &w)| {
            let d = c / n as f64 - 1.0 / bins as f64;
            spec.gamma_n * w * d / smooth_abs(d) / n as f64
        })
        .collect();
    for (i, (&c, &k)) in conf.iter().zip(&top).enumerate() {
        let mut dc = 0.0;
        for (b, &dn) in dcount.iter().enumerate() {
            let lo = (c - bin_edge(b, bins)) / h;
            let hi = (c - bin_edge(b + 1, bins)) / h;
            dc += dn * (sigmoid_slope(lo) - sigmoid_slope(hi)) / h;
        }
        grad.set(i, k, grad.get(i, k) + dc);
    }
    nba_penalty_from_counts(&counts, n, &weights, spec.gamma_n)
}

/// Evaluates the strategy on already-computed forward passes.
pub(crate) fn objective(spec: &StrategySpec, passes: &[Matrix], targets: Targets<'_>) -> Result<ObjectiveGrad> {
    let first = passes
        .first()
        .ok_or_else(|| Error::config("objective needs at least one forward pass"))?;
    targets.check(first)?;
    let (rows, cols) = first.shape();
    let hard = match targets {
        Targets::Hard(l) => Some(l),
        Targets::Soft(_) => None,
    };
    let need_hard = || hard.ok_or_else(|| Error::data("strategy requires hard labels"));

    match spec.kind {
        StrategyKind::Vwcc | StrategyKind::LwccSi => {
            let labels = need_hard()?;
            let mean = mean_prediction(passes)?;
            let mut g = Matrix::zeros(rows, cols);
            let (loss, weights) = if spec.kind == StrategyKind::Vwcc {
                let alphas = match spec.force_alpha {
                    Some(a) => vec![a; rows],
                    None => vwcc_alphas(passes, spec.vwcc_alpha_complement)?,
                };
                let keep: Vec<f64> = alphas.iter().map(|a| 1.0 - a).collect();
                let ce = add_weighted_ce(&mean, Targets::Hard(labels), Some(&keep), &mut g);
                let kl = add_weighted_kl_uniform(&mean, &alphas, &mut g);
                (ce + kl, alphas)
            } else {
                let betas = match spec.force_beta {
                    Some(b) => vec![b; rows],
                    None => lwcc_betas(&mean, labels),
                };
                let ce = add_weighted_ce(&mean, Targets::Hard(labels), None, &mut g);
                let kl = add_weighted_kl_uniform(&mean, &betas, &mut g);
                (ce + kl, betas)
            };
            let t = passes.len() as f64;
            for v in g.as_mut_slice() {
                *v /= t;
            }
            Ok(ObjectiveGrad {
                loss,
                dprobs: vec![g; passes.len()],
                sample_weights: Some(weights),
            })
        }
        kind => {
            if passes.len() != 1 {
                return Err(Error::config(format!("strategy {kind} takes a single forward pass")));
            }
            let p = first;
            let mut g = Matrix::zeros(rows, cols);
            let ce = add_weighted_ce(p, targets, None, &mut g);
            let (loss, weights) = match kind {
                StrategyKind::None | StrategyKind::Mixup => (ce, None),
                StrategyKind::Mda => (ce + add_mda(p, spec.prior.as_deref(), spec.gamma_d, &mut g), None),
                StrategyKind::Nba => (ce + add_nba(p, spec, &mut g), None),
                StrategyKind::Lwcc => {
                    let labels = need_hard()?;
                    let betas = match spec.force_beta {
                        Some(b) => vec![b; rows],
                        None => lwcc_betas(p, labels),
                    };
                    let kl = add_weighted_kl_uniform(p, &betas, &mut g);
                    (ce + kl, Some(betas))
                }
                StrategyKind::Vwcc | StrategyKind::LwccSi => unreachable!(),
            };
            Ok(ObjectiveGrad {
                loss,
                dprobs: vec![g],
                sample_weights: weights,
            })
        }
    }
}
