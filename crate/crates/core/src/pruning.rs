//! Magnitude pruning, rewinding and mask bookkeeping.
//!
//! Masks cover weights only; biases are never pruned and never counted.
//! Prune counts use `floor(ratio * surviving)`. Candidates are ordered by
//! `(|w|, layer, row-major position)` so equal magnitudes resolve the same
//! way on every platform.

use std::cmp::Ordering;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{init_network, Layer, Matrix, NetworkSpec, ParamSet};

/// Keep/drop flags shaped like one weight matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl LayerMask {
    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            keep: vec![true; rows * cols],
        }
    }

    pub fn from_bits(rows: usize, cols: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != rows * cols {
            return Err(Error::dim(format!(
                "{} mask entries for a {rows}x{cols} layer",
                keep.len()
            )));
        }
        Ok(Self { rows, cols, keep })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn bits(&self) -> &[bool] {
        &self.keep
    }

    pub fn surviving(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }
}

/// One binary tensor per weight layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    layers: Vec<LayerMask>,
}

impl Mask {
    pub fn new(layers: Vec<LayerMask>) -> Self {
        Self { layers }
    }

    pub fn ones_for(params: &ParamSet) -> Self {
        Self::new(
            params
                .layers
                .iter()
                .map(|l| LayerMask::ones(l.weights.rows(), l.weights.cols()))
                .collect(),
        )
    }

    pub fn ones_for_spec(spec: &NetworkSpec) -> Self {
        Self::new(
            spec.weight_shapes()
                .into_iter()
                .map(|(r, c)| LayerMask::ones(r, c))
                .collect(),
        )
    }

    pub fn layers(&self) -> &[LayerMask] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &LayerMask {
        &self.layers[i]
    }

    pub fn surviving(&self) -> usize {
        self.layers.iter().map(LayerMask::surviving).sum()
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(LayerMask::len).sum()
    }

    /// True when every kept entry of `self` is also kept in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.shape() == b.shape() && a.keep.iter().zip(&b.keep).all(|(&x, &y)| !x || y)
            })
    }

    pub fn check_matches(&self, params: &ParamSet) -> Result<()> {
        self.check_shapes(&params.spec().weight_shapes())
    }

    pub fn check_shapes(&self, shapes: &[(usize, usize)]) -> Result<()> {
        if self.layers.len() != shapes.len() {
            return Err(Error::dim(format!(
                "mask has {} layers, network has {}",
                self.layers.len(),
                shapes.len()
            )));
        }
        for (i, (m, &s)) in self.layers.iter().zip(shapes).enumerate() {
            if m.shape() != s {
                return Err(Error::dim(format!(
                    "layer {i}: mask is {:?}, weights are {s:?}",
                    m.shape()
                )));
            }
        }
        Ok(())
    }

    /// Zeroes the weights this mask drops.
    pub fn apply(&self, params: &mut ParamSet) -> Result<()> {
        self.check_matches(params)?;
        for (layer, m) in params.layers.iter_mut().zip(&self.layers) {
            zero_dropped(layer.weights.as_mut_slice(), &m.keep);
        }
        Ok(())
    }

    pub(crate) fn apply_unchecked(&self, layers: &mut [Layer]) {
        for (layer, m) in layers.iter_mut().zip(&self.layers) {
            zero_dropped(layer.weights.as_mut_slice(), &m.keep);
        }
    }
}

pub(crate) fn zero_dropped(values: &mut [f64], keep: &[bool]) {
    for (v, &k) in values.iter_mut().zip(keep) {
        if !k {
            *v = 0.0;
        }
    }
}

/// Fraction of weights still alive. Biases are not counted.
pub fn sparsity(mask: &Mask) -> f64 {
    let total = mask.total();
    if total == 0 {
        return 1.0;
    }
    mask.surviving() as f64 / total as f64
}

fn prune_count(ratio: f64, surviving: usize) -> usize {
    (ratio * surviving as f64).floor() as usize
}

fn check_ratio(name: &str, ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} {ratio} must lie in (0, 1)")))
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    magnitude: f64,
    layer: usize,
    pos: usize,
}

fn by_magnitude_then_position(a: &Candidate, b: &Candidate) -> Ordering {
    a.magnitude
        .total_cmp(&b.magnitude)
        .then(a.layer.cmp(&b.layer))
        .then(a.pos.cmp(&b.pos))
}

fn surviving_candidates(params: &ParamSet, mask: &Mask, layer: usize) -> Vec<Candidate> {
    let w = params.layers[layer].weights.as_slice();
    mask.layers[layer]
        .keep
        .iter()
        .enumerate()
        .filter(|(_, &k)| k)
        .map(|(pos, _)| Candidate {
            magnitude: w[pos].abs(),
            layer,
            pos,
        })
        .collect()
}

fn drop_smallest(mut pool: Vec<Candidate>, count: usize, out: &mut Mask) {
    if count == 0 {
        return;
    }
    pool.select_nth_unstable_by(count - 1, by_magnitude_then_position);
    for c in &pool[..count] {
        out.layers[c.layer].keep[c.pos] = false;
    }
}

/// Removes `ratio` of the surviving weights in every layer independently;
/// the final layer uses `last_layer_ratio`.
pub fn prune_local(params: &ParamSet, mask: &Mask, ratio: f64, last_layer_ratio: f64) -> Result<Mask> {
    check_ratio("pruning ratio", ratio)?;
    check_ratio("last layer ratio", last_layer_ratio)?;
    mask.check_matches(params)?;
    let last = mask.layers.len() - 1;
    let mut out = mask.clone();
    for layer in 0..mask.layers.len() {
        let pool = surviving_candidates(params, mask, layer);
        if pool.is_empty() {
            return Err(Error::Prune(format!("layer {layer} has no surviving weights")));
        }
        let r = if layer == last { last_layer_ratio } else { ratio };
        let count = prune_count(r, pool.len());
        drop_smallest(pool, count, &mut out);
    }
    Ok(out)
}

/// Removes `ratio` of the pooled surviving weights of all unprotected layers
/// using one magnitude threshold.
pub fn prune_global(params: &ParamSet, mask: &Mask, ratio: f64, protected: &[usize]) -> Result<Mask> {
    check_ratio("pruning ratio", ratio)?;
    mask.check_matches(params)?;
    let n = mask.layers.len();
    if let Some(&bad) = protected.iter().find(|&&l| l >= n) {
        return Err(Error::config(format!("protected layer {bad} out of range ({n} layers)")));
    }
    let open: Vec<usize> = (0..n).filter(|l| !protected.contains(l)).collect();
    if open.is_empty() {
        return Err(Error::config("global pruning with every layer protected"));
    }
    let pool: Vec<Candidate> = open
        .iter()
        .flat_map(|&l| surviving_candidates(params, mask, l))
        .collect();
    if pool.is_empty() {
        return Err(Error::Prune("no surviving weights in unprotected layers".into()));
    }
    let count = prune_count(ratio, pool.len());
    let mut out = mask.clone();
    drop_smallest(pool, count, &mut out);
    Ok(out)
}

/// Resets surviving weights to their initial values and zeroes the rest.
/// Biases return to their initial values. The snapshot is kept.
pub fn rewind(params: &ParamSet, mask: &Mask) -> Result<ParamSet> {
    mask.check_matches(params)?;
    let mut layers = params.init_snapshot().to_vec();
    mask.apply_unchecked(&mut layers);
    Ok(ParamSet::with_snapshot(
        params.spec().clone(),
        layers,
        params.snapshot_handle(),
    ))
}

/// Fresh initialisation from `seed` with `mask` applied. The masked draw
/// becomes the new snapshot.
pub fn random_reinit(spec: &NetworkSpec, mask: &Mask, seed: u64) -> Result<ParamSet> {
    mask.check_shapes(&spec.weight_shapes())?;
    let spec = NetworkSpec {
        seed,
        ..spec.clone()
    };
    let fresh = init_network(&spec)?;
    let mut layers = fresh.layers;
    mask.apply_unchecked(&mut layers);
    ParamSet::from_layers(spec, layers)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PruneMode {
    Local,
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReinitMode {
    Rewind,
    Random,
}

impl FromStr for PruneMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(Self::Local),
            "global" => Ok(Self::Global),
            _ => Err(Error::config(format!("unknown prune mode `{s}`"))),
        }
    }
}

impl fmt::Display for PruneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Local => "local",
            Self::Global => "global",
        })
    }
}

impl FromStr for ReinitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rewind" => Ok(Self::Rewind),
            "random" => Ok(Self::Random),
            _ => Err(Error::config(format!("unknown reinit mode `{s}`"))),
        }
    }
}

impl fmt::Display for ReinitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rewind => "rewind",
            Self::Random => "random",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneConfig {
    pub mode: PruneMode,
    pub per_iter_ratio: f64,
    /// Local mode only.
    pub last_layer_ratio: f64,
    /// Global mode only.
    pub protected_layers: Vec<usize>,
    pub iterations: usize,
    pub reinit: ReinitMode,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            mode: PruneMode::Local,
            per_iter_ratio: 0.2,
            last_layer_ratio: 0.1,
            protected_layers: Vec::new(),
            iterations: 1,
            reinit: ReinitMode::Rewind,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        check_ratio("prune.ratio", self.per_iter_ratio)?;
        if self.mode == PruneMode::Local {
            check_ratio("prune.last_layer_ratio", self.last_layer_ratio)?;
        }
        if self.iterations == 0 {
            return Err(Error::config("prune.iterations must be >= 1"));
        }
        Ok(())
    }

    pub fn prune(&self, params: &ParamSet, mask: &Mask) -> Result<Mask> {
        match self.mode {
            PruneMode::Local => prune_local(params, mask, self.per_iter_ratio, self.last_layer_ratio),
            PruneMode::Global => {
                prune_global(params, mask, self.per_iter_ratio, &self.protected_layers)
            }
        }
    }
}

/// A mask produced by one pruning iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct TicketRecord {
    pub iteration: usize,
    pub mask: Mask,
    pub remaining: f64,
    pub source_run: String,
}

const MASK_MAGIC: &[u8; 4] = b"LTHM";
const MASK_VERSION: u32 = 1;

/// Serialises a mask: `"LTHM"`, version, layer count, then `(rows, cols)`
/// per layer as little-endian `u32`, followed by each layer's bits packed
/// LSB-first into bytes. Every layer starts on a byte boundary.
pub fn write_mask<W: Write>(mask: &Mask, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 8 * mask.layers.len() + mask.total() / 8 + mask.layers.len());
    buf.extend_from_slice(MASK_MAGIC);
    buf.extend_from_slice(&MASK_VERSION.to_le_bytes());
    buf.extend_from_slice(&u32_of(mask.layers.len())?.to_le_bytes());
    for m in &mask.layers {
        buf.extend_from_slice(&u32_of(m.rows)?.to_le_bytes());
        buf.extend_from_slice(&u32_of(m.cols)?.to_le_bytes());
    }
    for m in &mask.layers {
        for chunk in m.keep.chunks(8) {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &k)| acc | ((k as u8) << i));
            buf.push(byte);
        }
    }
    w.write_all(&buf).map_err(|e| Error::io("writing mask", e))
}

fn u32_of(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::format(format!("{v} does not fit the mask header")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::io("reading mask header", e))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_mask<R: Read>(mut r: R) -> Result<Mask> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io("reading mask magic", e))?;
    if &magic != MASK_MAGIC {
        return Err(Error::format(format!("bad mask magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != MASK_VERSION {
        return Err(Error::format(format!("unsupported mask version {version}")));
    }
    let n = read_u32(&mut r)? as usize;
    let mut shapes = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        shapes.push((rows, cols));
    }
    let mut layers = Vec::with_capacity(n);
    for (rows, cols) in shapes {
        let len = rows * cols;
        let mut bytes = vec![0u8; len.div_ceil(8)];
        r.read_exact(&mut bytes).map_err(|e| Error::io("reading mask bits", e))?;
        let keep = (0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
        layers.push(LayerMask { rows, cols, keep });
    }
    let mut rest = [0u8; 1];
    match r.read(&mut rest) {
        Ok(0) => Ok(Mask::new(layers)),
        Ok(_) => Err(Error::format("trailing bytes after mask")),
        Err(e) => Err(Error::io("reading mask", e)),
    }
}

/// Multiplies weights elementwise by the mask into a fresh matrix.
pub(crate) fn masked_weights(weights: &Matrix, mask: &LayerMask) -> Matrix {
    let data = weights
        .as_slice()
        .iter()
        .zip(&mask.keep)
        .map(|(&w, &k)| if k { w } else { 0.0 })
        .collect();
    Matrix::from_vec_unchecked(weights.rows(), weights.cols(), data)
}
