//! Flat `key = value` experiment configuration.
//!
//! Keys are dot-separated field paths (`optimizer.lr = 0.0001`). Blank lines
//! and lines starting with `#` are ignored. Unknown or repeated keys are
//! errors. Relative dataset paths resolve against the config file's
//! directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::calib::{StrategyKind, StrategySpec};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_ECE_BINS;
use crate::nn::{Milestone, NetworkSpec};
use crate::pruning::{PruneConfig, PruneMode, ReinitMode};
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Half {
    All,
    A,
    B,
}

impl FromStr for Half {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Half::All),
            "a" => Ok(Half::A),
            "b" => Ok(Half::B),
            _ => Err(Error::config(format!("dataset.half must be all, a or b, got `{s}`"))),
        }
    }
}

impl Half {
    fn as_str(self) -> &'static str {
        match self {
            Half::All => "all",
            Half::A => "a",
            Half::B => "b",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Blobs {
        classes: usize,
        per_class: usize,
        test_per_class: usize,
        dim: usize,
        separation: f64,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub source: DatasetSource,
    /// Keep only the first `n` training samples of each class (0 keeps all).
    pub train_per_class: usize,
    /// Which class-balanced half of the training data to train on.
    pub half: Half,
    pub split_seed: u64,
}

/// Training and evaluation data of one experiment.
#[derive(Clone, Debug)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
}

impl DatasetSpec {
    pub fn load(&self) -> Result<LoadedData> {
        let (train, test) = match &self.source {
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => (
                data::load_idx(train_images, train_labels)?,
                data::load_idx(test_images, test_labels)?,
            ),
            DatasetSource::Blobs {
                classes,
                per_class,
                test_per_class,
                dim,
                separation,
                seed,
            } => (
                data::synthetic_blobs(*classes, *per_class, *dim, *separation, *seed)?,
                data::synthetic_blobs(*classes, *test_per_class, *dim, *separation, derive_seed(*seed, 1))?,
            ),
        };
        if train.dim() != test.dim() {
            return Err(Error::data("train and test feature widths differ"));
        }
        let mut train = if self.train_per_class > 0 {
            train.take_per_class(self.train_per_class)
        } else {
            train
        };
        train = match self.half {
            Half::All => train,
            Half::A => data::split_half_by_class(&train, self.split_seed)?.part_a,
            Half::B => data::split_half_by_class(&train, self.split_seed)?.part_b,
        };
        let k = train.num_classes.max(test.num_classes);
        let train = Dataset { num_classes: k, ..train };
        let test = Dataset { num_classes: k, ..test };
        Ok(LoadedData { train, test })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub milestones: Vec<Milestone>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-4,
            momentum: 0.9,
            weight_decay: 0.0,
            milestones: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub layer_dims: Vec<usize>,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub strategy: StrategySpec,
    pub prune: PruneConfig,
    pub eval_bins: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Network for this run; dropout comes from the strategy.
    pub fn network_spec(&self) -> Result<NetworkSpec> {
        NetworkSpec::new(self.layer_dims.clone(), self.strategy.dropout_rate, self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.network_spec()?;
        self.strategy.validate()?;
        self.prune.validate()?;
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.eval_bins == 0 {
            return Err(Error::config("eval_bins must be >= 1"));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::config("optimizer.lr must be > 0"));
        }
        if self.optimizer.kind == OptimizerKind::Adam && !self.optimizer.milestones.is_empty() {
            return Err(Error::config("optimizer.milestones only apply to sgd"));
        }
        if self.strategy.kind == StrategyKind::Mixup && self.batch_size < 2 {
            return Err(Error::config("mixup needs batch_size >= 2"));
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let cfg = build(&mut kv, base_dir)?;
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("seed", self.seed.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("eval_bins", self.eval_bins.to_string());
        put("output_dir", self.output_dir.display().to_string());
        match &self.dataset.source {
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                put("dataset.kind", "idx".into());
                put("dataset.train_images", train_images.display().to_string());
                put("dataset.train_labels", train_labels.display().to_string());
                put("dataset.test_images", test_images.display().to_string());
                put("dataset.test_labels", test_labels.display().to_string());
            }
            DatasetSource::Blobs {
                classes,
                per_class,
                test_per_class,
                dim,
                separation,
                seed,
            } => {
                put("dataset.kind", "blobs".into());
                put("dataset.classes", classes.to_string());
                put("dataset.per_class", per_class.to_string());
                put("dataset.test_per_class", test_per_class.to_string());
                put("dataset.dim", dim.to_string());
                put("dataset.separation", separation.to_string());
                put("dataset.seed", seed.to_string());
            }
        }
        put("dataset.train_per_class", self.dataset.train_per_class.to_string());
        put("dataset.half", self.dataset.half.as_str().into());
        put("dataset.split_seed", self.dataset.split_seed.to_string());
        put("network.layer_dims", join(&self.layer_dims));
        let o = &self.optimizer;
        put(
            "optimizer.kind",
            match o.kind {
                OptimizerKind::Adam => "adam",
                OptimizerKind::Sgd => "sgd",
            }
            .into(),
        );
        put("optimizer.lr", o.lr.to_string());
        put("optimizer.momentum", o.momentum.to_string());
        put("optimizer.weight_decay", o.weight_decay.to_string());
        put(
            "optimizer.milestones",
            o.milestones
                .iter()
                .map(|m| format!("{}:{}", m.epoch, m.factor))
                .collect::<Vec<_>>()
                .join(","),
        );
        let st = &self.strategy;
        put("strategy.kind", st.kind.to_string());
        put("strategy.passes", st.passes.to_string());
        put("strategy.dropout_rate", st.dropout_rate.to_string());
        put("strategy.mixup_alpha", st.mixup_alpha.to_string());
        put("strategy.gamma_d", st.gamma_d.to_string());
        put("strategy.gamma_n", st.gamma_n.to_string());
        put("strategy.nba_bins", st.nba_bins.to_string());
        put("strategy.nba_bandwidth", st.nba_bandwidth.to_string());
        if let Some(w) = &st.nba_weights {
            put("strategy.nba_weights", join(w));
        }
        put("strategy.vwcc_alpha_complement", st.vwcc_alpha_complement.to_string());
        if let Some(p) = &st.prior {
            put("strategy.prior", join(p));
        }
        let p = &self.prune;
        put("prune.mode", p.mode.to_string());
        put("prune.ratio", p.per_iter_ratio.to_string());
        put("prune.last_layer_ratio", p.last_layer_ratio.to_string());
        put("prune.protected_layers", join(&p.protected_layers));
        put("prune.iterations", p.iterations.to_string());
        put("prune.reinit", p.reinit.to_string());
        s
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

struct KeyValues {
    map: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim().to_string();
            if k.is_empty() {
                return Err(Error::config(format!("line {}: empty key", n + 1)));
            }
            if map.insert(k.clone(), (n + 1, v.trim().to_string())).is_some() {
                return Err(Error::config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
        }
        Ok(Self { map })
    }

    fn take_str(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take_str(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::config(format!("line {line}: cannot parse `{key} = {v}`"))),
        }
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::config(format!("missing required key `{key}`")))
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.take_str(key) {
            None => Ok(None),
            Some((line, v)) => {
                let v = v.trim();
                if v.is_empty() || v == "none" {
                    return Ok(Some(Vec::new()));
                }
                v.split(',')
                    .map(|p| {
                        p.trim()
                            .parse()
                            .map_err(|_| Error::config(format!("line {line}: bad list item `{p}` in `{key}`")))
                    })
                    .collect::<Result<Vec<T>>>()
                    .map(Some)
            }
        }
    }

    fn finish(self) -> Result<()> {
        match self.map.into_iter().next() {
            None => Ok(()),
            Some((k, (line, _))) => Err(Error::config(format!("line {line}: unknown key `{k}`"))),
        }
    }
}

fn resolve(base: &Path, p: String) -> PathBuf {
    let p = PathBuf::from(p);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn parse_milestone(s: &str) -> Result<Milestone> {
    let (e, f) = s
        .split_once(':')
        .ok_or_else(|| Error::config(format!("milestone `{s}` must be epoch:factor")))?;
    Ok(Milestone {
        epoch: e.trim().parse().map_err(|_| Error::config(format!("bad milestone epoch `{e}`")))?,
        factor: f.trim().parse().map_err(|_| Error::config(format!("bad milestone factor `{f}`")))?,
    })
}

fn build(kv: &mut KeyValues, base: &Path) -> Result<ExperimentConfig> {
    let kind: String = kv.or("dataset.kind", "idx".to_string())?;
    let source = match kind.as_str() {
        "idx" => {
            let mut path = |k: &str| -> Result<PathBuf> { Ok(resolve(base, kv.require::<String>(k)?)) };
            DatasetSource::Idx {
                train_images: path("dataset.train_images")?,
                train_labels: path("dataset.train_labels")?,
                test_images: path("dataset.test_images")?,
                test_labels: path("dataset.test_labels")?,
            }
        }
        "blobs" => DatasetSource::Blobs {
            classes: kv.require("dataset.classes")?,
            per_class: kv.require("dataset.per_class")?,
            test_per_class: kv.or("dataset.test_per_class", 100)?,
            dim: kv.require("dataset.dim")?,
            separation: kv.or("dataset.separation", 4.0)?,
            seed: kv.or("dataset.seed", 0)?,
        },
        other => return Err(Error::config(format!("unknown dataset.kind `{other}`"))),
    };
    let dataset = DatasetSpec {
        source,
        train_per_class: kv.or("dataset.train_per_class", 0)?,
        half: kv.or("dataset.half", Half::All)?,
        split_seed: kv.or("dataset.split_seed", 0)?,
    };

    let layer_dims = kv
        .list("network.layer_dims")?
        .unwrap_or_else(|| vec![784, 300, 100, 10]);

    let optimizer = {
        let d = OptimizerConfig::default();
        let kind = match kv.or("optimizer.kind", "adam".to_string())?.as_str() {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            other => return Err(Error::config(format!("unknown optimizer.kind `{other}`"))),
        };
        let milestones = kv
            .list::<String>("optimizer.milestones")?
            .unwrap_or_default()
            .iter()
            .map(|s| parse_milestone(s))
            .collect::<Result<Vec<_>>>()?;
        OptimizerConfig {
            kind,
            lr: kv.or("optimizer.lr", d.lr)?,
            momentum: kv.or("optimizer.momentum", d.momentum)?,
            weight_decay: kv.or("optimizer.weight_decay", d.weight_decay)?,
            milestones,
        }
    };

    let strategy = {
        let d = StrategySpec::default();
        StrategySpec {
            kind: kv.or("strategy.kind", StrategyKind::None)?,
            passes: kv.or("strategy.passes", d.passes)?,
            dropout_rate: kv.or("strategy.dropout_rate", d.dropout_rate)?,
            mixup_alpha: kv.or("strategy.mixup_alpha", d.mixup_alpha)?,
            gamma_d: kv.or("strategy.gamma_d", d.gamma_d)?,
            gamma_n: kv.or("strategy.gamma_n", d.gamma_n)?,
            nba_bins: kv.or("strategy.nba_bins", d.nba_bins)?,
            nba_bandwidth: kv.or("strategy.nba_bandwidth", d.nba_bandwidth)?,
            nba_weights: kv.list("strategy.nba_weights")?,
            prior: kv.list("strategy.prior")?,
            vwcc_alpha_complement: kv.or("strategy.vwcc_alpha_complement", d.vwcc_alpha_complement)?,
            ..d
        }
    };

    let prune = {
        let d = PruneConfig::default();
        let mode: PruneMode = kv.or("prune.mode", d.mode)?;
        let protected = kv.list("prune.protected_layers")?;
        let protected_layers = match (mode, protected) {
            (_, Some(p)) => p,
            (PruneMode::Global, None) => vec![layer_dims.len().saturating_sub(2)],
            (PruneMode::Local, None) => Vec::new(),
        };
        PruneConfig {
            mode,
            per_iter_ratio: kv.or("prune.ratio", d.per_iter_ratio)?,
            last_layer_ratio: kv.or("prune.last_layer_ratio", d.last_layer_ratio)?,
            protected_layers,
            iterations: kv.or("prune.iterations", d.iterations)?,
            reinit: kv.or::<ReinitMode>("prune.reinit", d.reinit)?,
        }
    };

    Ok(ExperimentConfig {
        dataset,
        layer_dims,
        optimizer,
        epochs: kv.or("epochs", 60)?,
        batch_size: kv.or("batch_size", 60)?,
        strategy,
        prune,
        eval_bins: kv.or("eval_bins", DEFAULT_ECE_BINS)?,
        seed: kv.or("seed", 0)?,
        output_dir: resolve(base, kv.or("output_dir", "runs/lth".to_string())?),
    })
}
