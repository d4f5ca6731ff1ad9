//! Experiment configuration and the (fraction × seed × optimizer × lr) grid runner.

use std::borrow::Cow;
use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{build_baseline, BaselineConfig};
use crate::data::{self, batch_iterator, subsample, Dataset, SplitSpec};
use crate::diagnostics::{EpochAccumulator, RunRecord, RunStatus};
use crate::error::{Error, Result};
use crate::model::Mlp;
use crate::optimizer::{NeuroPlastic, Optimizer, OptimizerConfig};
use crate::rng::{derive_seed, streams};

/// Environment variable naming the root for relative dataset paths.
pub const DATA_DIR_ENV: &str = "BENCH_DATA_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Directory holding `train-*` and `t10k-*` IDX files, optionally gzipped.
    Idx { dir: PathBuf },
    Synthetic {
        classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_spread() -> f64 {
    0.5
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Hidden layer widths; input and output sizes come from the dataset.
    #[serde(default)]
    pub hidden: Vec<usize>,
}

/// A named optimizer. Exactly one of `neuroplastic` or `baseline` is set;
/// its `lr` is replaced by each value of the experiment's `lrs` grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub name: String,
    #[serde(default)]
    pub neuroplastic: Option<OptimizerConfig>,
    #[serde(default)]
    pub baseline: Option<BaselineConfig>,
}

impl OptimizerSpec {
    pub fn neuroplastic(name: impl Into<String>, cfg: OptimizerConfig) -> Self {
        Self {
            name: name.into(),
            neuroplastic: Some(cfg),
            baseline: None,
        }
    }

    pub fn baseline(name: impl Into<String>, cfg: BaselineConfig) -> Self {
        Self {
            name: name.into(),
            neuroplastic: None,
            baseline: Some(cfg),
        }
    }

    fn validate(&self) -> Result<()> {
        match (&self.neuroplastic, &self.baseline) {
            (Some(c), None) => c.validate(),
            (None, Some(c)) => c.validate(),
            _ => Err(Error::InvalidConfig(format!(
                "optimizer `{}` needs exactly one of `neuroplastic` or `baseline`",
                self.name
            ))),
        }
    }

    pub fn build(&self, lr: f64, shapes: &[Vec<usize>]) -> Result<Box<dyn Optimizer>> {
        match (&self.neuroplastic, &self.baseline) {
            (Some(c), None) => {
                let cfg = OptimizerConfig { lr, ..c.clone() };
                Ok(Box::new(NeuroPlastic::new(cfg, shapes)?))
            }
            (None, Some(c)) => build_baseline(&BaselineConfig { lr, ..c.clone() }, shapes),
            _ => Err(Error::InvalidConfig(format!(
                "optimizer `{}` needs exactly one of `neuroplastic` or `baseline`",
                self.name
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelSpec,
    pub optimizers: Vec<OptimizerSpec>,
    #[serde(default = "default_lrs")]
    pub lrs: Vec<f64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default)]
    pub stratified: bool,
    /// Optimizer the summary deltas are measured against.
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_lrs() -> Vec<f64> {
    vec![1e-3]
}
fn default_epochs() -> usize {
    10
}
fn default_batch_size() -> usize {
    128
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}
fn default_fractions() -> Vec<f64> {
    vec![1.0]
}
fn default_eval_batch() -> usize {
    2000
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

/// Command-line overrides; every `Some` replaces the file value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub lrs: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub fractions: Option<Vec<f64>>,
    /// Keep only the named optimizers, in this order.
    pub optimizers: Option<Vec<String>>,
    pub epochs: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(v) = &o.lrs {
            self.lrs = v.clone();
        }
        if let Some(v) = &o.seeds {
            self.seeds = v.clone();
        }
        if let Some(v) = &o.fractions {
            self.fractions = v.clone();
        }
        if let Some(names) = &o.optimizers {
            let mut kept = Vec::with_capacity(names.len());
            for name in names {
                let spec = self.optimizers.iter().find(|s| &s.name == name).ok_or_else(|| {
                    Error::InvalidConfig(format!("no optimizer named `{name}` in config"))
                })?;
                kept.push(spec.clone());
            }
            self.optimizers = kept;
        }
        if let Some(e) = o.epochs {
            self.epochs = e;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.optimizers.is_empty() || self.lrs.is_empty() || self.seeds.is_empty() {
            return bad("optimizers, lrs and seeds must be non-empty");
        }
        if self.fractions.is_empty() {
            return bad("fractions must be non-empty");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch == 0 {
            return bad("epochs, batch_size and eval_batch must be >= 1");
        }
        if self.model.hidden.contains(&0) {
            return bad("hidden layer widths must be >= 1");
        }
        let mut names = HashSet::new();
        for spec in &self.optimizers {
            if !names.insert(spec.name.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate optimizer name `{}`",
                    spec.name
                )));
            }
            spec.validate()?;
            for &lr in &self.lrs {
                spec.build(lr, &[vec![1]])?;
            }
        }
        for &f in &self.fractions {
            SplitSpec::new(f, 0).validate()?;
        }
        if let Some(r) = &self.reference {
            if !names.contains(r.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "reference `{r}` is not one of the optimizers"
                )));
            }
        }
        if let DatasetSpec::Synthetic {
            classes,
            dim,
            train_per_class,
            test_per_class,
            spread,
            ..
        } = &self.dataset
        {
            if *classes == 0 || *dim == 0 || *train_per_class == 0 || *test_per_class == 0 {
                return bad("synthetic dataset sizes must be >= 1");
            }
            if !(*spread >= 0.0 && spread.is_finite()) {
                return bad("synthetic spread must be finite and >= 0");
            }
        }
        Ok(())
    }

    pub fn run_count(&self) -> usize {
        self.fractions.len() * self.seeds.len() * self.optimizers.len() * self.lrs.len()
    }

    /// Resolve a relative dataset path against `BENCH_DATA_DIR` if set; otherwise
    /// against `config_dir` when that location exists, else `./data`.
    pub fn data_dir(&self, config_dir: Option<&Path>) -> Option<PathBuf> {
        let DatasetSpec::Idx { dir } = &self.dataset else {
            return None;
        };
        if dir.is_absolute() {
            return Some(dir.clone());
        }
        if let Some(root) = std::env::var_os(DATA_DIR_ENV) {
            return Some(PathBuf::from(root).join(dir));
        }
        match config_dir.map(|c| c.join(dir)) {
            Some(p) if p.exists() => Some(p),
            _ => Some(Path::new("data").join(dir)),
        }
    }

    /// Load `(train, test)`.
    pub fn load_data(&self, config_dir: Option<&Path>) -> Result<(Dataset, Dataset)> {
        match &self.dataset {
            DatasetSpec::Idx { .. } => {
                let dir = self.data_dir(config_dir).expect("idx dataset has a dir");
                data::load_idx_dir(dir)
            }
            DatasetSpec::Synthetic {
                classes,
                dim,
                train_per_class,
                test_per_class,
                spread,
                seed,
            } => Ok((
                data::synthetic_gaussian_blobs(*classes, *train_per_class, *dim, *spread, *seed)?,
                data::synthetic_gaussian_blobs(
                    *classes,
                    *test_per_class,
                    *dim,
                    *spread,
                    seed.wrapping_add(1),
                )?,
            )),
        }
    }
}

/// One grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub fraction: f64,
    pub seed: u64,
    pub optimizer: usize,
    pub lr: f64,
}

pub fn run_id(optimizer: &str, lr: f64, fraction: f64, seed: u64) -> String {
    format!("{optimizer}_lr{lr}_f{fraction}_s{seed}")
}

/// Cells in output order: fraction, then seed, then optimizer, then lr.
pub fn grid(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::with_capacity(cfg.run_count());
    for &fraction in &cfg.fractions {
        for &seed in &cfg.seeds {
            for optimizer in 0..cfg.optimizers.len() {
                for &lr in &cfg.lrs {
                    cells.push(Cell {
                        fraction,
                        seed,
                        optimizer,
                        lr,
                    });
                }
            }
        }
    }
    cells
}

/// Train one cell. Divergence ends the run early and is recorded, not returned.
pub fn train_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    train: &Dataset,
    test: &Dataset,
    init: &Mlp,
) -> Result<RunRecord> {
    let spec = &cfg.optimizers[cell.optimizer];
    let subset: Cow<Dataset> = if cell.fraction == 1.0 && !cfg.stratified {
        Cow::Borrowed(train)
    } else {
        let split = SplitSpec {
            fraction: cell.fraction,
            seed: cell.seed,
            stratified: cfg.stratified,
        };
        Cow::Owned(subsample(train, &split)?)
    };

    let mut model = init.clone();
    let mut opt = spec.build(cell.lr, &model.param_shapes())?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut status = RunStatus::Completed;

    'epochs: for epoch in 0..cfg.epochs {
        opt.set_epoch(epoch);
        let mut acc = EpochAccumulator::new();
        for batch in batch_iterator(&subset, cfg.batch_size, cell.seed, epoch)? {
            let lg = model.forward_backward(&batch.images, &batch.labels)?;
            acc.record_loss(lg.loss, batch.labels.len());
            let stepped = if lg.loss.is_finite() {
                opt.step(model.params_mut(), &lg.grads)
            } else {
                Err(Error::DivergedState { tensor: 0 })
            };
            match stepped {
                Ok(d) => acc.record_step(&d),
                Err(Error::DivergedState { .. } | Error::NonFiniteGradient { .. }) => {
                    status = RunStatus::Diverged;
                    epochs.push(acc.finish(epoch, f64::NAN, f64::NAN));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let ev = model.evaluate(test.images(), test.labels(), cfg.eval_batch)?;
        epochs.push(acc.finish(epoch, ev.loss, ev.accuracy));
    }

    Ok(RunRecord {
        run_id: run_id(&spec.name, cell.lr, cell.fraction, cell.seed),
        optimizer: spec.name.clone(),
        lr: cell.lr,
        seed: cell.seed,
        data_fraction: cell.fraction,
        status,
        epochs,
    })
}

/// Layer sizes of the model for a dataset: input, hidden widths, classes.
pub fn model_sizes(cfg: &ExperimentConfig, train: &Dataset) -> Vec<usize> {
    let mut sizes = vec![train.dim()];
    sizes.extend(&cfg.model.hidden);
    sizes.push(train.num_classes());
    sizes
}

/// Run every grid cell and return records in grid order.
///
/// The initial weights depend only on the seed, so all optimizers (and lrs and
/// fractions) sharing a seed start from identical parameters. Cells run in
/// parallel; each owns its random streams, so results do not depend on scheduling.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    progress: &(dyn Fn(&RunRecord) + Sync),
) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    if test.dim() != train.dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![test.len(), train.dim()],
            found: test.images().shape().to_vec(),
        });
    }
    let sizes = model_sizes(cfg, train);
    if let Some(&label) = test.labels().iter().find(|&&l| l >= train.num_classes()) {
        return Err(Error::InvalidLabel {
            label,
            num_classes: train.num_classes(),
        });
    }
    let inits: Vec<Mlp> = cfg
        .seeds
        .iter()
        .map(|&s| Mlp::new(&sizes, derive_seed(s, streams::INIT)))
        .collect::<Result<_>>()?;

    grid(cfg)
        .par_iter()
        .map(|cell| {
            let init = &inits[cfg.seeds.iter().position(|&s| s == cell.seed).unwrap()];
            let rec = train_cell(cfg, cell, train, test, init)?;
            progress(&rec);
            Ok(rec)
        })
        .collect()
}
