//! Plasticity-modulated optimization with a small, reproducible benchmark harness.
//!
//! The optimizer scales each gradient element by a bounded coefficient built
//! from three normalized signals (instantaneous gradient, an activity trace,
//! and a moment ratio), then rescales the update toward a target RMS.
//!
//! ```
//! use neuroplastic::{NeuroPlastic, Optimizer, OptimizerConfig, Tensor};
//!
//! let mut params = vec![Tensor::from_vec(vec![1.0, -2.0])];
//! let grads = vec![Tensor::from_vec(vec![0.5, -0.1])];
//! let mut opt = NeuroPlastic::for_params(OptimizerConfig::default(), &params).unwrap();
//! let diag = opt.step(&mut params, &grads).unwrap();
//! assert!(diag.mean_alpha >= 0.2 && diag.mean_alpha <= 2.0);
//! ```

pub mod baselines;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod model;
pub mod optimizer;
pub mod output;
pub mod plasticity;
pub mod rng;
pub mod stabilizer;
pub mod tensor;

pub use baselines::{build_baseline, Baseline, BaselineConfig, BaselineKind};
pub use data::{load_idx, subsample, synthetic_gaussian_blobs, Dataset, SplitSpec};
pub use diagnostics::{summarize_seeds, EpochAccumulator, EpochRecord, RunRecord, RunStatus, SummaryTable};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, OptimizerSpec, Overrides};
pub use model::{grad_check, LossGrad, Mlp};
pub use optimizer::{NeuroPlastic, Optimizer, OptimizerConfig, StepDiagnostics};
pub use plasticity::{PlasticityConfig, PlasticityEngine, PlasticityMode};
pub use stabilizer::{LayerGroup, StabilizerConfig};
pub use tensor::Tensor;
