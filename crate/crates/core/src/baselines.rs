//! Reference optimizers sharing the [`Optimizer`] interface: SGD, SGD with
//! momentum, Adam, AdamW, and the gradient-only ablation.
//!
//! Adam and AdamW use the usual bias-corrected moments. AdamW applies
//! `theta <- theta * (1 - lr * wd)` before the Adam update; plain Adam and
//! SGD fold weight decay into the gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{
    check_step_inputs, global_norm, NeuroPlastic, Optimizer, OptimizerConfig, StepDiagnostics,
};
use crate::plasticity::{PlasticityConfig, PlasticityMode};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Sgd,
    SgdMomentum,
    Adam,
    AdamW,
    GradientOnlyAblation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            kind: BaselineKind::Adam,
            lr: 1e-3,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr = {} must be > 0", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum = {} not in [0, 1)", self.momentum));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas ({}, {}) not in [0, 1)", self.beta1, self.beta2));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps = {} must be > 0", self.eps));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay = {} must be >= 0", self.weight_decay));
        }
        Ok(())
    }
}

/// Per-tensor moment buffers. SGD with momentum only uses `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentState {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

#[derive(Clone, Debug)]
pub struct Baseline {
    cfg: BaselineConfig,
    states: Vec<MomentState>,
}

impl Baseline {
    pub fn new(cfg: BaselineConfig, shapes: &[Vec<usize>]) -> Result<Self> {
        cfg.validate()?;
        if cfg.kind == BaselineKind::GradientOnlyAblation {
            return Err(Error::InvalidConfig(
                "the gradient-only ablation is built with `build_baseline`".into(),
            ));
        }
        let states = shapes
            .iter()
            .map(|s| MomentState {
                m: Tensor::zeros(s),
                v: Tensor::zeros(s),
                step: 0,
            })
            .collect();
        Ok(Self { cfg, states })
    }

    pub fn states(&self) -> &[MomentState] {
        &self.states
    }
}

impl Optimizer for Baseline {
    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<StepDiagnostics> {
        check_step_inputs(self.states.iter().map(|s| s.m.shape()), params, grads)?;
        let cfg = &self.cfg;
        let mut states = self.states.clone();
        let mut new_params = Vec::with_capacity(params.len());
        let mut directions = Vec::with_capacity(params.len());

        for (i, ((p, g), s)) in params.iter().zip(grads).zip(states.iter_mut()).enumerate() {
            let mut next = p.clone();
            let mut dir = Tensor::zeros(p.shape());
            s.step += 1;
            let coupled_wd = match cfg.kind {
                BaselineKind::AdamW => 0.0,
                _ => cfg.weight_decay,
            };
            if cfg.kind == BaselineKind::AdamW && cfg.weight_decay != 0.0 {
                let shrink = 1.0 - cfg.lr * cfg.weight_decay;
                next.data_mut().iter_mut().for_each(|x| *x *= shrink);
            }
            let bc1 = 1.0 - cfg.beta1.powi(s.step as i32);
            let bc2 = 1.0 - cfg.beta2.powi(s.step as i32);

            let theta = p.data();
            let m = s.m.data_mut();
            let v = s.v.data_mut();
            let d = dir.data_mut();
            for j in 0..theta.len() {
                let gj = grads_eff(g.data()[j], theta[j], coupled_wd);
                d[j] = match cfg.kind {
                    BaselineKind::Sgd => gj,
                    BaselineKind::SgdMomentum => {
                        m[j] = cfg.momentum * m[j] + gj;
                        m[j]
                    }
                    BaselineKind::Adam | BaselineKind::AdamW => {
                        m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
                        v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
                        (m[j] / bc1) / ((v[j] / bc2).sqrt() + cfg.eps)
                    }
                    BaselineKind::GradientOnlyAblation => unreachable!(),
                };
            }
            next.axpy(-cfg.lr, &dir)?;
            if !next.is_finite() {
                return Err(Error::DivergedState { tensor: i });
            }
            new_params.push(next);
            directions.push(dir);
        }

        let diag = StepDiagnostics {
            mean_alpha: 1.0,
            update_norm: global_norm(&directions),
            grad_norm: global_norm(grads),
            gain: 1.0,
            eta_effective: cfg.lr,
            alpha_saturation_frac: 0.0,
        };
        for (p, next) in params.iter_mut().zip(new_params) {
            *p = next;
        }
        self.states = states;
        Ok(diag)
    }
}

#[inline]
fn grads_eff(g: f64, theta: f64, wd: f64) -> f64 {
    if wd == 0.0 {
        g
    } else {
        g + wd * theta
    }
}

/// Build any baseline, including the gradient-only ablation, which is the
/// NeuroPlastic step with the activity and memory terms removed.
pub fn build_baseline(cfg: &BaselineConfig, shapes: &[Vec<usize>]) -> Result<Box<dyn Optimizer>> {
    match cfg.kind {
        BaselineKind::GradientOnlyAblation => {
            cfg.validate()?;
            let np = OptimizerConfig {
                lr: cfg.lr,
                weight_decay: cfg.weight_decay,
                plasticity: PlasticityConfig {
                    mode: PlasticityMode::GradientOnly,
                    eps: cfg.eps,
                    ..PlasticityConfig::default()
                },
                ..OptimizerConfig::default()
            };
            Ok(Box::new(NeuroPlastic::new(np, shapes)?))
        }
        _ => Ok(Box::new(Baseline::new(cfg.clone(), shapes)?)),
    }
}
