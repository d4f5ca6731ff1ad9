//! The NeuroPlastic optimizer step.
//!
//! Per parameter tensor, one step runs:
//!
//! 1. optional coupled decay: `g <- g + wd * theta`
//! 2. trace update, normalized signals, coefficient `alpha` (see [`crate::plasticity`])
//! 3. modulated update `u = alpha * g`
//! 4. stabilization `u~ = S(u)` (see [`crate::stabilizer`])
//! 5. optional decoupled decay `theta <- theta - eta_t * wd * theta`
//! 6. `theta <- theta - eta_t * u~`
//!
//! `eta_t` equals the base rate unless the learning-rate controller is on.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plasticity::{Coefficients, ParamState, PlasticityConfig, PlasticityEngine};
use crate::stabilizer::{self, LayerGroup, NormScope, StabilizerConfig};
use crate::tensor::Tensor;

/// Common interface of every optimizer the harness can drive.
pub trait Optimizer: Send {
    /// Tell the optimizer which epoch the following steps belong to.
    fn set_epoch(&mut self, _epoch: usize) {}

    /// Update `params` in place from `grads`. On error nothing is modified.
    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<StepDiagnostics>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    Coupled,
    Decoupled,
}

/// How the coefficient enters the update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// `u = alpha * g`, elementwise.
    Modulated,
    /// `u = g`; the mean coefficient rescales the learning rate instead.
    Controller,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub decay_mode: DecayMode,
    pub controller_enabled: bool,
    pub alpha_ctrl: f64,
    pub ctrl_min: f64,
    pub ctrl_max: f64,
    pub update_rule: UpdateRule,
    pub plasticity: PlasticityConfig,
    pub stabilizer: StabilizerConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.0,
            decay_mode: DecayMode::Decoupled,
            controller_enabled: false,
            alpha_ctrl: 0.1,
            ctrl_min: 0.8,
            ctrl_max: 1.2,
            update_rule: UpdateRule::Modulated,
            plasticity: PlasticityConfig::default(),
            stabilizer: StabilizerConfig::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr = {} must be > 0", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight_decay = {} must be >= 0",
                self.weight_decay
            )));
        }
        if !(self.ctrl_min <= self.ctrl_max) || !self.alpha_ctrl.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "controller bounds [{}, {}] invalid",
                self.ctrl_min, self.ctrl_max
            )));
        }
        self.plasticity.validate()?;
        self.stabilizer.validate()
    }
}

/// Per-step quantities for the optimizer dynamics plots.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// Unweighted mean over tensors of each tensor's mean coefficient.
    pub mean_alpha: f64,
    /// `sqrt(sum ||u~_i||^2)` of the stabilized update.
    pub update_norm: f64,
    /// `sqrt(sum ||g_i||^2)` of the incoming gradients, before decay or modulation.
    pub grad_norm: f64,
    /// Mean stabilizer gain over tensors.
    pub gain: f64,
    pub eta_effective: f64,
    /// Fraction of coefficient elements sitting exactly on a bound.
    pub alpha_saturation_frac: f64,
}

/// Controller multiplier for a mean coefficient discrepancy.
pub fn controller_factor(discrepancy: f64, cfg: &OptimizerConfig) -> f64 {
    (1.0 + cfg.alpha_ctrl * discrepancy).clamp(cfg.ctrl_min, cfg.ctrl_max)
}

/// `eta_t` for one tensor: the base rate, or with the controller on,
/// `eta * clip(1 + alpha_ctrl * mean(alpha - alpha_grad), ctrl_min, ctrl_max)`.
pub fn effective_lr(alpha: &Tensor, alpha_grad: &Tensor, cfg: &OptimizerConfig) -> Result<f64> {
    if !cfg.controller_enabled {
        return Ok(cfg.lr);
    }
    let discrepancy = alpha.sub(alpha_grad)?.mean()?;
    Ok(cfg.lr * controller_factor(discrepancy, cfg))
}

/// Validate arity, shapes and finiteness of a step's inputs.
pub(crate) fn check_step_inputs(
    shapes: impl ExactSizeIterator<Item = impl AsRef<[usize]>>,
    params: &[Tensor],
    grads: &[Tensor],
) -> Result<()> {
    let n = shapes.len();
    for found in [params.len(), grads.len()] {
        if found != n {
            return Err(Error::ArityMismatch { expected: n, found });
        }
    }
    for (i, shape) in shapes.enumerate() {
        for t in [&params[i], &grads[i]] {
            if t.shape() != shape.as_ref() {
                return Err(Error::ShapeMismatch {
                    expected: shape.as_ref().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if let Some(index) = grads[i].first_non_finite() {
            return Err(Error::NonFiniteGradient { tensor: i, index });
        }
    }
    Ok(())
}

pub(crate) fn global_norm(tensors: &[Tensor]) -> f64 {
    tensors.iter().fold(0.0, |acc, t| acc + t.sum_squares()).sqrt()
}

#[derive(Clone, Debug)]
pub struct NeuroPlastic {
    cfg: OptimizerConfig,
    engine: PlasticityEngine,
    states: Vec<ParamState>,
    groups: Vec<LayerGroup>,
}

impl NeuroPlastic {
    /// One zero-initialized state per shape, in registration order.
    pub fn new(cfg: OptimizerConfig, shapes: &[Vec<usize>]) -> Result<Self> {
        cfg.validate()?;
        let engine = PlasticityEngine::new(cfg.plasticity.clone())?;
        let n = shapes.len();
        Ok(Self {
            states: shapes.iter().map(|s| ParamState::zeros(s)).collect(),
            groups: (0..n).map(|i| LayerGroup::assign(i, n)).collect(),
            cfg,
            engine,
        })
    }

    pub fn for_params(cfg: OptimizerConfig, params: &[Tensor]) -> Result<Self> {
        let shapes: Vec<Vec<usize>> = params.iter().map(|p| p.shape().to_vec()).collect();
        Self::new(cfg, &shapes)
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn states(&self) -> &[ParamState] {
        &self.states
    }

    pub fn layer_groups(&self) -> &[LayerGroup] {
        &self.groups
    }

    pub fn epoch(&self) -> usize {
        self.engine.epoch()
    }

    /// The controller-style variant: the stabilized raw gradient is applied
    /// with `eta * clip(1 + alpha_ctrl * (mean(alpha) - 1), ctrl_min, ctrl_max)`.
    pub fn controller_variant_step(
        &mut self,
        params: &mut [Tensor],
        grads: &[Tensor],
    ) -> Result<StepDiagnostics> {
        self.step_with(params, grads, UpdateRule::Controller)
    }

    fn step_with(
        &mut self,
        params: &mut [Tensor],
        grads: &[Tensor],
        rule: UpdateRule,
    ) -> Result<StepDiagnostics> {
        check_step_inputs(self.states.iter().map(|s| s.shape()), params, grads)?;
        let cfg = &self.cfg;
        let wd = cfg.weight_decay;

        let grads_eff: Cow<[Tensor]> = if cfg.decay_mode == DecayMode::Coupled && wd != 0.0 {
            let mut eff = grads.to_vec();
            for (g, p) in eff.iter_mut().zip(params.iter()) {
                g.axpy(wd, p)?;
            }
            Cow::Owned(eff)
        } else {
            Cow::Borrowed(grads)
        };

        let mut states = self.states.clone();
        for (i, (s, g)) in states.iter_mut().zip(grads_eff.iter()).enumerate() {
            s.update_traces(g, &cfg.plasticity).map_err(|e| match e {
                Error::NonFiniteGradient { index, .. } => Error::NonFiniteGradient { tensor: i, index },
                other => other,
            })?;
        }
        let coeffs = self.engine.coefficients(&states, &grads_eff)?;

        let raw_updates: Vec<Tensor> = match rule {
            UpdateRule::Modulated => coeffs
                .iter()
                .zip(grads_eff.iter())
                .map(|(c, g)| c.alpha.mul(g))
                .collect::<Result<_>>()?,
            UpdateRule::Controller => grads_eff.into_owned(),
        };

        let global = match cfg.stabilizer.norm_scope {
            NormScope::Global => Some(global_norm(&raw_updates)),
            NormScope::PerTensor => None,
        };
        let mut updates = Vec::with_capacity(raw_updates.len());
        let mut gain_sum = 0.0;
        for (u, &group) in raw_updates.iter().zip(&self.groups) {
            let norm = global.unwrap_or_else(|| u.sum_squares().sqrt());
            let s = stabilizer::stabilize_against_norm(u, norm, &cfg.stabilizer, group)?;
            gain_sum += s.gain;
            updates.push(s.update);
        }

        let eta = self.eta_for(rule, &coeffs);

        let mut new_params = Vec::with_capacity(params.len());
        for (i, (p, u)) in params.iter().zip(&updates).enumerate() {
            let mut next = p.clone();
            if cfg.decay_mode == DecayMode::Decoupled && wd != 0.0 {
                let shrink = eta * wd;
                next.data_mut().iter_mut().for_each(|x| *x -= shrink * *x);
            }
            next.axpy(-eta, u)?;
            if !next.is_finite() {
                return Err(Error::DivergedState { tensor: i });
            }
            new_params.push(next);
        }

        let diag = self.diagnostics(&coeffs, &updates, grads, gain_sum, eta);
        for (p, next) in params.iter_mut().zip(new_params) {
            *p = next;
        }
        self.states = states;
        Ok(diag)
    }

    fn eta_for(&self, rule: UpdateRule, coeffs: &[Coefficients]) -> f64 {
        let cfg = &self.cfg;
        match rule {
            UpdateRule::Modulated if !cfg.controller_enabled => cfg.lr,
            UpdateRule::Modulated => {
                let (sum, count) = coeffs.iter().fold((0.0, 0usize), |(s, n), c| {
                    let d = c
                        .alpha
                        .data()
                        .iter()
                        .zip(c.alpha_grad.data())
                        .fold(s, |acc, (a, g)| acc + (a - g));
                    (d, n + c.alpha.len())
                });
                cfg.lr * controller_factor(sum / count.max(1) as f64, cfg)
            }
            UpdateRule::Controller => {
                let (sum, count) = coeffs
                    .iter()
                    .fold((0.0, 0usize), |(s, n), c| (s + c.alpha.sum(), n + c.alpha.len()));
                let mean_alpha = sum / count.max(1) as f64;
                cfg.lr * controller_factor(mean_alpha - 1.0, cfg)
            }
        }
    }

    fn diagnostics(
        &self,
        coeffs: &[Coefficients],
        updates: &[Tensor],
        grads: &[Tensor],
        gain_sum: f64,
        eta: f64,
    ) -> StepDiagnostics {
        let n = coeffs.len().max(1) as f64;
        let (lo, hi) = (self.cfg.plasticity.alpha_min, self.cfg.plasticity.alpha_max);
        let mut alpha_mean_sum = 0.0;
        let mut saturated = 0usize;
        let mut total = 0usize;
        for c in coeffs {
            alpha_mean_sum += c.alpha.mean().unwrap_or(0.0);
            saturated += c.alpha.data().iter().filter(|&&a| a == lo || a == hi).count();
            total += c.alpha.len();
        }
        StepDiagnostics {
            mean_alpha: alpha_mean_sum / n,
            update_norm: global_norm(updates),
            grad_norm: global_norm(grads),
            gain: gain_sum / n,
            eta_effective: eta,
            alpha_saturation_frac: if total == 0 { 0.0 } else { saturated as f64 / total as f64 },
        }
    }
}

impl Optimizer for NeuroPlastic {
    fn set_epoch(&mut self, epoch: usize) {
        self.engine.set_epoch(epoch);
    }

    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<StepDiagnostics> {
        let rule = self.cfg.update_rule;
        self.step_with(params, grads, rule)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plasticity::PlasticityMode;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn controller_defaults() {
        let c = OptimizerConfig::default();
        assert_eq!(c.weight_decay, 0.0);
        assert!(!c.controller_enabled);
        assert_eq!((c.alpha_ctrl, c.ctrl_min, c.ctrl_max), (0.1, 0.8, 1.2));
    }

    #[test]
    fn effective_lr_cases() {
        let mut cfg = OptimizerConfig { lr: 0.01, ..Default::default() };
        let a = t(&[1.5, 1.5]);
        let ag = t(&[1.0, 1.0]);
        assert_eq!(effective_lr(&a, &ag, &cfg).unwrap(), 0.01);
        cfg.controller_enabled = true;
        assert_eq!(effective_lr(&ag, &ag, &cfg).unwrap(), 0.01);
        let eta = effective_lr(&a, &ag, &cfg).unwrap();
        assert!((eta - 0.0105).abs() < 1e-15);
        // Large discrepancy hits the upper controller bound.
        let eta = effective_lr(&t(&[10.0]), &t(&[1.0]), &cfg).unwrap();
        assert!((eta - 0.012).abs() < 1e-15);
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut params = vec![t(&[1.0, -2.0]), t(&[0.5])];
        let before = params.clone();
        let mut opt = NeuroPlastic::for_params(OptimizerConfig::default(), &params).unwrap();
        let grads = vec![Tensor::zeros(&[2]), Tensor::zeros(&[1])];
        let d = opt.step(&mut params, &grads).unwrap();
        assert_eq!(params, before);
        assert_eq!(d.mean_alpha, 0.2);
        assert_eq!(d.update_norm, 0.0);
        assert_eq!(d.grad_norm, 0.0);
        assert_eq!(d.alpha_saturation_frac, 1.0);
    }

    #[test]
    fn gradient_only_with_uniform_gradient_is_stabilized_descent() {
        let cfg = OptimizerConfig {
            lr: 0.1,
            plasticity: PlasticityConfig::default().gradient_only(),
            ..Default::default()
        };
        let g = t(&[0.3, -0.3, 0.3]);
        let mut params = vec![t(&[1.0, 2.0, 3.0])];
        let mut opt = NeuroPlastic::for_params(cfg.clone(), &params).unwrap();
        let d = opt.step(&mut params, &[g.clone()]).unwrap();
        assert!((d.mean_alpha - 1.0).abs() < 1e-7);
        // alpha differs from 1 only by eps-level rounding; compare to S(g).
        let s = stabilizer::stabilize(&g, &cfg.stabilizer, LayerGroup::Early).unwrap();
        for (i, p) in params[0].data().iter().enumerate() {
            let expected = [1.0, 2.0, 3.0][i] - 0.1 * s.data()[i];
            assert!((p - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn errors_do_not_mutate() {
        let mut params = vec![t(&[1.0, 2.0])];
        let mut opt = NeuroPlastic::for_params(OptimizerConfig::default(), &params).unwrap();
        let states = opt.states().to_vec();
        let err = opt.step(&mut params, &[t(&[0.1, f64::INFINITY])]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { tensor: 0, index: 1 }));
        assert!(matches!(
            opt.step(&mut params, &[t(&[0.1])]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(opt.step(&mut params, &[]), Err(Error::ArityMismatch { .. })));
        assert_eq!(opt.states(), &states[..]);
        assert_eq!(params, vec![t(&[1.0, 2.0])]);
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = OptimizerConfig { lr: 1e308, ..Default::default() };
        let mut params = vec![t(&[-1e308])];
        let mut opt = NeuroPlastic::for_params(cfg, &params).unwrap();
        let r = opt.step(&mut params, &[t(&[1.0])]);
        assert!(matches!(r, Err(Error::DivergedState { tensor: 0 })));
        assert_eq!(params[0].data()[0], -1e308);
        assert_eq!(opt.states()[0].step, 0);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let cfg = OptimizerConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() };
        let mut params = vec![t(&[2.0, -4.0])];
        let mut opt = NeuroPlastic::for_params(cfg, &params).unwrap();
        opt.step(&mut params, &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(params[0], t(&[2.0 - 0.05 * 2.0, -4.0 + 0.05 * 4.0]));
    }

    #[test]
    fn coupled_decay_enters_the_signals() {
        let cfg = OptimizerConfig {
            lr: 0.1,
            weight_decay: 0.5,
            decay_mode: DecayMode::Coupled,
            ..Default::default()
        };
        let mut params = vec![t(&[2.0, -4.0])];
        let mut opt = NeuroPlastic::for_params(cfg, &params).unwrap();
        let d = opt.step(&mut params, &[Tensor::zeros(&[2])]).unwrap();
        // The decay term becomes the gradient, so the traces see it.
        assert!((opt.states()[0].m.data()[0] - 0.1).abs() < 1e-15);
        assert_eq!(d.grad_norm, 0.0);
        assert!(params[0].data()[0] < 2.0 && params[0].data()[1] > -4.0);
    }

    #[test]
    fn controller_variant_uses_mean_alpha() {
        let cfg = OptimizerConfig {
            lr: 0.1,
            alpha_ctrl: 0.5,
            plasticity: PlasticityConfig {
                mode: PlasticityMode::GradientOnly,
                ..Default::default()
            },
            ..Default::default()
        };
        let g = t(&[0.1, 0.3]);
        let mut params = vec![t(&[0.0, 0.0])];
        let mut opt = NeuroPlastic::for_params(cfg.clone(), &params).unwrap();
        let d = opt.controller_variant_step(&mut params, &[g.clone()]).unwrap();
        // alpha_grad = |g| / (mean|g| + eps), so mean alpha = 0.2 / (0.2 + eps).
        let mean_alpha = 0.2 / (0.2 + 1e-8);
        let eta = 0.1 * (1.0 + 0.5 * (mean_alpha - 1.0));
        assert!((d.eta_effective - eta).abs() < 1e-15, "{d:?}");
        let s = stabilizer::stabilize(&g, &cfg.stabilizer, LayerGroup::Early).unwrap();
        for (p, si) in params[0].data().iter().zip(s.data()) {
            assert!((p + d.eta_effective * si).abs() < 1e-15);
        }
    }

    #[test]
    fn controller_bounds_of_one_pin_the_rate() {
        let cfg = OptimizerConfig {
            lr: 0.05,
            ctrl_min: 1.0,
            ctrl_max: 1.0,
            ..Default::default()
        };
        let mut params = vec![t(&[0.0, 0.0, 0.0])];
        let mut opt = NeuroPlastic::for_params(cfg, &params).unwrap();
        for k in 0..5 {
            let g = t(&[0.1 * k as f64, -0.7, 2.0]);
            let d = opt.controller_variant_step(&mut params, &[g]).unwrap();
            assert_eq!(d.eta_effective, 0.05);
        }
    }

    #[test]
    fn layer_groups_follow_registration_order() {
        let shapes = vec![vec![2]; 6];
        let opt = NeuroPlastic::new(OptimizerConfig::default(), &shapes).unwrap();
        use LayerGroup::*;
        assert_eq!(opt.layer_groups(), &[Early, Early, Middle, Middle, Late, Late]);
    }
}
