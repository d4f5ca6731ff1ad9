//! Per-parameter traces, normalized signals, and the plasticity coefficient.
//!
//! For every parameter tensor the engine keeps three exponential moving
//! averages of its gradient `g`:
//!
//! ```text
//! a <- beta_a * a + (1 - beta_a) * |g|        activity trace
//! m <- beta1  * m + (1 - beta1)  * g          first moment
//! v <- beta2  * v + (1 - beta2)  * g * g      second moment
//! ```
//!
//! Each is turned into a signal with unit population mean, and the three
//! signals are mixed into a clipped per-element coefficient `alpha`:
//!
//! ```text
//! g_s = |g| / (mean|g| + eps)
//! a_s = a / (mean(a) + eps)
//! r   = |m| / (sqrt(v) + eps),   m_s = r / (mean(r) + eps)
//!
//! alpha_grad = clip(g_s, alpha_min, alpha_max)
//! alpha_full = clip(w_a a_s + w_g g_s + w_m m_s, alpha_min, alpha_max)
//! alpha      = alpha_grad + lambda (alpha_full - alpha_grad),  lambda = s_plast * warmup(epoch)
//! ```
//!
//! The moments are deliberately left without bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlasticityMode {
    Full,
    GradientOnly,
}

/// Population over which the `mean(.)` denominators of the signals are taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationScope {
    PerTensor,
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlasticityConfig {
    pub w_a: f64,
    pub w_g: f64,
    pub w_m: f64,
    pub s_plast: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub beta_a: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_epochs: usize,
    pub mode: PlasticityMode,
    pub parameterwise: bool,
    pub normalization: NormalizationScope,
}

impl Default for PlasticityConfig {
    fn default() -> Self {
        Self {
            w_a: 0.4,
            w_g: 0.4,
            w_m: 0.2,
            s_plast: 1.0,
            alpha_min: 0.2,
            alpha_max: 2.0,
            beta_a: 0.95,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            warmup_epochs: 0,
            mode: PlasticityMode::Full,
            parameterwise: true,
            normalization: NormalizationScope::PerTensor,
        }
    }
}

impl PlasticityConfig {
    /// Defaults with the narrow coefficient band used for the MNIST-family runs.
    pub fn lightweight_benchmark() -> Self {
        Self {
            alpha_min: 0.9,
            alpha_max: 1.1,
            ..Self::default()
        }
    }

    pub fn gradient_only(mut self) -> Self {
        self.mode = PlasticityMode::GradientOnly;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.w_a,
            self.w_g,
            self.w_m,
            self.s_plast,
            self.alpha_min,
            self.alpha_max,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig(
                "plasticity weights and bounds must be finite".into(),
            ));
        }
        if self.alpha_min > self.alpha_max {
            return Err(Error::InvalidConfig(format!(
                "alpha_min ({}) > alpha_max ({})",
                self.alpha_min, self.alpha_max
            )));
        }
        for (name, beta) in [
            ("beta_a", self.beta_a),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidConfig(format!("{name} = {beta} not in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("eps = {} must be > 0", self.eps)));
        }
        if !(self.s_plast >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "s_plast = {} must be >= 0",
                self.s_plast
            )));
        }
        Ok(())
    }
}

/// Optimizer state for one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamState {
    pub a: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

impl ParamState {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            a: Tensor::zeros(shape),
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.a.shape()
    }

    /// Advance the three traces by one gradient. Leaves `self` untouched on error.
    pub fn update_traces(&mut self, g: &Tensor, cfg: &PlasticityConfig) -> Result<()> {
        self.a.check_same_shape(g)?;
        if let Some(index) = g.first_non_finite() {
            return Err(Error::NonFiniteGradient { tensor: 0, index });
        }
        let (ba, b1, b2) = (cfg.beta_a, cfg.beta1, cfg.beta2);
        let a = self.a.data_mut();
        for (ai, &gi) in a.iter_mut().zip(g.data()) {
            *ai = ba * *ai + (1.0 - ba) * gi.abs();
        }
        let m = self.m.data_mut();
        for (mi, &gi) in m.iter_mut().zip(g.data()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
        }
        let v = self.v.data_mut();
        for (vi, &gi) in v.iter_mut().zip(g.data()) {
            *vi = b2 * *vi + (1.0 - b2) * (gi * gi);
        }
        self.step += 1;
        Ok(())
    }
}

/// `x / (mean + eps)`, with the mean supplied by the caller.
pub fn normalize_by(x: &Tensor, mean: f64, eps: f64) -> Tensor {
    let denom = mean + eps;
    x.map(|xi| xi / denom)
}

fn self_normalize(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean()?;
    Ok(normalize_by(x, mean, eps))
}

pub fn gradient_signal(g: &Tensor, eps: f64) -> Result<Tensor> {
    self_normalize(&g.abs(), eps)
}

pub fn activity_signal(a: &Tensor, eps: f64) -> Result<Tensor> {
    self_normalize(a, eps)
}

/// `|m| / (sqrt(v) + eps)`, the un-normalized memory ratio.
pub fn memory_ratio(m: &Tensor, v: &Tensor, eps: f64) -> Result<Tensor> {
    m.zip_map(v, |mi, vi| mi.abs() / (vi.sqrt() + eps))
}

pub fn memory_signal(m: &Tensor, v: &Tensor, eps: f64) -> Result<Tensor> {
    let r = memory_ratio(m, v, eps)?;
    self_normalize(&r, eps)
}

pub fn alpha_gradient_only(g_s: &Tensor, cfg: &PlasticityConfig) -> Result<Tensor> {
    g_s.clip(cfg.alpha_min, cfg.alpha_max)
}

pub fn alpha_full(
    a_s: &Tensor,
    g_s: &Tensor,
    m_s: &Tensor,
    cfg: &PlasticityConfig,
) -> Result<Tensor> {
    a_s.check_same_shape(g_s)?;
    a_s.check_same_shape(m_s)?;
    let mixed: Vec<f64> = a_s
        .data()
        .iter()
        .zip(g_s.data())
        .zip(m_s.data())
        .map(|((&a, &g), &m)| cfg.w_a * a + cfg.w_g * g + cfg.w_m * m)
        .collect();
    Tensor::new(mixed, a_s.shape().to_vec())?.clip(cfg.alpha_min, cfg.alpha_max)
}

/// Interpolate from the gradient-only to the full coefficient by `lambda`.
///
/// The result is clamped to `[alpha_min, alpha_max]` again, which only bites
/// when `lambda > 1` turns the interpolation into extrapolation. With
/// `parameterwise` off the tensor is replaced by its mean.
pub fn alpha_final(
    alpha_grad: &Tensor,
    alpha_full: &Tensor,
    lambda: f64,
    cfg: &PlasticityConfig,
) -> Result<Tensor> {
    let alpha = alpha_grad
        .zip_map(alpha_full, |ag, af| ag + lambda * (af - ag))?
        .clip(cfg.alpha_min, cfg.alpha_max)?;
    scalar_mode(alpha, cfg)
}

fn scalar_mode(alpha: Tensor, cfg: &PlasticityConfig) -> Result<Tensor> {
    if cfg.parameterwise {
        return Ok(alpha);
    }
    let mean = alpha.mean()?;
    Ok(Tensor::full(alpha.shape(), mean))
}

/// Linear ramp over epochs, saturating at 1. `warmup_epochs == 0` disables it.
pub fn warmup_gate(epoch: usize, warmup_epochs: usize) -> f64 {
    if warmup_epochs == 0 {
        return 1.0;
    }
    ((epoch + 1) as f64 / warmup_epochs as f64).min(1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Coefficients {
    /// The coefficient actually applied to the gradient.
    pub alpha: Tensor,
    /// The gradient-only coefficient, kept for the learning-rate controller.
    pub alpha_grad: Tensor,
}

/// Computes coefficients for a set of parameter tensors at the current epoch.
#[derive(Clone, Debug)]
pub struct PlasticityEngine {
    cfg: PlasticityConfig,
    epoch: usize,
}

impl PlasticityEngine {
    pub fn new(cfg: PlasticityConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, epoch: 0 })
    }

    pub fn config(&self) -> &PlasticityConfig {
        &self.cfg
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn lambda(&self) -> f64 {
        self.cfg.s_plast * warmup_gate(self.epoch, self.cfg.warmup_epochs)
    }

    /// Coefficients for each `(state, g)` pair. `states` must already hold
    /// the traces updated with `grads`.
    pub fn coefficients(
        &self,
        states: &[ParamState],
        grads: &[Tensor],
    ) -> Result<Vec<Coefficients>> {
        if states.len() != grads.len() {
            return Err(Error::ArityMismatch {
                expected: states.len(),
                found: grads.len(),
            });
        }
        let eps = self.cfg.eps;
        let abs_grads: Vec<Tensor> = grads.iter().map(Tensor::abs).collect();
        let ratios = states
            .iter()
            .map(|s| memory_ratio(&s.m, &s.v, eps))
            .collect::<Result<Vec<_>>>()?;

        let (g_means, a_means, r_means) = match self.cfg.normalization {
            NormalizationScope::PerTensor => (
                abs_grads.iter().map(Tensor::mean).collect::<Result<Vec<_>>>()?,
                states.iter().map(|s| s.a.mean()).collect::<Result<Vec<_>>>()?,
                ratios.iter().map(Tensor::mean).collect::<Result<Vec<_>>>()?,
            ),
            NormalizationScope::Global => {
                let n = states.len();
                let g = pooled_mean(abs_grads.iter())?;
                let a = pooled_mean(states.iter().map(|s| &s.a))?;
                let r = pooled_mean(ratios.iter())?;
                (vec![g; n], vec![a; n], vec![r; n])
            }
        };

        let lambda = self.lambda();
        let mut out = Vec::with_capacity(states.len());
        for i in 0..states.len() {
            let g_s = normalize_by(&abs_grads[i], g_means[i], eps);
            let alpha_grad = alpha_gradient_only(&g_s, &self.cfg)?;
            let alpha = match self.cfg.mode {
                PlasticityMode::GradientOnly => scalar_mode(alpha_grad.clone(), &self.cfg)?,
                PlasticityMode::Full => {
                    let a_s = normalize_by(&states[i].a, a_means[i], eps);
                    let m_s = normalize_by(&ratios[i], r_means[i], eps);
                    let full = alpha_full(&a_s, &g_s, &m_s, &self.cfg)?;
                    alpha_final(&alpha_grad, &full, lambda, &self.cfg)?
                }
            };
            out.push(Coefficients { alpha, alpha_grad });
        }
        Ok(out)
    }
}

/// Mean over the concatenation of `tensors`, shifted by the first element.
fn pooled_mean<'a>(tensors: impl Iterator<Item = &'a Tensor> + Clone) -> Result<f64> {
    let first = tensors
        .clone()
        .find_map(|t| t.data().first().copied())
        .ok_or(Error::EmptyTensor)?;
    let (dev, count) = tensors.fold((0.0, 0usize), |(dev, count), t| {
        let d = t.data().iter().fold(dev, |acc, &x| acc + (x - first));
        (d, count + t.len())
    });
    Ok(first + dev / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec())
    }

    fn assert_close(a: &Tensor, b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.data().iter().zip(b) {
            assert!((x - y).abs() <= tol, "{:?} vs {:?}", a.data(), b);
        }
    }

    #[test]
    fn defaults_are_the_published_ones() {
        let c = PlasticityConfig::default();
        assert_eq!((c.w_a, c.w_g, c.w_m), (0.4, 0.4, 0.2));
        assert_eq!(c.s_plast, 1.0);
        assert_eq!((c.alpha_min, c.alpha_max), (0.2, 2.0));
        assert_eq!(c.eps, 1e-8);
        assert_eq!((c.beta_a, c.beta1, c.beta2), (0.95, 0.9, 0.99));
        assert_eq!(c.warmup_epochs, 0);
        assert!(c.parameterwise);
        assert_eq!(c.mode, PlasticityMode::Full);
        c.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let bad = [
            PlasticityConfig { alpha_min: 3.0, ..Default::default() },
            PlasticityConfig { beta1: 1.0, ..Default::default() },
            PlasticityConfig { beta_a: -0.1, ..Default::default() },
            PlasticityConfig { eps: 0.0, ..Default::default() },
            PlasticityConfig { w_a: f64::NAN, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn trace_first_step() {
        let cfg = PlasticityConfig::default();
        let mut s = ParamState::zeros(&[2]);
        s.update_traces(&t(&[1.0, 1.0]), &cfg).unwrap();
        assert_close(&s.a, &[0.05, 0.05], 1e-15);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let cfg = PlasticityConfig::default();
        let mut s = ParamState::zeros(&[3]);
        s.update_traces(&Tensor::zeros(&[3]), &cfg).unwrap();
        assert_eq!(s.m, Tensor::zeros(&[3]));
        assert_eq!(s.v, Tensor::zeros(&[3]));
    }

    #[test]
    fn traces_converge_to_constant_gradient() {
        let cfg = PlasticityConfig::default();
        let c = -0.7;
        let mut s = ParamState::zeros(&[1]);
        for _ in 0..1000 {
            s.update_traces(&t(&[c]), &cfg).unwrap();
        }
        assert!((s.a.data()[0] - c.abs()).abs() < 1e-6);
        assert!((s.m.data()[0] - c).abs() < 1e-6);
        // beta2^1000 is still ~4e-5, so v is checked against the partial sum.
        let v_limit = c * c * (1.0 - cfg.beta2.powi(1000));
        assert!((s.v.data()[0] - v_limit).abs() < 1e-12);
        assert!((s.v.data()[0] - c * c).abs() < 1e-4);
        assert_eq!(s.step, 1000);
    }

    #[test]
    fn trace_errors_leave_state_untouched() {
        let cfg = PlasticityConfig::default();
        let mut s = ParamState::zeros(&[2]);
        let before = s.clone();
        assert!(matches!(
            s.update_traces(&t(&[1.0, f64::NAN]), &cfg),
            Err(Error::NonFiniteGradient { index: 1, .. })
        ));
        assert!(matches!(
            s.update_traces(&t(&[1.0]), &cfg),
            Err(Error::ShapeMismatch { .. })
        ));
        assert_eq!(s, before);
    }

    #[test]
    fn gradient_signal_cases() {
        assert_close(&gradient_signal(&t(&[0.3; 3]), 1e-8).unwrap(), &[1.0; 3], 1e-7);
        assert_eq!(gradient_signal(&t(&[0.0, 0.0]), 1e-8).unwrap(), t(&[0.0, 0.0]));
        assert_close(&gradient_signal(&t(&[1.0, -3.0]), 0.0).unwrap(), &[0.5, 1.5], 1e-15);
        assert!(gradient_signal(&t(&[]), 1e-8).is_err());
    }

    #[test]
    fn activity_signal_cases() {
        assert_close(&activity_signal(&t(&[2.0, 2.0]), 1e-8).unwrap(), &[1.0, 1.0], 1e-8);
        assert_eq!(activity_signal(&t(&[0.0, 0.0]), 1e-8).unwrap(), t(&[0.0, 0.0]));
        assert_close(
            &activity_signal(&t(&[1.0, 2.0, 3.0]), 0.0).unwrap(),
            &[0.5, 1.0, 1.5],
            1e-15,
        );
    }

    #[test]
    fn memory_signal_cases() {
        let zero = memory_signal(&t(&[0.0, 0.0]), &t(&[4.0, 9.0]), 1e-8).unwrap();
        assert_eq!(zero, t(&[0.0, 0.0]));
        let c = 0.25;
        let sym = memory_signal(&t(&[c, c]), &t(&[c * c, c * c]), 1e-8).unwrap();
        assert_close(&sym, &[1.0, 1.0], 1e-7);
        let m = memory_signal(&t(&[1.0, 2.0]), &t(&[1.0, 1.0]), 0.0).unwrap();
        assert_close(&m, &[2.0 / 3.0, 4.0 / 3.0], 1e-15);
        assert!(memory_signal(&t(&[1.0]), &t(&[1.0, 1.0]), 1e-8).is_err());
    }

    #[test]
    fn alpha_gradient_only_cases() {
        let cfg = PlasticityConfig::default();
        assert_eq!(
            alpha_gradient_only(&t(&[0.0, 1.0, 5.0]), &cfg).unwrap(),
            t(&[0.2, 1.0, 2.0])
        );
        let narrow = PlasticityConfig::lightweight_benchmark();
        assert_eq!(alpha_gradient_only(&t(&[1.0]), &narrow).unwrap(), t(&[1.0]));
        let g_s = gradient_signal(&t(&[0.01; 5]), cfg.eps).unwrap();
        assert_close(&alpha_gradient_only(&g_s, &cfg).unwrap(), &[1.0; 5], 1e-5);
    }

    #[test]
    fn alpha_full_cases() {
        let cfg = PlasticityConfig::default();
        let ones = t(&[1.0, 1.0]);
        assert_close(&alpha_full(&ones, &ones, &ones, &cfg).unwrap(), &[1.0, 1.0], 1e-15);
        let zeros = t(&[0.0, 0.0]);
        assert_eq!(alpha_full(&zeros, &zeros, &zeros, &cfg).unwrap(), t(&[0.2, 0.2]));
        let a = alpha_full(&t(&[2.0]), &t(&[1.0]), &t(&[0.5]), &cfg).unwrap();
        assert_close(&a, &[1.3], 1e-15);
        assert!(alpha_full(&t(&[1.0]), &ones, &ones, &cfg).is_err());
    }

    #[test]
    fn alpha_final_cases() {
        let cfg = PlasticityConfig::default();
        let ag = t(&[1.0, 1.0]);
        let af = t(&[1.5, 0.5]);
        assert_eq!(alpha_final(&ag, &af, 0.0, &cfg).unwrap(), ag);
        assert_eq!(alpha_final(&ag, &af, 1.0, &cfg).unwrap(), af);
        assert_eq!(alpha_final(&ag, &af, 0.5, &cfg).unwrap(), t(&[1.25, 0.75]));
        let scalar = PlasticityConfig { parameterwise: false, ..Default::default() };
        assert_eq!(alpha_final(&ag, &af, 0.5, &scalar).unwrap(), t(&[1.0, 1.0]));
    }

    #[test]
    fn extrapolation_is_clamped() {
        let cfg = PlasticityConfig::default();
        let out = alpha_final(&t(&[1.0]), &t(&[2.0]), 3.0, &cfg).unwrap();
        assert_eq!(out, t(&[2.0]));
    }

    #[test]
    fn warmup_gate_cases() {
        for epoch in [0, 1, 7, 100] {
            assert_eq!(warmup_gate(epoch, 0), 1.0);
        }
        assert_eq!(warmup_gate(1, 4), 0.5);
        assert_eq!(warmup_gate(0, 4), 0.25);
        assert_eq!(warmup_gate(3, 4), 1.0);
        assert_eq!(warmup_gate(9, 4), 1.0);
    }

    #[test]
    fn engine_uses_warmup_lambda() {
        let mut engine = PlasticityEngine::new(PlasticityConfig {
            warmup_epochs: 4,
            s_plast: 0.8,
            ..Default::default()
        })
        .unwrap();
        assert!((engine.lambda() - 0.2).abs() < 1e-15);
        engine.set_epoch(1);
        assert!((engine.lambda() - 0.4).abs() < 1e-15);
        engine.set_epoch(10);
        assert_eq!(engine.lambda(), 0.8);
    }

    #[test]
    fn zero_gradient_gives_alpha_min() {
        let engine = PlasticityEngine::new(PlasticityConfig::default()).unwrap();
        let mut s = ParamState::zeros(&[3]);
        let g = Tensor::zeros(&[3]);
        s.update_traces(&g, engine.config()).unwrap();
        let c = engine.coefficients(&[s], &[g]).unwrap();
        assert_eq!(c[0].alpha, t(&[0.2; 3]));
        assert!(c[0].alpha.is_finite());
    }

    #[test]
    fn global_scope_pools_denominators() {
        // Two tensors whose per-tensor normalizations differ from the pooled one.
        let cfg = PlasticityConfig {
            normalization: NormalizationScope::Global,
            mode: PlasticityMode::GradientOnly,
            alpha_min: 0.0,
            alpha_max: 10.0,
            ..Default::default()
        };
        let engine = PlasticityEngine::new(cfg.clone()).unwrap();
        let grads = [t(&[1.0, 1.0]), t(&[3.0, 3.0])];
        let mut states = vec![ParamState::zeros(&[2]), ParamState::zeros(&[2])];
        for (s, g) in states.iter_mut().zip(&grads) {
            s.update_traces(g, &cfg).unwrap();
        }
        let c = engine.coefficients(&states, &grads).unwrap();
        // Pooled mean |g| = 2.
        assert_close(&c[0].alpha, &[0.5, 0.5], 1e-8);
        assert_close(&c[1].alpha, &[1.5, 1.5], 1e-8);
    }

    #[test]
    fn pooled_mean_skips_leading_empty_tensors() {
        let ts = [t(&[]), t(&[2.0, 4.0]), t(&[6.0])];
        assert_eq!(pooled_mean(ts.iter()).unwrap(), 4.0);
        assert!(pooled_mean([t(&[])].iter()).is_err());
    }

    /// Straight scalar loop used as the trace oracle.
    fn scalar_traces(gs: &[f64], cfg: &PlasticityConfig) -> (f64, f64, f64) {
        let (mut a, mut m, mut v) = (0.0, 0.0, 0.0);
        for &g in gs {
            a = cfg.beta_a * a + (1.0 - cfg.beta_a) * g.abs();
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        }
        (a, m, v)
    }

    proptest! {
        #[test]
        fn traces_match_scalar_reference(gs in prop::collection::vec(-10f64..10.0, 100)) {
            let cfg = PlasticityConfig::default();
            let mut s = ParamState::zeros(&[1]);
            for &g in &gs {
                s.update_traces(&t(&[g]), &cfg).unwrap();
            }
            let (a, m, v) = scalar_traces(&gs, &cfg);
            prop_assert!((s.a.data()[0] - a).abs() <= 1e-12);
            prop_assert!((s.m.data()[0] - m).abs() <= 1e-12);
            prop_assert!((s.v.data()[0] - v).abs() <= 1e-12);
            prop_assert!(s.a.data()[0] >= 0.0 && s.v.data()[0] >= 0.0);
        }

        #[test]
        fn signals_are_scale_invariant(
            v in prop::collection::vec(0.01f64..1.0, 2..32),
            c in prop::sample::select(vec![10.0, 1000.0]),
        ) {
            let g = t(&v);
            let base = gradient_signal(&g, 1e-8).unwrap();
            let scaled = gradient_signal(&g.scale(c), 1e-8).unwrap();
            for (x, y) in base.data().iter().zip(scaled.data()) {
                prop_assert!((x - y).abs() < 1e-5);
            }
        }

        #[test]
        fn interpolation_stays_between_endpoints(
            ag in prop::collection::vec(0.2f64..2.0, 1..16),
            seed in prop::collection::vec(0.2f64..2.0, 16),
            lambda in 0.0f64..=1.0,
        ) {
            let cfg = PlasticityConfig::default();
            let af = t(&seed[..ag.len()]);
            let ag = t(&ag);
            let out = alpha_final(&ag, &af, lambda, &cfg).unwrap();
            for ((o, a), f) in out.data().iter().zip(ag.data()).zip(af.data()) {
                prop_assert!(*o >= a.min(*f) - 1e-15 && *o <= a.max(*f) + 1e-15);
                prop_assert!(*o >= cfg.alpha_min && *o <= cfg.alpha_max);
            }
        }
    }
}
