//! Homeostatic update stabilization: norm clip, then RMS gain control.
//!
//! ```text
//! u     <- u * tau / (||u|| + eps)               if ||u|| > tau
//! rms   =  sqrt(mean(u^2) + eps)
//! gain  =  clip(1 + rho * (r_target * scale[group] - rms), gain_min, gain_max)
//! u_out =  gain * u
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerGroup {
    Early,
    Middle,
    Late,
}

impl LayerGroup {
    /// Split `count` registered tensors into thirds by registration order.
    pub fn assign(index: usize, count: usize) -> LayerGroup {
        match (3 * index) / count.max(1) {
            0 => LayerGroup::Early,
            1 => LayerGroup::Middle,
            _ => LayerGroup::Late,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerScales {
    pub early: f64,
    pub middle: f64,
    pub late: f64,
}

impl Default for LayerScales {
    fn default() -> Self {
        Self {
            early: 1.0,
            middle: 1.0,
            late: 1.0,
        }
    }
}

impl LayerScales {
    pub fn get(&self, group: LayerGroup) -> f64 {
        match group {
            LayerGroup::Early => self.early,
            LayerGroup::Middle => self.middle,
            LayerGroup::Late => self.late,
        }
    }
}

/// Whether the clip threshold applies to each tensor's norm or to the
/// norm over all tensors together.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    PerTensor,
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilizerConfig {
    pub tau: f64,
    pub r_target: f64,
    pub rho: f64,
    pub gain_min: f64,
    pub gain_max: f64,
    pub layer_scale: LayerScales,
    pub eps: f64,
    pub norm_scope: NormScope,
}

impl Default for StabilizerConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            r_target: 0.02,
            rho: 0.01,
            gain_min: 0.5,
            gain_max: 1.5,
            layer_scale: LayerScales::default(),
            eps: 1e-8,
            norm_scope: NormScope::PerTensor,
        }
    }
}

impl StabilizerConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::InvalidConfig(m));
        if !(self.tau > 0.0) {
            return err(format!("tau = {} must be > 0", self.tau));
        }
        if !(self.r_target > 0.0) {
            return err(format!("r_target = {} must be > 0", self.r_target));
        }
        if !(self.rho >= 0.0) {
            return err(format!("rho = {} must be >= 0", self.rho));
        }
        if !(self.gain_min <= 1.0 && 1.0 <= self.gain_max) {
            return err(format!(
                "gain bounds [{}, {}] must contain 1",
                self.gain_min, self.gain_max
            ));
        }
        if !(self.eps > 0.0) {
            return err(format!("eps = {} must be > 0", self.eps));
        }
        let s = &self.layer_scale;
        if [s.early, s.middle, s.late].iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return err("layer scales must be finite and > 0".into());
        }
        Ok(())
    }
}

/// Rescale `u` to norm `tau` (up to `eps`) when its norm exceeds `tau`.
pub fn norm_clip(u: &Tensor, tau: f64, eps: f64) -> Tensor {
    norm_clip_with(u, u.sum_squares().sqrt(), tau, eps)
}

/// [`norm_clip`] against an externally computed norm (used for the global scope).
pub fn norm_clip_with(u: &Tensor, norm: f64, tau: f64, eps: f64) -> Tensor {
    if norm > tau {
        u.scale(tau / (norm + eps))
    } else {
        u.clone()
    }
}

/// Unclipped gain for a given RMS.
pub fn raw_gain(rms: f64, cfg: &StabilizerConfig, group: LayerGroup) -> f64 {
    1.0 + cfg.rho * (cfg.r_target * cfg.layer_scale.get(group) - rms)
}

pub fn rms_gain(u: &Tensor, cfg: &StabilizerConfig, group: LayerGroup) -> Result<f64> {
    let rms = u.rms(cfg.eps)?;
    Ok(raw_gain(rms, cfg, group).clamp(cfg.gain_min, cfg.gain_max))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stabilized {
    pub update: Tensor,
    pub gain: f64,
}

/// Clip then gain, with the gain computed on the clipped update.
pub fn stabilize(u: &Tensor, cfg: &StabilizerConfig, group: LayerGroup) -> Result<Tensor> {
    Ok(stabilize_with_gain(u, cfg, group)?.update)
}

pub fn stabilize_with_gain(
    u: &Tensor,
    cfg: &StabilizerConfig,
    group: LayerGroup,
) -> Result<Stabilized> {
    let norm = u.sum_squares().sqrt();
    stabilize_against_norm(u, norm, cfg, group)
}

/// Like [`stabilize_with_gain`] but clipping against `norm` rather than `||u||`.
pub fn stabilize_against_norm(
    u: &Tensor,
    norm: f64,
    cfg: &StabilizerConfig,
    group: LayerGroup,
) -> Result<Stabilized> {
    let clipped = norm_clip_with(u, norm, cfg.tau, cfg.eps);
    let gain = rms_gain(&clipped, cfg, group)?;
    let update = if gain == 1.0 { clipped } else { clipped.scale(gain) };
    Ok(Stabilized { update, gain })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn defaults_are_the_published_ones() {
        let c = StabilizerConfig::default();
        assert_eq!((c.tau, c.r_target, c.rho), (1.0, 0.02, 0.01));
        assert_eq!((c.gain_min, c.gain_max), (0.5, 1.5));
        assert_eq!(c.layer_scale, LayerScales { early: 1.0, middle: 1.0, late: 1.0 });
        c.validate().unwrap();
    }

    #[test]
    fn validation_requires_gain_bounds_around_one() {
        let c = StabilizerConfig { gain_min: 1.1, ..Default::default() };
        assert!(c.validate().is_err());
        let c = StabilizerConfig { tau: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn norm_clip_cases() {
        let eps = 1e-8;
        let out = norm_clip(&t(&[3.0, 4.0]), 1.0, eps);
        let k = 1.0 / (5.0 + eps);
        assert_eq!(out, t(&[3.0 * k, 4.0 * k]));
        assert!((out.data()[0] - 0.6).abs() < 1e-8);
        let small = t(&[0.3, -0.4]);
        assert_eq!(norm_clip(&small, 1.0, eps), small);
        assert_eq!(norm_clip(&t(&[0.0, 0.0]), 1.0, eps), t(&[0.0, 0.0]));
    }

    #[test]
    fn gain_cases() {
        let cfg = StabilizerConfig::default();
        // RMS exactly r_target once eps is accounted for.
        let r = (cfg.r_target * cfg.r_target - cfg.eps).sqrt();
        let on_target = t(&[r, -r, r, -r]);
        let g = rms_gain(&on_target, &cfg, LayerGroup::Middle).unwrap();
        assert!((g - 1.0).abs() < 1e-15);
        let big = t(&[100.0; 4]);
        assert_eq!(rms_gain(&big, &cfg, LayerGroup::Early).unwrap(), 0.5);
        assert!(rms_gain(&t(&[]), &cfg, LayerGroup::Early).is_err());
    }

    #[test]
    fn raw_gain_at_large_rms() {
        let cfg = StabilizerConfig::default();
        let g = raw_gain(100.0, &cfg, LayerGroup::Late);
        assert!((g - 0.0002).abs() < 1e-12);
    }

    #[test]
    fn stabilize_cases() {
        let cfg = StabilizerConfig::default();
        let zero = t(&[0.0, 0.0, 0.0]);
        assert_eq!(stabilize(&zero, &cfg, LayerGroup::Early).unwrap(), zero);

        // Scalar oracle for u = [3, 4].
        let eps: f64 = 1e-8;
        let k = 1.0 / (5.0 + eps);
        let (c0, c1) = (3.0 * k, 4.0 * k);
        let rms = ((c0 * c0 + c1 * c1) / 2.0 + eps).sqrt();
        let gain = (1.0 + 0.01 * (0.02 - rms)).clamp(0.5, 1.5);
        let out = stabilize_with_gain(&t(&[3.0, 4.0]), &cfg, LayerGroup::Early).unwrap();
        assert_eq!(out.gain, gain);
        assert!((out.update.data()[0] - gain * c0).abs() < 1e-9);
        assert!((out.update.data()[1] - gain * c1).abs() < 1e-9);
    }

    #[test]
    fn on_target_update_is_returned_unchanged() {
        let cfg = StabilizerConfig::default();
        let r = (cfg.r_target * cfg.r_target - cfg.eps).sqrt();
        let u = t(&[r, -r, r, -r]);
        assert!(u.l2_norm().unwrap() <= cfg.tau);
        assert_eq!(stabilize(&u, &cfg, LayerGroup::Late).unwrap(), u);
    }

    #[test]
    fn groups_split_into_thirds() {
        let groups: Vec<_> = (0..6).map(|i| LayerGroup::assign(i, 6)).collect();
        use LayerGroup::*;
        assert_eq!(groups, vec![Early, Early, Middle, Middle, Late, Late]);
        assert_eq!(LayerGroup::assign(0, 1), Early);
        assert_eq!(LayerGroup::assign(1, 2), Middle);
    }

    #[test]
    fn layer_scale_changes_the_target() {
        let cfg = StabilizerConfig {
            layer_scale: LayerScales { early: 1.0, middle: 1.0, late: 50.0 },
            rho: 1.0,
            ..Default::default()
        };
        let u = t(&[0.01; 4]);
        let early = rms_gain(&u, &cfg, LayerGroup::Early).unwrap();
        let late = rms_gain(&u, &cfg, LayerGroup::Late).unwrap();
        assert!(late > early);
    }

    proptest! {
        #[test]
        fn stabilized_norm_is_bounded(
            v in prop::collection::vec(-1e4f64..1e4, 1..64),
            tau in 1e-3f64..10.0,
        ) {
            let cfg = StabilizerConfig { tau, ..Default::default() };
            let out = stabilize_with_gain(&t(&v), &cfg, LayerGroup::Middle).unwrap();
            prop_assert!(out.gain >= cfg.gain_min && out.gain <= cfg.gain_max);
            let n = out.update.l2_norm().unwrap();
            prop_assert!(n <= cfg.gain_max * tau * (1.0 + 1e-9));
        }

        #[test]
        fn gain_is_monotone_in_rms(r1 in 0.0f64..1e3, r2 in 0.0f64..1e3) {
            let cfg = StabilizerConfig { rho: 0.5, ..Default::default() };
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let g_lo = raw_gain(lo, &cfg, LayerGroup::Early);
            let g_hi = raw_gain(hi, &cfg, LayerGroup::Early);
            prop_assert!(g_hi <= g_lo);
            prop_assert!(g_hi.clamp(0.5, 1.5) <= g_lo.clamp(0.5, 1.5));
        }

        #[test]
        fn equal_scales_make_groups_irrelevant(
            v in prop::collection::vec(-5f64..5.0, 1..32),
            s in 0.1f64..10.0,
        ) {
            let cfg = StabilizerConfig {
                layer_scale: LayerScales { early: s, middle: s, late: s },
                ..Default::default()
            };
            let u = t(&v);
            let e = stabilize(&u, &cfg, LayerGroup::Early).unwrap();
            prop_assert_eq!(&e, &stabilize(&u, &cfg, LayerGroup::Middle).unwrap());
            prop_assert_eq!(&e, &stabilize(&u, &cfg, LayerGroup::Late).unwrap());
        }
    }
}
