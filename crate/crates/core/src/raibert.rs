//! Hand-tuned three-part Raibert controller.
//!
//! Flight: the hip servoes the leg to a foot-placement angle chosen from the
//! forward speed, while a stiff PD loop holds the leg at rest length.
//! Stance: the hip servoes body attitude and the leg pushes with the spring
//! force plus a constant thrust during extension (hop height).

use serde::{Deserialize, Serialize};

use crate::error::{HopperError, Result};
use crate::model::{ControlInput, HopperParams, HopperState, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaibertGains {
    /// Foot-placement speed gain [s].
    pub k_xdot: f64,
    /// Nominal stance duration [s].
    #[serde(rename = "T_s")]
    pub t_s: f64,
    pub k_p: f64,
    pub k_v: f64,
    pub k_p_body: f64,
    pub k_v_body: f64,
    /// Extra axial force during stance extension [N].
    #[serde(rename = "F_thrust")]
    pub f_thrust: f64,
    pub psi_d: f64,
    pub x_dot_d: f64,
    /// Flight leg-length loop.
    pub k_p_leg: f64,
    pub k_v_leg: f64,
}

impl Default for RaibertGains {
    fn default() -> Self {
        Self {
            k_xdot: 0.1,
            t_s: 0.1,
            k_p: 50.0,
            k_v: 5.0,
            // psi'' = alpha u2 slaves the body to the leg, so a stance
            // attitude loop undoes the foot placement; off by default
            k_p_body: 0.0,
            k_v_body: 0.0,
            // replaces the liftoff losses at the default apex
            f_thrust: 0.05,
            psi_d: 0.0,
            x_dot_d: 0.3,
            k_p_leg: 100.0,
            k_v_leg: 20.0,
        }
    }
}

impl RaibertGains {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("k_p", self.k_p),
            ("k_v", self.k_v),
            ("k_p_body", self.k_p_body),
            ("k_v_body", self.k_v_body),
            ("k_p_leg", self.k_p_leg),
            ("k_v_leg", self.k_v_leg),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(HopperError::InvalidParameter { name, value, reason: "gain must be finite and non-negative" });
            }
        }
        if !(self.t_s.is_finite() && self.t_s > 0.0) {
            return Err(HopperError::InvalidParameter {
                name: "T_s",
                value: self.t_s,
                reason: "stance duration must be positive",
            });
        }
        for (name, value) in [("k_xdot", self.k_xdot), ("F_thrust", self.f_thrust), ("psi_d", self.psi_d), ("x_dot_d", self.x_dot_d)] {
            if !value.is_finite() {
                return Err(HopperError::InvalidParameter { name, value, reason: "must be finite" });
            }
        }
        Ok(())
    }
}

/// Neutral point plus speed correction: `x_d = x' T_s / 2 + k_xdot (x' - x'_d)`.
pub fn foot_placement(x_dot: f64, gains: &RaibertGains) -> f64 {
    x_dot * gains.t_s / 2.0 + gains.k_xdot * (x_dot - gains.x_dot_d)
}

/// `gamma_d = psi - asin(x_d / l)`.
pub fn desired_leg_angle(x_d: f64, l: f64, psi: f64) -> Result<f64> {
    if !(l > 0.0) {
        return Err(HopperError::NonPositiveLegLength { l });
    }
    if x_d.abs() > l {
        return Err(HopperError::FootTargetOutOfReach { x_d, l });
    }
    Ok(psi - (x_d / l).asin())
}

pub fn hip_pd(gamma: f64, gamma_d: f64, gamma_dot: f64, gains: &RaibertGains) -> f64 {
    -gains.k_p * (gamma - gamma_d) - gains.k_v * gamma_dot
}

pub fn body_pd(psi: f64, psi_d: f64, psi_dot: f64, gains: &RaibertGains) -> f64 {
    -gains.k_p_body * (psi - psi_d) - gains.k_v_body * psi_dot
}

/// Leg angle that puts the foot `x_d` ahead of the CM.
///
/// `desired_leg_angle` measures the offset of the CM from the foot, so the
/// forward foot target enters with flipped sign. Targets beyond the leg are
/// clamped to `+-l`.
pub fn foot_target_angle(x_d: f64, l: f64, gains: &RaibertGains) -> Result<f64> {
    let x_cm_from_foot = (-x_d).clamp(-l, l);
    desired_leg_angle(x_cm_from_foot, l, gains.psi_d)
}

/// One evaluation of the phase-switched controller.
pub fn raibert_step(s: &HopperState, gains: &RaibertGains, p: &HopperParams) -> Result<ControlInput> {
    match s.phase {
        Phase::Flight => {
            let x_d = foot_placement(s.x_cm_dot, gains);
            let gamma_d = foot_target_angle(x_d, s.l, gains)?;
            let tau = hip_pd(s.gamma, gamma_d, s.gamma_dot, gains);
            let force = -gains.k_p_leg * (s.l - p.l0) - gains.k_v_leg * s.l_dot;
            Ok(ControlInput::new(force, tau))
        }
        Phase::Stance => {
            let tau = body_pd(s.psi, gains.psi_d, s.psi_dot, gains);
            let thrust = if s.l_dot > 0.0 { gains.f_thrust } else { 0.0 };
            Ok(ControlInput::new(p.k * (p.l0 - s.l) + thrust, tau))
        }
    }
}
