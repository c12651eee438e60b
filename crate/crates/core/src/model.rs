//! Physical parameters, hybrid state and equations of motion of the planar
//! monopod hopper.
//!
//! Leg coordinates are the polar pair `(l, gamma)` of the centre of mass about
//! the foot; `gamma` is measured from the vertical so that the CM sits at
//! `x = foot_x - l sin(gamma)`, `y = l cos(gamma)`. The hip offset is zero, so
//! the body mass is concentrated at the hip joint.

use serde::{Deserialize, Serialize};

use crate::error::{HopperError, Result};

/// Index layout of [`StateVector`].
pub mod idx {
    pub const L: usize = 0;
    pub const L_DOT: usize = 1;
    pub const GAMMA: usize = 2;
    pub const GAMMA_DOT: usize = 3;
    pub const PSI: usize = 4;
    pub const PSI_DOT: usize = 5;
    pub const X: usize = 6;
    pub const Y: usize = 7;
    pub const X_DOT: usize = 8;
    pub const Y_DOT: usize = 9;
}

/// Packed continuous state `(l, l', gamma, gamma', psi, psi', x, y, x', y')`.
pub type StateVector = [f64; 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Stance,
    Flight,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Stance => "stance",
            Phase::Flight => "flight",
        }
    }
}

/// Physical constants.
///
/// `m_b` and `m_l` only enter the first-order reference model; the
/// second-order model lumps everything into `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HopperParams {
    pub m: f64,
    pub m_b: f64,
    pub m_l: f64,
    pub k: f64,
    pub l0: f64,
    #[serde(rename = "I_b")]
    pub i_b: f64,
    pub g: f64,
}

impl Default for HopperParams {
    fn default() -> Self {
        Self {
            m: 1.0,
            m_b: 1.0,
            m_l: 0.1,
            k: 1000.0,
            l0: 1.0,
            i_b: 0.1,
            g: 9.81,
        }
    }
}

impl HopperParams {
    /// Body-angle gain: `psi'' = tau / I_b = alpha * u2` with `u2 = tau / m`.
    pub fn alpha(&self) -> f64 {
        self.m / self.i_b
    }

    /// Hip offset between body CM and hip joint. Always zero in this model.
    pub const fn hip_offset(&self) -> f64 {
        0.0
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("m", self.m),
            ("m_b", self.m_b),
            ("m_l", self.m_l),
            ("k", self.k),
            ("l0", self.l0),
            ("I_b", self.i_b),
            ("g", self.g),
        ];
        for (name, value) in checks {
            if !(value.is_finite() && value > 0.0) {
                return Err(HopperError::InvalidParameter {
                    name,
                    value,
                    reason: "must be finite and strictly positive",
                });
            }
        }
        Ok(())
    }

    /// Angular frequency of the vertical spring-mass oscillation.
    pub fn spring_frequency(&self) -> f64 {
        (self.k / self.m).sqrt()
    }
}

/// Axial leg force `F` [N] and hip torque `tau` [N m].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub force: f64,
    pub tau: f64,
}

impl ControlInput {
    pub fn new(force: f64, tau: f64) -> Self {
        Self { force, tau }
    }

    pub fn is_finite(&self) -> bool {
        self.force.is_finite() && self.tau.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopperState {
    pub l: f64,
    pub l_dot: f64,
    pub gamma: f64,
    pub gamma_dot: f64,
    pub psi: f64,
    pub psi_dot: f64,
    pub x_cm: f64,
    pub y_cm: f64,
    pub x_cm_dot: f64,
    pub y_cm_dot: f64,
    pub foot_x: f64,
    pub phase: Phase,
    pub t: f64,
}

impl HopperState {
    /// Flight apex at CM height `apex_height` with the leg hanging at rest length.
    pub fn apex(p: &HopperParams, apex_height: f64, x_cm_dot: f64) -> Self {
        Self {
            l: p.l0,
            l_dot: 0.0,
            gamma: 0.0,
            gamma_dot: 0.0,
            psi: 0.0,
            psi_dot: 0.0,
            x_cm: 0.0,
            y_cm: apex_height,
            x_cm_dot,
            y_cm_dot: 0.0,
            foot_x: 0.0,
            phase: Phase::Flight,
            t: 0.0,
        }
    }

    pub fn to_vector(&self) -> StateVector {
        [
            self.l,
            self.l_dot,
            self.gamma,
            self.gamma_dot,
            self.psi,
            self.psi_dot,
            self.x_cm,
            self.y_cm,
            self.x_cm_dot,
            self.y_cm_dot,
        ]
    }

    pub fn with_vector(&self, v: &StateVector, t: f64) -> Self {
        Self {
            l: v[idx::L],
            l_dot: v[idx::L_DOT],
            gamma: v[idx::GAMMA],
            gamma_dot: v[idx::GAMMA_DOT],
            psi: v[idx::PSI],
            psi_dot: v[idx::PSI_DOT],
            x_cm: v[idx::X],
            y_cm: v[idx::Y],
            x_cm_dot: v[idx::X_DOT],
            y_cm_dot: v[idx::Y_DOT],
            t,
            ..*self
        }
    }

    /// Height of the foot above the ground, `y_cm - l cos(gamma)`.
    pub fn foot_height(&self) -> f64 {
        self.y_cm - self.l * self.gamma.cos()
    }

    /// Overwrites the CM position and velocity from the polar leg coordinates
    /// about the anchored foot.
    pub fn sync_cm_from_polar(&mut self) {
        let cm = cm_kinematics(self.l, self.l_dot, self.gamma, self.gamma_dot);
        self.x_cm = self.foot_x + cm.x;
        self.y_cm = cm.y;
        self.x_cm_dot = cm.x_dot;
        self.y_cm_dot = cm.y_dot;
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite()) && self.foot_x.is_finite()
    }
}

/// Centre-of-mass position and velocity relative to the foot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmKinematics {
    pub x: f64,
    pub y: f64,
    pub x_dot: f64,
    pub y_dot: f64,
}

pub fn cm_kinematics(l: f64, l_dot: f64, gamma: f64, gamma_dot: f64) -> CmKinematics {
    let (s, c) = gamma.sin_cos();
    CmKinematics {
        x: -l * s,
        y: l * c,
        x_dot: -l_dot * s - l * gamma_dot * c,
        y_dot: l_dot * c - l * gamma_dot * s,
    }
}

/// Inverse of [`cm_kinematics`]: polar `(l, l', gamma, gamma')` of a CM at
/// offset `(x, y)` from the foot moving with velocity `(x_dot, y_dot)`.
pub fn polar_from_cm(x: f64, y: f64, x_dot: f64, y_dot: f64) -> (f64, f64, f64, f64) {
    let l2 = x * x + y * y;
    let l = l2.sqrt();
    let gamma = (-x).atan2(y);
    let l_dot = (x * x_dot + y * y_dot) / l;
    let gamma_dot = (x * y_dot - y * x_dot) / l2;
    (l, l_dot, gamma, gamma_dot)
}

fn check_leg(l: f64) -> Result<()> {
    if l > 0.0 {
        Ok(())
    } else {
        Err(HopperError::NonPositiveLegLength { l })
    }
}

/// Second-order stance dynamics with `u1 = F/m`, `u2 = tau/m`:
///
/// ```text
/// l''     = l gamma'^2 - g cos(gamma) + u1
/// gamma'' = g sin(gamma) / l - 2 l' gamma' / l + u2 / l^2
/// psi''   = alpha u2
/// ```
///
/// The CM entries of the returned vector are the time derivatives of the
/// polar map, so integrating the full vector keeps the CM consistent to
/// integrator accuracy.
pub fn stance_derivatives(s: &HopperState, p: &HopperParams, u: &ControlInput) -> Result<StateVector> {
    check_leg(s.l)?;
    let u1 = u.force / p.m;
    let u2 = u.tau / p.m;
    let (sg, cg) = s.gamma.sin_cos();
    let l_ddot = s.l * s.gamma_dot * s.gamma_dot - p.g * cg + u1;
    let gamma_ddot = p.g * sg / s.l - 2.0 * s.l_dot * s.gamma_dot / s.l + u2 / (s.l * s.l);
    let psi_ddot = p.alpha() * u2;

    let cm = cm_kinematics(s.l, s.l_dot, s.gamma, s.gamma_dot);
    let gd2 = s.gamma_dot * s.gamma_dot;
    let x_ddot = -l_ddot * sg - 2.0 * s.l_dot * s.gamma_dot * cg - s.l * gamma_ddot * cg + s.l * gd2 * sg;
    let y_ddot = l_ddot * cg - 2.0 * s.l_dot * s.gamma_dot * sg - s.l * gamma_ddot * sg - s.l * gd2 * cg;

    Ok([
        s.l_dot, l_ddot, s.gamma_dot, gamma_ddot, s.psi_dot, psi_ddot, cm.x_dot, cm.y_dot, x_ddot, y_ddot,
    ])
}

/// Flight dynamics: the CM is ballistic, the leg length is frozen
/// (`l'' = 0`, `F` ignored) and the hip torque swings the leg and body.
pub fn flight_derivatives(s: &HopperState, p: &HopperParams, u: &ControlInput) -> Result<StateVector> {
    check_leg(s.l)?;
    let u2 = u.tau / p.m;
    Ok([
        s.l_dot,
        0.0,
        s.gamma_dot,
        u2 / (s.l * s.l),
        s.psi_dot,
        p.alpha() * u2,
        s.x_cm_dot,
        s.y_cm_dot,
        0.0,
        -p.g,
    ])
}

pub fn derivatives(s: &HopperState, p: &HopperParams, u: &ControlInput) -> Result<StateVector> {
    match s.phase {
        Phase::Stance => stance_derivatives(s, p, u),
        Phase::Flight => flight_derivatives(s, p, u),
    }
}

/// Vertical 1-DOF SLIP: `m y'' = k (l0 - y) - m g` in stance, `y'' = -g` in flight.
pub fn slip_1dof_derivatives(y: f64, y_dot: f64, p: &HopperParams, phase: Phase) -> (f64, f64) {
    let y_ddot = match phase {
        Phase::Stance => p.k * (p.l0 - y) / p.m - p.g,
        Phase::Flight => -p.g,
    };
    (y_dot, y_ddot)
}

/// Angular acceleration of the reduced 2-DOF stance model, `l^2 gamma'' = g l cos(gamma)`.
///
/// This reproduces the reduced reference result literally; it drops the
/// Coriolis term carried by [`stance_derivatives`].
pub fn slip_2dof_gamma_accel(l: f64, gamma: f64, p: &HopperParams) -> Result<f64> {
    check_leg(l)?;
    Ok(p.g * gamma.cos() / l)
}

/// Ballistic mechanical energy of the CM.
pub fn flight_energy(s: &HopperState, p: &HopperParams) -> f64 {
    0.5 * p.m * (s.x_cm_dot * s.x_cm_dot + s.y_cm_dot * s.y_cm_dot) + p.m * p.g * s.y_cm
}

/// Stance energy with the standard polar kinetic term and the leg spring.
pub fn stance_energy(s: &HopperState, p: &HopperParams) -> f64 {
    let kinetic = 0.5 * p.m * (s.l_dot * s.l_dot + s.l * s.l * s.gamma_dot * s.gamma_dot);
    let spring = p.l0 - s.l;
    kinetic + p.m * p.g * s.l * s.gamma.cos() + 0.5 * p.k * spring * spring
}
