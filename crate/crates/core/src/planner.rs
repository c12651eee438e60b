//! Indirect minimum-jerk planning in flat coordinates.
//!
//! Each active flat output is a triple integrator `y''' = w`. With cost
//! `J = int w^T w dt` the Hamiltonian is `H = w^T w + P^T (A y + B w)`, the
//! costates obey `P' = -A^T P` and stationarity gives `w = -B^T P / 2`.
//! Flight plans only the leg angle (3 states + 3 costates, fixed horizon);
//! stance plans leg length and angle together (6 + 6).

use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::bvp::{self, BvpOptions, BvpProblem, BvpSolution};
use crate::error::{HopperError, Result};
use crate::flatness::{build_flat_system, flight_flat_to_controls, stance_flat_to_controls, FlatChainState, FlatControls, FlatLinearSystem};
use crate::model::{ControlInput, HopperParams, HopperState, Phase};
use crate::raibert::RaibertGains;

#[derive(Debug, Clone, PartialEq)]
pub struct CostateVector(pub Vec<f64>);

impl CostateVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }
}

fn check_len(len: usize, expected: usize) -> Result<()> {
    if len == expected {
        Ok(())
    } else {
        Err(HopperError::DimensionMismatch { expected, got: len })
    }
}

/// `H = w^T w + P^T A y + P^T B w`.
pub fn hamiltonian(y: &[f64], p: &CostateVector, w: &[f64], sys: &FlatLinearSystem) -> Result<f64> {
    check_len(p.0.len(), sys.dim())?;
    let ay = sys.apply_a(y)?;
    let bw = sys.apply_b(w)?;
    let ww: f64 = w.iter().map(|v| v * v).sum();
    Ok(ww + p.0.iter().zip(ay.iter().zip(&bw)).map(|(pk, (a, b))| pk * (a + b)).sum::<f64>())
}

/// Stationary jerk `w = -B^T P / 2`.
pub fn optimal_jerk(p: &CostateVector, sys: &FlatLinearSystem) -> Result<Vec<f64>> {
    Ok(sys.apply_bt(&p.0)?.into_iter().map(|v| -0.5 * v).collect())
}

/// Costate dynamics `P' = -A^T P`.
pub fn costate_rhs(p: &CostateVector, sys: &FlatLinearSystem) -> Result<Vec<f64>> {
    Ok(sys.apply_at(&p.0)?.into_iter().map(|v| -v).collect())
}

/// Tunables of the planner that are not part of the flat model itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Foot-placement angle gain `G_gamma` [s].
    pub g_gamma: f64,
    /// Magnitude of the leg-rate boundary values when not measured [m/s].
    pub ldot_magnitude: f64,
    /// Use `atan(y / x_f)` literally instead of the angle-from-vertical branch.
    pub height_over_offset_angle: bool,
    /// Subintervals of the initial collocation mesh.
    pub intervals: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { g_gamma: 0.05, ldot_magnitude: 0.5, height_over_offset_angle: false, intervals: 40 }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.g_gamma.is_finite() {
            return Err(HopperError::InvalidParameter { name: "g_gamma", value: self.g_gamma, reason: "must be finite" });
        }
        if !(self.ldot_magnitude.is_finite() && self.ldot_magnitude > 0.0) {
            return Err(HopperError::InvalidParameter {
                name: "ldot_magnitude",
                value: self.ldot_magnitude,
                reason: "must be positive",
            });
        }
        if self.intervals == 0 {
            return Err(HopperError::InvalidParameter { name: "intervals", value: 0.0, reason: "need at least one interval" });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanOptions {
    pub bvp: BvpOptions,
    pub intervals: usize,
    /// A free end time beyond `tf_limit_factor * tf_guess` is reported as unbounded.
    pub tf_limit_factor: f64,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self { bvp: BvpOptions::default(), intervals: 40, tf_limit_factor: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightTargets {
    pub gamma_d: f64,
    pub tf: f64,
    pub x_f: f64,
}

/// Landing leg angle for a foot offset `x_f` ahead of the CM at height `y`.
pub fn landing_angle(x_f: f64, y: f64, height_over_offset_angle: bool) -> f64 {
    if height_over_offset_angle {
        (y / x_f).atan()
    } else {
        x_f.atan2(y)
    }
}

/// Time until a ballistic CM at height `y0` rising at `y_dot0` comes down to `y_land`.
pub fn time_to_height(y0: f64, y_dot0: f64, y_land: f64, g: f64) -> Option<f64> {
    let disc = y_dot0 * y_dot0 + 2.0 * g * (y0 - y_land);
    if disc < 0.0 {
        return None;
    }
    let t = (y_dot0 + disc.sqrt()) / g;
    (t > 0.0).then_some(t)
}

/// Flight horizon and landing angle from the liftoff state: symmetric
/// projectile time `2 y' / g`, foot offset `x_f = x' tf / 2 + G (x' - x'_d)`
/// and landing at the liftoff height.
pub fn flight_targets(s: &HopperState, gains: &RaibertGains, cfg: &PlannerConfig, p: &HopperParams) -> Result<FlightTargets> {
    if !(s.y_cm_dot > 0.0) {
        return Err(HopperError::NonAscendingLiftoff { y_dot: s.y_cm_dot });
    }
    let tf = 2.0 * s.y_cm_dot / p.g;
    let x_f = s.x_cm_dot * tf / 2.0 + cfg.g_gamma * (s.x_cm_dot - gains.x_dot_d);
    let gamma_d = landing_angle(x_f, s.y_cm, cfg.height_over_offset_angle);
    Ok(FlightTargets { gamma_d, tf, x_f })
}

/// Boundary values of a stance plan. Derivatives above first order are
/// zero at both ends; the end leg-angle rate is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StanceBoundary {
    pub l_start: f64,
    pub ldot_start: f64,
    pub gamma_start: f64,
    pub gamma_dot_start: f64,
    pub l_end: f64,
    pub ldot_end: f64,
    pub gamma_end: f64,
}

impl StanceBoundary {
    /// Symmetric hop: rest length at both ends, leg angle mirrored.
    pub fn symmetric(l0: f64, gamma0: f64, ldot0: f64, ldotf: f64) -> Self {
        Self {
            l_start: l0,
            ldot_start: ldot0,
            gamma_start: gamma0,
            gamma_dot_start: 0.0,
            l_end: l0,
            ldot_end: ldotf,
            gamma_end: -gamma0,
        }
    }

    fn check_signs(&self) -> Result<()> {
        if self.ldot_start < 0.0 && self.ldot_end > 0.0 {
            Ok(())
        } else {
            Err(HopperError::SignConventionViolated { ldot0: self.ldot_start, ldotf: self.ldot_end })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlanTargets {
    Flight { gamma0: f64, gamma_d: f64 },
    Stance(StanceBoundary),
}

/// Evaluation of a plan at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanSample {
    pub t: f64,
    pub chain: FlatChainState,
    pub w1: f64,
    pub w2: f64,
    pub controls: FlatControls,
}

pub const PLAN_CSV_HEADER: [&str; 11] = ["t", "y1", "y1_dot", "y1_ddot", "y2", "y2_dot", "y2_ddot", "w1", "w2", "F", "tau"];

#[derive(Debug, Clone)]
pub struct JerkPlan {
    pub phase: Phase,
    pub targets: PlanTargets,
    pub tf: f64,
    pub solution: BvpSolution,
    sys: FlatLinearSystem,
    params: HopperParams,
}

impl JerkPlan {
    pub fn system(&self) -> &FlatLinearSystem {
        &self.sys
    }

    fn split(&self, x: &[f64]) -> (Vec<f64>, CostateVector) {
        let n = self.sys.dim();
        (x[..n].to_vec(), CostateVector(x[n..2 * n].to_vec()))
    }

    /// Flat states and costates at plan time `t`.
    pub fn state_at(&self, t: f64) -> Result<(Vec<f64>, CostateVector)> {
        let x = self.solution.eval(t)?;
        Ok(self.split(&x))
    }

    fn chain_from(&self, y: &[f64]) -> FlatChainState {
        match self.phase {
            Phase::Flight => FlatChainState {
                y1: self.params.l0,
                y1_dot: 0.0,
                y1_ddot: 0.0,
                y2: y[0],
                y2_dot: y[1],
                y2_ddot: y[2],
            },
            Phase::Stance => FlatChainState {
                y1: y[0],
                y2: y[1],
                y1_dot: y[2],
                y2_dot: y[3],
                y1_ddot: y[4],
                y2_ddot: y[5],
            },
        }
    }

    pub fn sample(&self, t: f64) -> Result<PlanSample> {
        let (y, p) = self.state_at(t)?;
        let w = optimal_jerk(&p, &self.sys)?;
        let chain = self.chain_from(&y);
        let controls = match self.phase {
            Phase::Flight => flight_flat_to_controls(&chain, &self.params),
            Phase::Stance => stance_flat_to_controls(&chain, &self.params),
        };
        let (w1, w2) = match self.phase {
            Phase::Flight => (0.0, w[0]),
            Phase::Stance => (w[0], w[1]),
        };
        Ok(PlanSample { t, chain, w1, w2, controls })
    }

    pub fn hamiltonian_at(&self, t: f64) -> Result<f64> {
        let (y, p) = self.state_at(t)?;
        let w = optimal_jerk(&p, &self.sys)?;
        hamiltonian(&y, &p, &w, &self.sys)
    }

    /// `J = int w^T w dt` by composite Simpson on `2 * panels` subintervals.
    pub fn cost(&self, panels: usize) -> Result<f64> {
        let n = 2 * panels.max(1);
        let h = self.tf / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let s = self.sample(if i == n { self.tf } else { i as f64 * h })?;
            let weight = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += weight * (s.w1 * s.w1 + s.w2 * s.w2);
        }
        Ok(acc * h / 3.0)
    }

    /// Residuals of every boundary condition the plan was solved for, in the
    /// order they were imposed (transversality excluded).
    pub fn boundary_residuals(&self) -> Vec<f64> {
        let first = &self.solution.states[0];
        let last = &self.solution.states[self.solution.states.len() - 1];
        match self.targets {
            PlanTargets::Flight { gamma0, gamma_d } => flight_bc_values(first, last, gamma0, gamma_d).to_vec(),
            PlanTargets::Stance(b) => stance_bc_values(first, last, &b).to_vec(),
        }
    }

    pub fn csv_rows(&self, samples: usize) -> Result<Vec<[f64; 11]>> {
        let n = samples.max(2);
        (0..n)
            .map(|i| {
                let t = if i + 1 == n { self.tf } else { self.tf * i as f64 / (n - 1) as f64 };
                let s = self.sample(t)?;
                let c = s.chain;
                Ok([t, c.y1, c.y1_dot, c.y1_ddot, c.y2, c.y2_dot, c.y2_ddot, s.w1, s.w2, s.controls.force, s.controls.tau])
            })
            .collect()
    }
}

fn flight_bc_values(first: &[f64], last: &[f64], gamma0: f64, gamma_d: f64) -> [f64; 6] {
    [first[0] - gamma0, first[1], first[2], last[0] - gamma_d, last[1], last[2]]
}

fn stance_bc_values(first: &[f64], last: &[f64], b: &StanceBoundary) -> [f64; 12] {
    [
        first[0] - b.l_start,
        first[1] - b.gamma_start,
        first[2] - b.ldot_start,
        first[3] - b.gamma_dot_start,
        first[4],
        first[5],
        last[0] - b.l_end,
        last[1] - b.gamma_end,
        last[2] - b.ldot_end,
        last[3],
        last[4],
        last[5],
    ]
}

/// Right-hand side of the state/costate system with the optimal jerk substituted.
fn indirect_rhs(sys: FlatLinearSystem) -> bvp::RhsFn {
    Arc::new(move |_, x, dx| {
        let n = sys.dim();
        let (y, p) = x.split_at(n);
        let p = CostateVector(p.to_vec());
        let w = optimal_jerk(&p, &sys).expect("costate length fixed by construction");
        let ay = sys.apply_a(y).expect("state length fixed by construction");
        let bw = sys.apply_b(&w).expect("jerk length fixed by construction");
        let pd = costate_rhs(&p, &sys).expect("costate length fixed by construction");
        for k in 0..n {
            dx[k] = ay[k] + bw[k];
            dx[n + k] = pd[k];
        }
    })
}

fn end_hamiltonian(sys: &FlatLinearSystem, xb: &[f64]) -> f64 {
    let n = sys.dim();
    let p = CostateVector(xb[n..2 * n].to_vec());
    let w = optimal_jerk(&p, sys).expect("costate length fixed by construction");
    hamiltonian(&xb[..n], &p, &w, sys).expect("dimensions fixed by construction")
}

fn lerp(a: f64, b: f64, s: f64) -> f64 {
    a + (b - a) * s
}

/// Rest-to-rest minimum-jerk leg-angle plan over a fixed flight horizon.
pub fn plan_flight(gamma0: f64, gamma_d: f64, tf: f64, p: &HopperParams, opts: &PlanOptions) -> Result<JerkPlan> {
    if !(tf > 0.0) || !tf.is_finite() {
        return Err(HopperError::InvalidParameter { name: "tf", value: tf, reason: "flight horizon must be positive" });
    }
    let sys = build_flat_system(1, 3)?;
    let (mesh, guess) = BvpProblem::uniform_guess(opts.intervals.max(1), 0.0, tf, |t| {
        vec![lerp(gamma0, gamma_d, t / tf), 0.0, 0.0, 0.0, 0.0, 0.0]
    });
    let problem = BvpProblem {
        dim: 6,
        rhs: indirect_rhs(sys.clone()),
        bc: Arc::new(move |xa, xb, _, r| r.copy_from_slice(&flight_bc_values(xa, xb, gamma0, gamma_d))),
        t0: 0.0,
        tf,
        free_tf: false,
        mesh,
        guess,
    };
    let solution = bvp::solve(&problem, &opts.bvp)?;
    Ok(JerkPlan {
        phase: Phase::Flight,
        targets: PlanTargets::Flight { gamma0, gamma_d },
        tf,
        solution,
        sys,
        params: *p,
    })
}

fn stance_problem(b: StanceBoundary, tf: f64, free_tf: bool, intervals: usize) -> Result<BvpProblem> {
    let sys = build_flat_system(2, 3)?;
    let (mesh, guess) = BvpProblem::uniform_guess(intervals.max(1), 0.0, tf, |t| {
        let s = t / tf;
        let mut x = vec![0.0; 12];
        x[0] = lerp(b.l_start, b.l_end, s);
        x[1] = lerp(b.gamma_start, b.gamma_end, s);
        x[2] = lerp(b.ldot_start, b.ldot_end, s);
        x[3] = lerp(b.gamma_dot_start, 0.0, s);
        x
    });
    let bc_sys = sys.clone();
    Ok(BvpProblem {
        dim: 12,
        rhs: indirect_rhs(sys),
        bc: Arc::new(move |xa, xb, _, r| {
            r[..12].copy_from_slice(&stance_bc_values(xa, xb, &b));
            if r.len() > 12 {
                r[12] = end_hamiltonian(&bc_sys, xb);
            }
        }),
        t0: 0.0,
        tf,
        free_tf,
        mesh,
        guess,
    })
}

fn stance_plan(b: StanceBoundary, solution: BvpSolution, p: &HopperParams) -> Result<JerkPlan> {
    Ok(JerkPlan {
        phase: Phase::Stance,
        targets: PlanTargets::Stance(b),
        tf: solution.tf,
        solution,
        sys: build_flat_system(2, 3)?,
        params: *p,
    })
}

/// Stance plan with free end time closed by the transversality condition
/// `H(tf) = 0`, for a symmetric hop from `(l0, gamma0)` to `(l0, -gamma0)`.
pub fn plan_stance(
    l0: f64,
    gamma0: f64,
    ldot0: f64,
    ldotf: f64,
    tf_guess: f64,
    p: &HopperParams,
    opts: &PlanOptions,
) -> Result<JerkPlan> {
    let b = StanceBoundary::symmetric(l0, gamma0, ldot0, ldotf);
    b.check_signs()?;
    let problem = stance_problem(b, tf_guess, true, opts.intervals)?;
    let solution = bvp::solve(&problem, &opts.bvp)?;
    let limit = opts.tf_limit_factor * tf_guess;
    if !(solution.tf <= limit) {
        return Err(HopperError::FinalTimeUnbounded { tf: solution.tf, limit });
    }
    stance_plan(b, solution, p)
}

/// Stance plan over a prescribed horizon `tf` (twelve boundary conditions,
/// no transversality).
pub fn plan_stance_fixed(b: StanceBoundary, tf: f64, p: &HopperParams, opts: &PlanOptions) -> Result<JerkPlan> {
    b.check_signs()?;
    if !(tf > 0.0) || !tf.is_finite() {
        return Err(HopperError::InvalidParameter { name: "tf", value: tf, reason: "stance horizon must be positive" });
    }
    let problem = stance_problem(b, tf, false, opts.intervals)?;
    let solution = bvp::solve(&problem, &opts.bvp)?;
    stance_plan(b, solution, p)
}

/// Physical controls from the plan at plan time `t`.
///
/// In flight the torque is rescaled with the measured leg length and the
/// plan commands no axial force. Times past the horizon by less than `slack`
/// are clamped to the end of the plan.
pub fn plan_to_controls(plan: &JerkPlan, t: f64, measured_l: f64, slack: f64) -> Result<ControlInput> {
    let t_eval = if t > plan.tf && t - plan.tf < slack {
        warn!("plan sampled {:.3e} s past its horizon; clamping", t - plan.tf);
        plan.tf
    } else if t < 0.0 && -t < slack {
        0.0
    } else {
        t
    };
    if !(0.0..=plan.tf).contains(&t_eval) {
        return Err(HopperError::OutOfDomain { t, t0: 0.0, tf: plan.tf });
    }
    let s = plan.sample(t_eval)?;
    Ok(match plan.phase {
        Phase::Flight => ControlInput::new(0.0, plan.params.m * measured_l * measured_l * s.chain.y2_ddot),
        Phase::Stance => ControlInput::new(s.controls.force, s.controls.tau),
    })
}
