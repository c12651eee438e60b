//! Hybrid simulation loop.
//!
//! Fixed-step RK4 with a zero-order hold on the controls. Phase changes are
//! located inside a step by bisection on the linear interpolation of the
//! step; the remainder of the step is then integrated in the new phase so
//! that logged records stay on a uniform time grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HopperError, Result};
use crate::model::{derivatives, idx, polar_from_cm, ControlInput, HopperParams, HopperState, Phase, StateVector};
use crate::planner::{landing_angle, plan_flight, plan_stance_fixed, plan_to_controls, time_to_height, JerkPlan, PlanOptions, PlannerConfig, StanceBoundary};
use crate::raibert::{raibert_step, RaibertGains};

pub const TRAJECTORY_CSV_HEADER: [&str; 15] = [
    "t", "phase", "l", "l_dot", "gamma", "gamma_dot", "psi", "psi_dot", "x_cm", "y_cm", "x_cm_dot", "y_cm_dot", "F", "tau",
    "jerk_gamma",
];
pub const EVENTS_CSV_HEADER: [&str; 2] = ["t", "event"];

const EVENT_TOL: f64 = 1e-10;
const BISECTION_LIMIT: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Raibert,
    #[serde(rename = "bvp")]
    JerkBvp,
}

impl ControllerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::Raibert => "raibert",
            ControllerKind::JerkBvp => "bvp",
        }
    }
}

/// Reference values handed to both controllers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct References {
    /// CM height at the flight apex [m].
    pub apex_height: f64,
    pub x_dot_d: f64,
    pub psi_d: f64,
}

impl Default for References {
    fn default() -> Self {
        Self { apex_height: 1.2, x_dot_d: 0.3, psi_d: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    /// Stop at the apex following this many liftoffs.
    pub hops: usize,
    /// Hard stop on simulated time [s].
    pub max_duration: f64,
    pub sigma_process: f64,
    pub sigma_measurement: f64,
    pub seed: u64,
    pub controller: ControllerKind,
    pub references: References,
    pub planner: PlannerConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            hops: 2,
            max_duration: 30.0,
            sigma_process: 1e-3,
            sigma_measurement: 1e-3,
            seed: 0,
            controller: ControllerKind::Raibert,
            references: References::default(),
            planner: PlannerConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(HopperError::InvalidParameter { name: "dt", value: self.dt, reason: "step must be positive" });
        }
        if !(self.max_duration.is_finite() && self.max_duration > 0.0) {
            return Err(HopperError::InvalidParameter {
                name: "max_duration",
                value: self.max_duration,
                reason: "must be positive",
            });
        }
        for (name, value) in [("sigma_process", self.sigma_process), ("sigma_measurement", self.sigma_measurement)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(HopperError::InvalidParameter { name, value, reason: "noise level must be non-negative" });
            }
        }
        let r = &self.references;
        for (name, value) in [("apex_height", r.apex_height), ("x_dot_d", r.x_dot_d), ("psi_d", r.psi_d)] {
            if !value.is_finite() {
                return Err(HopperError::InvalidParameter { name, value, reason: "must be finite" });
            }
        }
        self.planner.validate()
    }

    pub fn noise_free(mut self) -> Self {
        self.sigma_process = 0.0;
        self.sigma_measurement = 0.0;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Touchdown,
    Liftoff,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Touchdown => "touchdown",
            EventKind::Liftoff => "liftoff",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "touchdown" => Some(EventKind::Touchdown),
            "liftoff" => Some(EventKind::Liftoff),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

/// One grid sample: the true state, the control evaluated at it,
/// the EOM leg-angle acceleration and its central-difference jerk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub state: HopperState,
    pub control: ControlInput,
    pub gamma_ddot: f64,
    /// NaN at the two ends of the series.
    pub jerk_gamma: f64,
}

impl Record {
    pub fn t(&self) -> f64 {
        self.state.t
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }
}

/// Summary of one plan made during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanRecord {
    pub t: f64,
    pub phase: Phase,
    pub tf: f64,
    pub boundary_residual: f64,
    pub iterations: usize,
}

pub const PLANS_CSV_HEADER: [&str; 5] = ["t", "phase", "tf", "boundary_residual", "iterations"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub records: Vec<Record>,
    pub events: Vec<Event>,
    pub plans: Vec<PlanRecord>,
}

impl Trajectory {
    pub fn hops(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EventKind::Liftoff).count()
    }

    pub fn metrics(&self) -> Metrics {
        Metrics::compute(&self.records, &self.plans, self.dt)
    }
}

/// Run summary; a pure function of the logged records and plans.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub peak_stance_jerk: f64,
    pub rms_stance_jerk: f64,
    pub peak_tau: f64,
    pub peak_force: f64,
    /// `sum (F^2 + tau^2) dt` over the records.
    pub control_effort: f64,
    /// Highest CM height of every flight segment.
    pub apex_heights: Vec<f64>,
    pub mean_forward_speed: f64,
    pub max_boundary_residual: f64,
    pub boundary_residuals: Vec<f64>,
}

impl Metrics {
    pub fn compute(records: &[Record], plans: &[PlanRecord], dt: f64) -> Self {
        let stance_jerk: Vec<f64> = records
            .iter()
            .filter(|r| r.phase() == Phase::Stance && r.jerk_gamma.is_finite())
            .map(|r| r.jerk_gamma)
            .collect();
        let peak_stance_jerk = stance_jerk.iter().fold(0.0f64, |m, j| m.max(j.abs()));
        let rms_stance_jerk = if stance_jerk.is_empty() {
            0.0
        } else {
            (stance_jerk.iter().map(|j| j * j).sum::<f64>() / stance_jerk.len() as f64).sqrt()
        };
        let peak_tau = records.iter().fold(0.0f64, |m, r| m.max(r.control.tau.abs()));
        let peak_force = records.iter().fold(0.0f64, |m, r| m.max(r.control.force.abs()));
        let control_effort =
            records.iter().map(|r| r.control.force * r.control.force + r.control.tau * r.control.tau).sum::<f64>() * dt;

        let mut apex_heights = Vec::new();
        let mut current: Option<f64> = None;
        for r in records {
            match r.phase() {
                Phase::Flight => current = Some(current.map_or(r.state.y_cm, |h| h.max(r.state.y_cm))),
                Phase::Stance => apex_heights.extend(current.take()),
            }
        }
        apex_heights.extend(current);

        let mean_forward_speed = if records.is_empty() {
            0.0
        } else {
            records.iter().map(|r| r.state.x_cm_dot).sum::<f64>() / records.len() as f64
        };
        let boundary_residuals: Vec<f64> = plans.iter().map(|p| p.boundary_residual).collect();
        let max_boundary_residual = boundary_residuals.iter().fold(0.0f64, |m, v| m.max(*v));
        Self {
            peak_stance_jerk,
            rms_stance_jerk,
            peak_tau,
            peak_force,
            control_effort,
            apex_heights,
            mean_forward_speed,
            max_boundary_residual,
            boundary_residuals,
        }
    }
}

/// Classical four-stage Runge-Kutta step.
pub fn rk4_step<F>(rhs: F, t: f64, x: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    if !(dt > 0.0) {
        return Err(HopperError::InvalidParameter { name: "dt", value: dt, reason: "step must be positive" });
    }
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect() };
    let k1 = rhs(t, x)?;
    let k2 = rhs(t + dt / 2.0, &axpy(dt / 2.0, &k1))?;
    let k3 = rhs(t + dt / 2.0, &axpy(dt / 2.0, &k2))?;
    let k4 = rhs(t + dt, &axpy(dt, &k3))?;
    let next: Vec<f64> = (0..x.len()).map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(HopperError::NonFiniteState)
    }
}

/// Linear interpolation between two samples of the same phase.
pub fn interpolate(a: &HopperState, b: &HopperState, t: f64) -> HopperState {
    let span = b.t - a.t;
    let s = if span > 0.0 { (t - a.t) / span } else { 0.0 };
    let (va, vb) = (a.to_vector(), b.to_vector());
    let mut v = va;
    for i in 0..v.len() {
        v[i] = va[i] + s * (vb[i] - va[i]);
    }
    a.with_vector(&v, t)
}

/// Bisection for the zero of `guard` on the interpolated step, given a sign
/// change `guard(a) > 0 >= guard(b)`.
fn locate(a: &HopperState, b: &HopperState, guard: impl Fn(&HopperState) -> f64) -> f64 {
    let (mut lo, mut hi) = (a.t, b.t);
    for _ in 0..BISECTION_LIMIT {
        let mid = 0.5 * (lo + hi);
        let g = guard(&interpolate(a, b, mid));
        if g.abs() <= EVENT_TOL {
            return mid;
        }
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Touchdown: the foot height falls through zero while the CM descends.
pub fn detect_touchdown(prev: &HopperState, next: &HopperState) -> Option<f64> {
    let (h0, h1) = (prev.foot_height(), next.foot_height());
    if h0 > 0.0 && h1 <= 0.0 && next.y_cm_dot < 0.0 {
        Some(locate(prev, next, HopperState::foot_height))
    } else {
        None
    }
}

/// Liftoff: the leg extends through rest length (spring force reaches zero).
pub fn detect_liftoff(prev: &HopperState, next: &HopperState, p: &HopperParams) -> Option<f64> {
    if prev.l < p.l0 && next.l >= p.l0 && next.l_dot > 0.0 {
        Some(locate(prev, next, |s| p.l0 - s.l))
    } else {
        None
    }
}

/// Velocity states perturbed by process noise in each phase. In stance the
/// CM velocity follows from the polar rates; in flight the leg length is
/// not actuated and is left alone.
fn process_noise_indices(phase: Phase) -> &'static [usize] {
    match phase {
        Phase::Stance => &[idx::L_DOT, idx::GAMMA_DOT, idx::PSI_DOT],
        Phase::Flight => &[idx::GAMMA_DOT, idx::PSI_DOT, idx::X_DOT, idx::Y_DOT],
    }
}

/// Returns `(process-perturbed state, measured state)`.
///
/// Process noise is `sigma_process * sqrt(dt)` on the velocity states;
/// measurement noise is `sigma_measurement` on every state entry and never
/// feeds back into the dynamics.
pub fn inject_noise(s: &HopperState, config: &SimConfig, rng: &mut ChaCha8Rng) -> (HopperState, HopperState) {
    let mut v = s.to_vector();
    if config.sigma_process > 0.0 {
        let scale = config.sigma_process * config.dt.sqrt();
        for &i in process_noise_indices(s.phase) {
            let z: f64 = StandardNormal.sample(rng);
            v[i] += scale * z;
        }
    }
    let mut processed = s.with_vector(&v, s.t);
    if s.phase == Phase::Stance && config.sigma_process > 0.0 {
        processed.sync_cm_from_polar();
    }
    let measured = measure(&processed, config.sigma_measurement, rng);
    (processed, measured)
}

fn measure(s: &HopperState, sigma: f64, rng: &mut ChaCha8Rng) -> HopperState {
    if sigma == 0.0 {
        return *s;
    }
    let mut m = s.to_vector();
    for entry in m.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *entry += sigma * z;
    }
    s.with_vector(&m, s.t)
}

/// `j_i = (a_{i+1} - a_{i-1}) / (2 dt)`; length `n - 2`.
pub fn central_diff_jerk(series: &[f64], dt: f64) -> Result<Vec<f64>> {
    if series.len() < 3 {
        return Err(HopperError::TooFewSamples { needed: 3, got: series.len() });
    }
    if !(dt > 0.0) {
        return Err(HopperError::InvalidParameter { name: "dt", value: dt, reason: "step must be positive" });
    }
    Ok(series.windows(3).map(|w| (w[2] - w[0]) / (2.0 * dt)).collect())
}

/// One RK4 step with the control law evaluated at every stage.
fn integrate<C>(s: &HopperState, p: &HopperParams, dt: f64, control: C) -> Result<HopperState>
where
    C: Fn(&HopperState) -> Result<ControlInput>,
{
    let template = *s;
    let rhs = |t: f64, x: &[f64]| -> Result<Vec<f64>> {
        let v: StateVector = x.try_into().map_err(|_| HopperError::DimensionMismatch { expected: 10, got: x.len() })?;
        let stage = template.with_vector(&v, t);
        Ok(derivatives(&stage, p, &control(&stage)?)?.to_vec())
    };
    let next = rk4_step(rhs, s.t, &s.to_vector(), dt)?;
    let v: StateVector = next.as_slice().try_into().expect("length preserved by rk4_step");
    let mut out = s.with_vector(&v, s.t + dt);
    if out.phase == Phase::Stance {
        out.sync_cm_from_polar();
    }
    Ok(out)
}

/// Shifts `stage` by the measurement error `measured - truth` of the step.
fn offset_by(stage: &HopperState, truth: &HopperState, measured: &HopperState) -> HopperState {
    let (st, tr, me) = (stage.to_vector(), truth.to_vector(), measured.to_vector());
    let mut v = st;
    for i in 0..v.len() {
        v[i] = st[i] + (me[i] - tr[i]);
    }
    stage.with_vector(&v, stage.t)
}

fn touchdown_transition(s: &HopperState) -> HopperState {
    let mut out = *s;
    out.phase = Phase::Stance;
    out.foot_x = s.x_cm + s.l * s.gamma.sin();
    let (l, l_dot, gamma, gamma_dot) = polar_from_cm(s.x_cm - out.foot_x, s.y_cm, s.x_cm_dot, s.y_cm_dot);
    out.l = l;
    out.l_dot = l_dot;
    out.gamma = gamma;
    out.gamma_dot = gamma_dot;
    out
}

/// The flight model has no axial dynamics, so the leg stops extending at
/// liftoff and is held at rest length.
fn liftoff_transition(s: &HopperState, p: &HopperParams) -> HopperState {
    let mut out = *s;
    out.phase = Phase::Flight;
    out.l = p.l0;
    out.l_dot = 0.0;
    out
}

struct BvpController {
    plan: JerkPlan,
    start: f64,
}

enum Controller {
    Raibert,
    Bvp(Option<BvpController>),
}

struct Context<'a> {
    config: &'a SimConfig,
    params: &'a HopperParams,
    gains: RaibertGains,
    opts: PlanOptions,
}

impl Context<'_> {
    /// Flight horizon and landing angle from the measured state. The landing
    /// CM height depends on the landing angle, which depends on the horizon,
    /// so the pair is found by fixed-point iteration.
    fn flight_targets(&self, m: &HopperState) -> Result<(f64, f64)> {
        let p = self.params;
        let cfg = &self.config.planner;
        let mut gamma_d = 0.0f64;
        let mut tf = 0.0;
        for _ in 0..50 {
            let y_land = p.l0 * gamma_d.cos();
            tf = time_to_height(m.y_cm, m.y_cm_dot, y_land, p.g).ok_or(HopperError::InvalidParameter {
                name: "y_cm",
                value: m.y_cm,
                reason: "CM cannot reach the landing height",
            })?;
            let x_f = m.x_cm_dot * tf / 2.0 + cfg.g_gamma * (m.x_cm_dot - self.config.references.x_dot_d);
            let next = landing_angle(x_f, y_land, cfg.height_over_offset_angle);
            let done = (next - gamma_d).abs() < 1e-13;
            gamma_d = next;
            if done {
                break;
            }
        }
        Ok((tf, gamma_d))
    }

    fn stance_boundary(&self, m: &HopperState) -> StanceBoundary {
        let p = self.params;
        let rise = 2.0 * p.g * (self.config.references.apex_height - p.l0 * m.gamma.cos());
        let ldot_end =
            if rise > 0.0 { rise.sqrt() / m.gamma.cos() } else { self.config.planner.ldot_magnitude };
        StanceBoundary {
            l_start: m.l,
            ldot_start: m.l_dot,
            gamma_start: m.gamma,
            gamma_dot_start: m.gamma_dot,
            l_end: p.l0,
            ldot_end,
            gamma_end: -m.gamma,
        }
    }

    fn plan(&self, m: &HopperState) -> Result<JerkPlan> {
        match m.phase {
            Phase::Flight => {
                let (tf, gamma_d) = self.flight_targets(m)?;
                plan_flight(m.gamma, gamma_d, tf, self.params, &self.opts)
            }
            Phase::Stance => plan_stance_fixed(self.stance_boundary(m), self.gains.t_s, self.params, &self.opts),
        }
    }

    fn replan(&self, controller: &mut Controller, m: &HopperState, event: &str, plans: &mut Vec<PlanRecord>) -> Result<()> {
        if let Controller::Bvp(slot) = controller {
            let plan = self.plan(m).map_err(|e| HopperError::PlanFailure { t: m.t, event: event.to_string(), source: Box::new(e) })?;
            let boundary_residual = plan.boundary_residuals().iter().fold(0.0f64, |a, r| a.max(r.abs()));
            plans.push(PlanRecord {
                t: m.t,
                phase: plan.phase,
                tf: plan.tf,
                boundary_residual,
                iterations: plan.solution.iterations,
            });
            *slot = Some(BvpController { plan, start: m.t });
        }
        Ok(())
    }

    fn control(&self, controller: &Controller, m: &HopperState) -> Result<ControlInput> {
        match controller {
            Controller::Raibert => raibert_step(m, &self.gains, self.params),
            Controller::Bvp(Some(c)) => {
                // hold the end of the plan until the phase actually changes
                let t = (m.t - c.start).clamp(0.0, c.plan.tf);
                plan_to_controls(&c.plan, t, m.l, 0.0)
            }
            Controller::Bvp(None) => Ok(ControlInput::default()),
        }
    }
}

fn diverged(s: &HopperState, p: &HopperParams) -> bool {
    !s.is_finite() || s.y_cm < 0.0 || s.l <= 0.05 * p.l0 || (s.phase == Phase::Stance && s.gamma.abs() >= std::f64::consts::FRAC_PI_2)
}

/// Runs the hybrid simulation from the reference apex.
///
/// On failure the records logged so far are returned alongside the error.
pub fn run_partial(config: &SimConfig, p: &HopperParams, gains: &RaibertGains) -> (Trajectory, Option<HopperError>) {
    let mut traj = Trajectory { dt: config.dt, ..Default::default() };
    let error = simulate(config, p, gains, &mut traj).err();
    fill_jerk(&mut traj);
    (traj, error)
}

pub fn run(config: &SimConfig, p: &HopperParams, gains: &RaibertGains) -> Result<Trajectory> {
    config.validate()?;
    p.validate()?;
    gains.validate()?;
    match run_partial(config, p, gains) {
        (traj, None) => Ok(traj),
        (_, Some(e)) => Err(e),
    }
}

fn fill_jerk(traj: &mut Trajectory) {
    let accel: Vec<f64> = traj.records.iter().map(|r| r.gamma_ddot).collect();
    if let Ok(jerk) = central_diff_jerk(&accel, traj.dt) {
        for (r, j) in traj.records[1..].iter_mut().zip(jerk) {
            r.jerk_gamma = j;
        }
    }
}

fn simulate(config: &SimConfig, p: &HopperParams, gains: &RaibertGains, traj: &mut Trajectory) -> Result<()> {
    config.validate()?;
    p.validate()?;
    gains.validate()?;
    let gains = RaibertGains { x_dot_d: config.references.x_dot_d, psi_d: config.references.psi_d, ..*gains };
    let ctx = Context {
        config,
        params: p,
        gains,
        opts: PlanOptions { intervals: config.planner.intervals, ..Default::default() },
    };
    let mut controller = match config.controller {
        ControllerKind::Raibert => Controller::Raibert,
        ControllerKind::JerkBvp => Controller::Bvp(None),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut s = HopperState::apex(p, config.references.apex_height, 0.0);
    s.psi = config.references.psi_d;
    ctx.replan(&mut controller, &s, "start", &mut traj.plans)?;

    let steps = (config.max_duration / config.dt).ceil() as usize;
    let mut liftoffs = 0usize;
    for k in 0..steps {
        let t = k as f64 * config.dt;
        s.t = t;
        let (processed, measured) = inject_noise(&s, config, &mut rng);
        s = processed;
        let u = ctx.control(&controller, &measured)?;
        let gamma_ddot = derivatives(&s, p, &u)?[idx::GAMMA_DOT];
        traj.records.push(Record { state: s, control: u, gamma_ddot, jerk_gamma: f64::NAN });

        if liftoffs >= config.hops && s.phase == Phase::Flight && s.y_cm_dot <= 0.0 {
            return Ok(());
        }

        let t_next = (k + 1) as f64 * config.dt;
        let truth = s;
        let mut next = integrate(&s, p, config.dt, |stage| ctx.control(&controller, &offset_by(stage, &truth, &measured)))?;
        next.t = t_next;
        let event = match s.phase {
            Phase::Flight => detect_touchdown(&s, &next).map(|te| (te, EventKind::Touchdown)),
            Phase::Stance => detect_liftoff(&s, &next, p).map(|te| (te, EventKind::Liftoff)),
        };
        if let Some((te, kind)) = event {
            let at = interpolate(&s, &next, te);
            let switched = match kind {
                EventKind::Touchdown => touchdown_transition(&at),
                EventKind::Liftoff => liftoff_transition(&at, p),
            };
            traj.events.push(Event { t: te, kind });
            if kind == EventKind::Liftoff {
                liftoffs += 1;
            }
            let m = measure(&switched, config.sigma_measurement, &mut rng);
            ctx.replan(&mut controller, &m, kind.as_str(), &mut traj.plans)?;
            next = if t_next - te > 0.0 {
                integrate(&switched, p, t_next - te, |stage| ctx.control(&controller, &offset_by(stage, &switched, &m)))?
            } else {
                switched
            };
            next.t = t_next;
        }
        if diverged(&next, p) {
            return Err(HopperError::SimulationDiverged { t: t_next });
        }
        s = next;
    }
    Ok(())
}
