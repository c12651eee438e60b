//! Two-point boundary value solver: three-stage Lobatto IIIa collocation
//! (Simpson's rule with a cubic Hermite interpolant) on an adaptively
//! bisected mesh, solved by damped Newton iteration.
//!
//! On each subinterval `[t_i, t_i + h]` the unknown nodal states must satisfy
//!
//! ```text
//! x_mid = (x_i + x_{i+1}) / 2 + h / 8 (f_i - f_{i+1})
//! 0     = x_{i+1} - x_i - h / 6 (f_i + 4 f(t_mid, x_mid) + f_{i+1})
//! ```
//!
//! The linearised system is almost block diagonal (interval rows couple two
//! neighbouring nodes, boundary rows couple the two ends); it is solved by
//! block elimination with row pivoting, carrying a dense column for the last
//! node.
//!
//! Free end-time problems are mapped onto `[0, 1]` with the end time
//! appended as a constant extra state before solving.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub type RhsFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// Boundary residual `bc(x(t0), x(tf), tf, out)`.
pub type BcFn = Arc<dyn Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BvpError {
    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular collocation Jacobian")]
    SingularJacobian,
    #[error("mesh would exceed {limit} points")]
    MeshLimitExceeded { limit: usize },
    #[error("invalid initial guess: {0}")]
    InvalidGuess(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("t = {t} is outside [{t0}, {tf}]")]
    OutOfDomain { t: f64, t0: f64, tf: f64 },
}

pub type BvpResult<T> = std::result::Result<T, BvpError>;

#[derive(Clone)]
pub struct BvpProblem {
    pub dim: usize,
    pub rhs: RhsFn,
    pub bc: BcFn,
    pub t0: f64,
    /// End time; the initial guess for it when `free_tf` is set.
    pub tf: f64,
    pub free_tf: bool,
    /// Initial mesh on `[t0, tf]`, strictly increasing.
    pub mesh: Vec<f64>,
    /// Guessed state at each mesh node.
    pub guess: Vec<Vec<f64>>,
}

impl fmt::Debug for BvpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BvpProblem")
            .field("dim", &self.dim)
            .field("t0", &self.t0)
            .field("tf", &self.tf)
            .field("free_tf", &self.free_tf)
            .field("mesh_points", &self.mesh.len())
            .finish()
    }
}

impl BvpProblem {
    pub fn bc_len(&self) -> usize {
        self.dim + usize::from(self.free_tf)
    }

    /// Uniform mesh of `intervals` subintervals with a state guess built from
    /// `guess(t)`.
    pub fn uniform_guess(intervals: usize, t0: f64, tf: f64, guess: impl Fn(f64) -> Vec<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mesh: Vec<f64> = (0..=intervals)
            .map(|i| if i == intervals { tf } else { t0 + (tf - t0) * i as f64 / intervals as f64 })
            .collect();
        let states = mesh.iter().map(|&t| guess(t)).collect();
        (mesh, states)
    }

    fn validate(&self) -> BvpResult<()> {
        if self.dim == 0 {
            return Err(BvpError::InvalidProblem("dimension must be positive".into()));
        }
        if self.mesh.len() < 2 {
            return Err(BvpError::InvalidGuess("mesh needs at least two points".into()));
        }
        if self.mesh.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(BvpError::InvalidGuess("mesh must be strictly increasing".into()));
        }
        if self.guess.len() != self.mesh.len() || self.guess.iter().any(|x| x.len() != self.dim) {
            return Err(BvpError::InvalidGuess("guess does not match mesh and dimension".into()));
        }
        if self.guess.iter().flatten().any(|v| !v.is_finite()) {
            return Err(BvpError::InvalidGuess("guess contains non-finite values".into()));
        }
        let (first, last) = (self.mesh[0], self.mesh[self.mesh.len() - 1]);
        if (first - self.t0).abs() > 1e-12 * (1.0 + self.t0.abs()) || (last - self.tf).abs() > 1e-12 * (1.0 + self.tf.abs()) {
            return Err(BvpError::InvalidGuess("mesh must span [t0, tf]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvpOptions {
    pub bc_tol: f64,
    pub defect_tol: f64,
    /// Relative tolerance on the collocation equations for Newton termination.
    pub newton_tol: f64,
    pub max_newton_iterations: usize,
    pub max_mesh_points: usize,
    pub refine: bool,
}

impl Default for BvpOptions {
    fn default() -> Self {
        Self {
            bc_tol: 1e-8,
            defect_tol: 1e-6,
            newton_tol: 1e-11,
            max_newton_iterations: 50,
            max_mesh_points: 2000,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvpSolution {
    pub mesh: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
    pub t0: f64,
    pub tf: f64,
    /// Largest relative collocation defect over all subintervals.
    pub max_residual: f64,
    /// Largest absolute boundary residual.
    pub bc_residual: f64,
    /// Newton iterations summed over all mesh refinements.
    pub iterations: usize,
}

impl BvpSolution {
    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    fn locate(&self, t: f64) -> BvpResult<usize> {
        let slack = 1e-12 * (1.0 + self.tf.abs().max(self.t0.abs()));
        if !(t >= self.t0 - slack && t <= self.tf + slack) {
            return Err(BvpError::OutOfDomain { t, t0: self.t0, tf: self.tf });
        }
        let n = self.mesh.len();
        let i = self.mesh.partition_point(|&m| m <= t);
        Ok(i.clamp(1, n - 1) - 1)
    }

    /// Cubic Hermite dense output.
    pub fn eval(&self, t: f64) -> BvpResult<Vec<f64>> {
        let i = self.locate(t)?;
        let (t_a, t_b) = (self.mesh[i], self.mesh[i + 1]);
        if t == t_a {
            return Ok(self.states[i].clone());
        }
        if t == t_b {
            return Ok(self.states[i + 1].clone());
        }
        Ok(hermite(t_a, t_b, &self.states[i], &self.states[i + 1], &self.derivs[i], &self.derivs[i + 1], t))
    }

    /// Time derivative of the dense output.
    pub fn eval_derivative(&self, t: f64) -> BvpResult<Vec<f64>> {
        let i = self.locate(t)?;
        let (t_a, t_b) = (self.mesh[i], self.mesh[i + 1]);
        if t == t_a {
            return Ok(self.derivs[i].clone());
        }
        if t == t_b {
            return Ok(self.derivs[i + 1].clone());
        }
        Ok(hermite_derivative(t_a, t_b, &self.states[i], &self.states[i + 1], &self.derivs[i], &self.derivs[i + 1], t))
    }

    /// Right-hand side values stored at the mesh nodes.
    pub fn node_derivatives(&self) -> &[Vec<f64>] {
        &self.derivs
    }
}

fn hermite(t_a: f64, t_b: f64, xa: &[f64], xb: &[f64], fa: &[f64], fb: &[f64], t: f64) -> Vec<f64> {
    let h = t_b - t_a;
    let s = (t - t_a) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    (0..xa.len())
        .map(|k| h00 * xa[k] + h * h10 * fa[k] + h01 * xb[k] + h * h11 * fb[k])
        .collect()
}

fn hermite_derivative(t_a: f64, t_b: f64, xa: &[f64], xb: &[f64], fa: &[f64], fb: &[f64], t: f64) -> Vec<f64> {
    let h = t_b - t_a;
    let s = (t - t_a) / h;
    let s2 = s * s;
    let d00 = (6.0 * s2 - 6.0 * s) / h;
    let d10 = 3.0 * s2 - 4.0 * s + 1.0;
    let d01 = (-6.0 * s2 + 6.0 * s) / h;
    let d11 = 3.0 * s2 - 2.0 * s;
    (0..xa.len())
        .map(|k| d00 * xa[k] + d10 * fa[k] + d01 * xb[k] + d11 * fb[k])
        .collect()
}

/// Rescales a free end-time problem onto `s in [0, 1]`, appending the end
/// time as a constant state: `dx/ds = (T - t0) f(t0 + s (T - t0), x)`, `dT/ds = 0`.
/// Fixed-time problems are returned unchanged.
pub fn to_standard_form(problem: &BvpProblem) -> BvpResult<BvpProblem> {
    if !problem.free_tf {
        return Ok(problem.clone());
    }
    let t0 = problem.t0;
    let tf_guess = problem.tf;
    if !(tf_guess > t0) || !tf_guess.is_finite() {
        return Err(BvpError::InvalidGuess(format!("end-time guess {tf_guess} must exceed t0 = {t0}")));
    }
    let n = problem.dim;
    let rhs = problem.rhs.clone();
    let bc = problem.bc.clone();
    let span = tf_guess - t0;
    let mesh: Vec<f64> = problem.mesh.iter().map(|&t| (t - t0) / span).collect();
    let mesh_len = mesh.len();
    let mesh = mesh
        .into_iter()
        .enumerate()
        .map(|(i, s)| if i == 0 { 0.0 } else if i + 1 == mesh_len { 1.0 } else { s })
        .collect();
    let guess = problem
        .guess
        .iter()
        .map(|x| {
            let mut y = x.clone();
            y.push(tf_guess);
            y
        })
        .collect();
    Ok(BvpProblem {
        dim: n + 1,
        rhs: Arc::new(move |s, y, dy| {
            let end = y[n];
            let scale = end - t0;
            rhs(t0 + s * scale, &y[..n], &mut dy[..n]);
            for v in &mut dy[..n] {
                *v *= scale;
            }
            dy[n] = 0.0;
        }),
        bc: Arc::new(move |ya, yb, _, res| {
            bc(&ya[..n], &yb[..n], yb[n], res);
        }),
        t0: 0.0,
        tf: 1.0,
        free_tf: false,
        mesh,
        guess,
    })
}

/// Maps a solution of the rescaled problem back to physical time.
fn from_standard_form(sol: BvpSolution, t0: f64, dim: usize) -> BvpSolution {
    let end = sol.states[0][dim];
    let scale = end - t0;
    let last = sol.mesh.len() - 1;
    let mesh = sol
        .mesh
        .iter()
        .enumerate()
        .map(|(i, &s)| if i == last { end } else { t0 + s * scale })
        .collect();
    let states = sol.states.iter().map(|y| y[..dim].to_vec()).collect();
    let derivs = sol.derivs.iter().map(|f| f[..dim].iter().map(|v| v / scale).collect()).collect();
    BvpSolution { mesh, states, derivs, t0, tf: end, ..sol }
}

pub fn solve(problem: &BvpProblem, opts: &BvpOptions) -> BvpResult<BvpSolution> {
    problem.validate()?;
    if problem.free_tf {
        let standard = to_standard_form(problem)?;
        let sol = solve_fixed(&standard, opts)?;
        Ok(from_standard_form(sol, problem.t0, problem.dim))
    } else {
        solve_fixed(problem, opts)
    }
}

struct Collocation<'a> {
    problem: &'a BvpProblem,
    mesh: Vec<f64>,
}

impl Collocation<'_> {
    fn n(&self) -> usize {
        self.problem.dim
    }

    fn f(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        (self.problem.rhs)(t, x, &mut out);
        out
    }

    fn interval_residual(&self, i: usize, xa: &[f64], xb: &[f64]) -> Vec<f64> {
        let (t_a, t_b) = (self.mesh[i], self.mesh[i + 1]);
        let h = t_b - t_a;
        let fa = self.f(t_a, xa);
        let fb = self.f(t_b, xb);
        let x_mid: Vec<f64> = (0..xa.len())
            .map(|k| 0.5 * (xa[k] + xb[k]) + h / 8.0 * (fa[k] - fb[k]))
            .collect();
        let fm = self.f(t_a + 0.5 * h, &x_mid);
        (0..xa.len())
            .map(|k| xb[k] - xa[k] - h / 6.0 * (fa[k] + 4.0 * fm[k] + fb[k]))
            .collect()
    }

    fn bc_residual(&self, x: &[Vec<f64>]) -> Vec<f64> {
        let mut res = vec![0.0; self.n()];
        let tf = self.mesh[self.mesh.len() - 1];
        (self.problem.bc)(&x[0], &x[x.len() - 1], tf, &mut res);
        res
    }

    fn residuals(&self, x: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let bc = self.bc_residual(x);
        let intervals = (0..self.mesh.len() - 1).map(|i| self.interval_residual(i, &x[i], &x[i + 1])).collect();
        (bc, intervals)
    }

    /// Relative interior defect `|S' - f(t, S)| / (1 + |f| + |S| / T)` at the
    /// quarter points of each subinterval, `T` being the interval length.
    /// Simpson collocation makes the defect vanish at the nodes and the
    /// midpoint, so those points carry no information.
    fn defects(&self, x: &[Vec<f64>], derivs: &[Vec<f64>]) -> Vec<f64> {
        let span = self.mesh[self.mesh.len() - 1] - self.mesh[0];
        (0..self.mesh.len() - 1)
            .map(|i| {
                let (t_a, t_b) = (self.mesh[i], self.mesh[i + 1]);
                let mut worst = 0.0f64;
                for frac in [0.25, 0.75] {
                    let t = t_a + frac * (t_b - t_a);
                    let s = hermite(t_a, t_b, &x[i], &x[i + 1], &derivs[i], &derivs[i + 1], t);
                    let ds = hermite_derivative(t_a, t_b, &x[i], &x[i + 1], &derivs[i], &derivs[i + 1], t);
                    let f = self.f(t, &s);
                    for k in 0..s.len() {
                        worst = worst.max((ds[k] - f[k]).abs() / (1.0 + f[k].abs() + s[k].abs() / span));
                    }
                }
                worst
            })
            .collect()
    }
}

fn residual_norm(bc: &[f64], intervals: &[Vec<f64>]) -> f64 {
    bc.iter().chain(intervals.iter().flatten()).map(|v| v * v).sum::<f64>().sqrt()
}

fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn component_scale(colloc: &Collocation<'_>, x: &[Vec<f64>]) -> Vec<f64> {
    let h_max = colloc.mesh.windows(2).fold(0.0f64, |m, w| m.max(w[1] - w[0]));
    let mut scale = vec![1.0f64; x[0].len()];
    for (t, xi) in colloc.mesh.iter().zip(x) {
        let f = colloc.f(*t, xi);
        for ((s, v), d) in scale.iter_mut().zip(xi).zip(&f) {
            *s = (*s).max(1.0 + v.abs() + h_max * d.abs());
        }
    }
    scale
}

fn fd_step(x: f64) -> f64 {
    f64::EPSILON.sqrt() * (1.0 + x.abs())
}

fn solve_fixed(problem: &BvpProblem, opts: &BvpOptions) -> BvpResult<BvpSolution> {
    let mut colloc = Collocation { problem, mesh: problem.mesh.clone() };
    let mut x = problem.guess.clone();
    let mut iterations = 0;
    loop {
        iterations += newton(&colloc, &mut x, opts)?;
        let derivs: Vec<Vec<f64>> = colloc.mesh.iter().zip(&x).map(|(&t, xi)| colloc.f(t, xi)).collect();
        let defects = colloc.defects(&x, &derivs);
        let max_defect = max_abs(defects.iter().copied());
        if !opts.refine || max_defect <= opts.defect_tol {
            let bc_residual = max_abs(colloc.bc_residual(&x));
            if bc_residual > opts.bc_tol {
                return Err(BvpError::NoConvergence { iterations, residual: bc_residual });
            }
            return Ok(BvpSolution {
                t0: colloc.mesh[0],
                tf: colloc.mesh[colloc.mesh.len() - 1],
                mesh: colloc.mesh,
                states: x,
                derivs,
                max_residual: max_defect,
                bc_residual,
                iterations,
            });
        }
        let extra = defects.iter().filter(|d| **d > opts.defect_tol).count();
        if colloc.mesh.len() + extra > opts.max_mesh_points {
            return Err(BvpError::MeshLimitExceeded { limit: opts.max_mesh_points });
        }
        let mut mesh = Vec::with_capacity(colloc.mesh.len() + extra);
        let mut states = Vec::with_capacity(colloc.mesh.len() + extra);
        for i in 0..colloc.mesh.len() - 1 {
            mesh.push(colloc.mesh[i]);
            states.push(x[i].clone());
            if defects[i] > opts.defect_tol {
                let (t_a, t_b) = (colloc.mesh[i], colloc.mesh[i + 1]);
                let t_mid = 0.5 * (t_a + t_b);
                mesh.push(t_mid);
                states.push(hermite(t_a, t_b, &x[i], &x[i + 1], &derivs[i], &derivs[i + 1], t_mid));
            }
        }
        mesh.push(colloc.mesh[colloc.mesh.len() - 1]);
        states.push(x[x.len() - 1].clone());
        colloc.mesh = mesh;
        x = states;
    }
}

/// Damped Newton iteration; returns the number of steps taken.
/// Slack on `newton_tol` granted once Newton can no longer make progress.
const STAGNATION_FACTOR: f64 = 1e3;

fn newton(colloc: &Collocation<'_>, x: &mut Vec<Vec<f64>>, opts: &BvpOptions) -> BvpResult<usize> {
    let (mut bc, mut intervals) = colloc.residuals(x);
    let mut steps = 0;
    loop {
        // per-component scale: costates can be orders of magnitude larger
        // than the states they drive, and a row can be no more accurate than
        // the largest term `h f` it sums
        let scale = component_scale(colloc, x);
        let interior_ok = intervals
            .iter()
            .all(|r| r.iter().zip(&scale).all(|(v, s)| v.abs() <= opts.newton_tol * s));
        let converged = interior_ok && max_abs(bc.iter().copied()) <= 0.01 * opts.bc_tol;
        if converged {
            return Ok(steps);
        }
        if steps >= opts.max_newton_iterations {
            return Err(BvpError::NoConvergence { iterations: steps, residual: residual_norm(&bc, &intervals) });
        }
        let delta = newton_direction(colloc, x, &bc, &intervals)?;
        let current = residual_norm(&bc, &intervals);
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=8 {
            let trial: Vec<Vec<f64>> = x
                .iter()
                .zip(&delta)
                .map(|(xi, di)| xi.iter().zip(di).map(|(a, d)| a + lambda * d).collect())
                .collect();
            let (tb, ti) = colloc.residuals(&trial);
            let norm = residual_norm(&tb, &ti);
            if norm.is_finite() && norm < current {
                accepted = Some((trial, tb, ti));
                break;
            }
            lambda *= 0.5;
        }
        steps += 1;
        match accepted {
            Some((trial, tb, ti)) => {
                *x = trial;
                bc = tb;
                intervals = ti;
            }
            None => {
                // no step reduces the residual: accept if it already sits at
                // the rounding floor just above the target
                let floor_ok = intervals
                    .iter()
                    .all(|r| r.iter().zip(&scale).all(|(v, s)| v.abs() <= STAGNATION_FACTOR * opts.newton_tol * s));
                if floor_ok && max_abs(bc.iter().copied()) <= opts.bc_tol {
                    return Ok(steps);
                }
                return Err(BvpError::NoConvergence { iterations: steps, residual: current });
            }
        }
    }
}

/// Row of the block-eliminated system: coefficients on node `k`, node
/// `k + 1`, the last node, and the right-hand side.
#[derive(Clone)]
struct EliminatedRows {
    diag: Vec<Vec<f64>>,
    next: Vec<Vec<f64>>,
    last: Vec<Vec<f64>>,
    rhs: Vec<f64>,
}

fn newton_direction(
    colloc: &Collocation<'_>,
    x: &[Vec<f64>],
    bc: &[f64],
    intervals: &[Vec<f64>],
) -> BvpResult<Vec<Vec<f64>>> {
    let n = colloc.n();
    let nodes = x.len();
    let last_node = nodes - 1;

    // Boundary Jacobian blocks by forward differences.
    let mut bc_a = vec![vec![0.0; n]; n];
    let mut bc_b = vec![vec![0.0; n]; n];
    {
        let tf = colloc.mesh[last_node];
        let mut res = vec![0.0; n];
        for j in 0..n {
            let mut xa = x[0].clone();
            let h = fd_step(xa[j]);
            xa[j] += h;
            (colloc.problem.bc)(&xa, &x[last_node], tf, &mut res);
            for r in 0..n {
                bc_a[r][j] = (res[r] - bc[r]) / h;
            }
            let mut xb = x[last_node].clone();
            let h = fd_step(xb[j]);
            xb[j] += h;
            (colloc.problem.bc)(&x[0], &xb, tf, &mut res);
            for r in 0..n {
                bc_b[r][j] = (res[r] - bc[r]) / h;
            }
        }
    }

    // Pending rows start as the boundary rows, coupling node 0 and the last node.
    let mut pending_diag = bc_a;
    let mut pending_last = bc_b;
    let mut pending_rhs: Vec<f64> = bc.iter().map(|v| -v).collect();
    let mut stored: Vec<EliminatedRows> = Vec::with_capacity(nodes - 1);

    for k in 0..last_node {
        let phi = &intervals[k];
        let mut s_blk = vec![vec![0.0; n]; n];
        let mut r_blk = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut xa = x[k].clone();
            let h = fd_step(xa[j]);
            xa[j] += h;
            let res = colloc.interval_residual(k, &xa, &x[k + 1]);
            for r in 0..n {
                s_blk[r][j] = (res[r] - phi[r]) / h;
            }
            let mut xb = x[k + 1].clone();
            let h = fd_step(xb[j]);
            xb[j] += h;
            let res = colloc.interval_residual(k, &x[k], &xb);
            for r in 0..n {
                r_blk[r][j] = (res[r] - phi[r]) / h;
            }
        }
        let merged = k + 1 == last_node;

        // Work rows: [diag (n) | next (n) | last (n) | rhs].
        let width = 3 * n + 1;
        let mut w = vec![vec![0.0; width]; 2 * n];
        for r in 0..n {
            w[r][..n].copy_from_slice(&pending_diag[r]);
            w[r][2 * n..3 * n].copy_from_slice(&pending_last[r]);
            w[r][3 * n] = pending_rhs[r];
            let row = &mut w[n + r];
            row[..n].copy_from_slice(&s_blk[r]);
            if merged {
                row[2 * n..3 * n].copy_from_slice(&r_blk[r]);
            } else {
                row[n..2 * n].copy_from_slice(&r_blk[r]);
            }
            row[3 * n] = -phi[r];
        }
        let row_scale = max_abs(w.iter().flat_map(|r| r[..n].iter().copied())).max(f64::MIN_POSITIVE);
        for c in 0..n {
            let pivot = (c..2 * n)
                .max_by(|&a, &b| w[a][c].abs().total_cmp(&w[b][c].abs()))
                .expect("non-empty pivot range");
            if w[pivot][c].abs() <= 1e-14 * row_scale {
                return Err(BvpError::SingularJacobian);
            }
            w.swap(c, pivot);
            let (upper, lower) = w.split_at_mut(c + 1);
            let prow = &upper[c];
            for row in lower.iter_mut() {
                let factor = row[c] / prow[c];
                if factor != 0.0 {
                    for (v, p) in row[c..].iter_mut().zip(&prow[c..]) {
                        *v -= factor * p;
                    }
                }
            }
        }
        stored.push(EliminatedRows {
            diag: w[..n].iter().map(|r| r[..n].to_vec()).collect(),
            next: w[..n].iter().map(|r| r[n..2 * n].to_vec()).collect(),
            last: w[..n].iter().map(|r| r[2 * n..3 * n].to_vec()).collect(),
            rhs: w[..n].iter().map(|r| r[3 * n]).collect(),
        });
        pending_diag = w[n..].iter().map(|r| r[n..2 * n].to_vec()).collect();
        pending_last = w[n..].iter().map(|r| r[2 * n..3 * n].to_vec()).collect();
        pending_rhs = w[n..].iter().map(|r| r[3 * n]).collect();
        if merged {
            for r in 0..n {
                for c in 0..n {
                    pending_last[r][c] += pending_diag[r][c];
                }
            }
        }
    }

    let mut delta = vec![vec![0.0; n]; nodes];
    delta[last_node] = dense_solve(pending_last, pending_rhs)?;

    for k in (0..last_node).rev() {
        let rows = &stored[k];
        let merged = k + 1 == last_node;
        let mut rhs = rows.rhs.clone();
        for r in 0..n {
            let mut acc = 0.0;
            for c in 0..n {
                acc += rows.last[r][c] * delta[last_node][c];
                if !merged {
                    acc += rows.next[r][c] * delta[k + 1][c];
                }
            }
            rhs[r] -= acc;
        }
        let mut sol = vec![0.0; n];
        for r in (0..n).rev() {
            let mut acc = rhs[r];
            for c in r + 1..n {
                acc -= rows.diag[r][c] * sol[c];
            }
            sol[r] = acc / rows.diag[r][r];
        }
        delta[k] = sol;
    }
    Ok(delta)
}

fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> BvpResult<Vec<f64>> {
    let n = b.len();
    let scale = max_abs(a.iter().flatten().copied()).max(f64::MIN_POSITIVE);
    for c in 0..n {
        let pivot = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .expect("non-empty pivot range");
        if a[pivot][c].abs() <= 1e-14 * scale {
            return Err(BvpError::SingularJacobian);
        }
        a.swap(c, pivot);
        b.swap(c, pivot);
        for r in c + 1..n {
            let factor = a[r][c] / a[c][c];
            if factor != 0.0 {
                for k in c..n {
                    a[r][k] -= factor * a[c][k];
                }
                b[r] -= factor * b[c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
    }
    Ok(x)
}

/// Built-in analytic problems used by the CLI and the test-suite.
pub mod battery {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    pub const NAMES: [&str; 4] = ["constant", "line", "cubic", "sine"];

    /// Problem plus its exact solution `x(t)`.
    pub struct TestProblem {
        pub problem: BvpProblem,
        pub exact: fn(f64) -> Vec<f64>,
    }

    pub fn by_name(name: &str, intervals: usize) -> Option<TestProblem> {
        match name {
            "constant" => Some(constant(intervals)),
            "line" => Some(line(intervals)),
            "cubic" => Some(cubic(intervals)),
            "sine" => Some(sine(intervals)),
            _ => None,
        }
    }

    /// `x' = 0`, `x(0) = 1`.
    pub fn constant(intervals: usize) -> TestProblem {
        let (mesh, guess) = BvpProblem::uniform_guess(intervals, 0.0, 1.0, |_| vec![0.0]);
        TestProblem {
            problem: BvpProblem {
                dim: 1,
                rhs: Arc::new(|_, _, dx| dx[0] = 0.0),
                bc: Arc::new(|xa, _, _, r| r[0] = xa[0] - 1.0),
                t0: 0.0,
                tf: 1.0,
                free_tf: false,
                mesh,
                guess,
            },
            exact: |_| vec![1.0],
        }
    }

    /// `x'' = 0`, `x(0) = 0`, `x(1) = 1`.
    pub fn line(intervals: usize) -> TestProblem {
        let (mesh, guess) = BvpProblem::uniform_guess(intervals, 0.0, 1.0, |_| vec![0.0, 0.0]);
        TestProblem {
            problem: BvpProblem {
                dim: 2,
                rhs: Arc::new(|_, x, dx| {
                    dx[0] = x[1];
                    dx[1] = 0.0;
                }),
                bc: Arc::new(|xa, xb, _, r| {
                    r[0] = xa[0];
                    r[1] = xb[0] - 1.0;
                }),
                t0: 0.0,
                tf: 1.0,
                free_tf: false,
                mesh,
                guess,
            },
            exact: |t| vec![t, 1.0],
        }
    }

    /// `x'' = 6t`, `x(0) = 0`, `x(1) = 1`; solution `t^3`.
    pub fn cubic(intervals: usize) -> TestProblem {
        let (mesh, guess) = BvpProblem::uniform_guess(intervals, 0.0, 1.0, |t| vec![t, 1.0]);
        TestProblem {
            problem: BvpProblem {
                dim: 2,
                rhs: Arc::new(|t, x, dx| {
                    dx[0] = x[1];
                    dx[1] = 6.0 * t;
                }),
                bc: Arc::new(|xa, xb, _, r| {
                    r[0] = xa[0];
                    r[1] = xb[0] - 1.0;
                }),
                t0: 0.0,
                tf: 1.0,
                free_tf: false,
                mesh,
                guess,
            },
            exact: |t| vec![t * t * t, 3.0 * t * t],
        }
    }

    /// `x'' = -x` on `[0, pi/2]`, `x(0) = 0`, `x(pi/2) = 1`; solution `sin t`.
    pub fn sine(intervals: usize) -> TestProblem {
        let (mesh, guess) = BvpProblem::uniform_guess(intervals, 0.0, FRAC_PI_2, |t| vec![t / FRAC_PI_2, 1.0 / FRAC_PI_2]);
        TestProblem {
            problem: BvpProblem {
                dim: 2,
                rhs: Arc::new(|_, x, dx| {
                    dx[0] = x[1];
                    dx[1] = -x[0];
                }),
                bc: Arc::new(|xa, xb, _, r| {
                    r[0] = xa[0];
                    r[1] = xb[0] - 1.0;
                }),
                t0: 0.0,
                tf: FRAC_PI_2,
                free_tf: false,
                mesh,
                guess,
            },
            exact: |t| vec![t.sin(), t.cos()],
        }
    }
}
