//! Flat-output coordinates of the hopper.
//!
//! For the second-order model the flat outputs are `y1 = l`, `y2 = gamma`;
//! leg force and hip torque are algebraic in `(y, y', y'')`, while the body
//! angle only follows by double integration of the torque (a Liouvillian
//! rather than a flat variable). The first-order model (`y1 = pi/2 - gamma`,
//! `y2 = psi`) is kept as a reference map.

use std::f64::consts::FRAC_PI_2;

use crate::error::{HopperError, Result};
use crate::model::HopperParams;

/// Flat outputs and their first two derivatives.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FlatChainState {
    pub y1: f64,
    pub y1_dot: f64,
    pub y1_ddot: f64,
    pub y2: f64,
    pub y2_dot: f64,
    pub y2_ddot: f64,
}

/// Physical quantities of the first-order model recovered from flat outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstOrderPhysical {
    pub gamma: f64,
    pub psi: f64,
    pub tau: f64,
    pub l: f64,
    pub force: f64,
}

/// Normalised (`u1 = F/m`, `u2 = tau/m`) and dimensional controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatControls {
    pub u1: f64,
    pub u2: f64,
    pub force: f64,
    pub tau: f64,
}

pub fn first_order_flat_inverse(f: &FlatChainState, p: &HopperParams) -> Result<FirstOrderPhysical> {
    let rate_sum = f.y1_dot + f.y2_dot;
    if rate_sum == 0.0 {
        return Err(HopperError::FlatSingularity("y1' + y2' vanishes"));
    }
    let radius_sq = -p.m_b * f.y2_dot / (p.m_l * rate_sum);
    if !(radius_sq > 0.0) || !radius_sq.is_finite() {
        return Err(HopperError::FlatSingularity("(l + l0)^2 is not positive"));
    }
    let radius = radius_sq.sqrt();
    let force = p.m_b * (f.y1_ddot * f.y2_dot - f.y1_dot * f.y2_ddot) / (2.0 * p.m_l * radius * rate_sum * rate_sum);
    Ok(FirstOrderPhysical {
        gamma: FRAC_PI_2 - f.y1,
        psi: f.y2,
        tau: -f.y1_dot,
        l: radius - p.l0,
        force,
    })
}

/// Stance inverse map:
/// `u1 = y1'' - y1 y2'^2 + g cos(y2)`,
/// `u2 = y1^2 y2'' + 2 y1 y1' y2' - g y1 sin(y2)`.
pub fn stance_flat_to_controls(f: &FlatChainState, p: &HopperParams) -> FlatControls {
    let u1 = f.y1_ddot - f.y1 * f.y2_dot * f.y2_dot + p.g * f.y2.cos();
    let u2 = f.y1 * f.y1 * f.y2_ddot + 2.0 * f.y1 * f.y1_dot * f.y2_dot - p.g * f.y1 * f.y2.sin();
    FlatControls { u1, u2, force: p.m * u1, tau: p.m * u2 }
}

/// Flight inverse map: `u1 = 0`, `u2 = y1^2 y2''`.
pub fn flight_flat_to_controls(f: &FlatChainState, p: &HopperParams) -> FlatControls {
    let u2 = f.y1 * f.y1 * f.y2_ddot;
    FlatControls { u1: 0.0, u2, force: 0.0, tau: p.m * u2 }
}

/// Jacobian of `(u1, u2)` with respect to `(y1'', y2'')` for the stance map.
/// Its determinant is `y1^2`.
pub fn stance_control_jacobian(f: &FlatChainState) -> [[f64; 2]; 2] {
    [[1.0, 0.0], [0.0, f.y1 * f.y1]]
}

/// Body angle from sampled `u2` by two passes of cumulative trapezoidal
/// quadrature of `psi'' = alpha u2`.
pub fn recover_body_angle(u2: &[f64], alpha: f64, psi0: f64, psi_dot0: f64, dt: f64) -> Result<Vec<f64>> {
    if u2.len() < 2 {
        return Err(HopperError::EmptySeries);
    }
    if !(dt > 0.0) {
        return Err(HopperError::InvalidParameter { name: "dt", value: dt, reason: "sample spacing must be positive" });
    }
    let mut psi = Vec::with_capacity(u2.len());
    let mut angle = psi0;
    let mut rate = psi_dot0;
    psi.push(angle);
    for w in u2.windows(2) {
        let next_rate = rate + 0.5 * dt * alpha * (w[0] + w[1]);
        angle += 0.5 * dt * (rate + next_rate);
        rate = next_rate;
        psi.push(angle);
    }
    Ok(psi)
}

/// Integrator-chain system `y' = A y + B v` in derivative-major layout
/// `[y_1 .. y_n, y_1' .. y_n', ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatLinearSystem {
    n_outputs: usize,
    order: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

pub fn build_flat_system(n_outputs: usize, order: usize) -> Result<FlatLinearSystem> {
    if !(1..=2).contains(&n_outputs) || !(2..=3).contains(&order) {
        return Err(HopperError::UnsupportedDimension { n_outputs, order });
    }
    let dim = n_outputs * order;
    let mut a = vec![0.0; dim * dim];
    let mut b = vec![0.0; dim * n_outputs];
    for d in 0..order - 1 {
        for j in 0..n_outputs {
            a[(d * n_outputs + j) * dim + (d + 1) * n_outputs + j] = 1.0;
        }
    }
    for j in 0..n_outputs {
        b[((order - 1) * n_outputs + j) * n_outputs + j] = 1.0;
    }
    Ok(FlatLinearSystem { n_outputs, order, a, b })
}

impl FlatLinearSystem {
    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.n_outputs * self.order
    }

    pub fn a(&self, row: usize, col: usize) -> f64 {
        self.a[row * self.dim() + col]
    }

    pub fn b(&self, row: usize, col: usize) -> f64 {
        self.b[row * self.n_outputs + col]
    }

    /// State index of derivative `d` of output `j`.
    pub fn index(&self, output: usize, derivative: usize) -> usize {
        derivative * self.n_outputs + output
    }

    fn check(&self, len: usize, expected: usize) -> Result<()> {
        if len == expected {
            Ok(())
        } else {
            Err(HopperError::DimensionMismatch { expected, got: len })
        }
    }

    pub fn apply_a(&self, y: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        self.check(y.len(), n)?;
        Ok((0..n).map(|r| (0..n).map(|c| self.a(r, c) * y[c]).sum()).collect())
    }

    pub fn apply_at(&self, p: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        self.check(p.len(), n)?;
        Ok((0..n).map(|c| (0..n).map(|r| self.a(r, c) * p[r]).sum()).collect())
    }

    pub fn apply_b(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check(w.len(), self.n_outputs)?;
        Ok((0..self.dim()).map(|r| (0..self.n_outputs).map(|c| self.b(r, c) * w[c]).sum()).collect())
    }

    pub fn apply_bt(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check(p.len(), self.dim())?;
        Ok((0..self.n_outputs).map(|c| (0..self.dim()).map(|r| self.b(r, c) * p[r]).sum()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> HopperParams {
        HopperParams::default()
    }

    #[test]
    fn first_order_identity_of_angles() {
        let f = FlatChainState { y1: FRAC_PI_2, y2: 0.0, y1_dot: -2.0, y2_dot: 1.0, ..Default::default() };
        let r = first_order_flat_inverse(&f, &params()).unwrap();
        assert_eq!(r.gamma, 0.0);
        assert_eq!(r.psi, 0.0);
    }

    #[test]
    fn first_order_leg_length_and_force() {
        let p = HopperParams { m_b: 1.0, m_l: 1.0, ..params() };
        let f = FlatChainState { y1_dot: -2.0, y2_dot: 1.0, ..Default::default() };
        let r = first_order_flat_inverse(&f, &p).unwrap();
        assert!((r.l - (1.0 - p.l0)).abs() < 1e-15);
        assert_eq!(r.force, 0.0);
        assert_eq!(r.tau, 2.0);
    }

    #[test]
    fn first_order_singularities() {
        let p = params();
        let f = FlatChainState { y1_dot: 1.0, y2_dot: -1.0, ..Default::default() };
        assert!(matches!(first_order_flat_inverse(&f, &p), Err(HopperError::FlatSingularity(_))));
        let f = FlatChainState { y1_dot: 1.0, y2_dot: 1.0, ..Default::default() };
        assert!(matches!(first_order_flat_inverse(&f, &p), Err(HopperError::FlatSingularity(_))));
    }

    #[test]
    fn stance_map_examples() {
        let p = params();
        let c = stance_flat_to_controls(&FlatChainState { y1: 1.0, ..Default::default() }, &p);
        assert_eq!((c.u1, c.u2), (p.g, 0.0));
        let c = stance_flat_to_controls(&FlatChainState { y1: 1.0, y2: FRAC_PI_2, ..Default::default() }, &p);
        assert!(c.u1.abs() < 1e-15);
        assert!((c.u2 + p.g).abs() < 1e-15);
        let c = stance_flat_to_controls(
            &FlatChainState { y1: 1.0, y1_dot: 1.0, y2: 0.0, y2_dot: 2.0, ..Default::default() },
            &p,
        );
        assert_eq!(c.u2, 4.0);
        assert_eq!(c.tau, p.m * 4.0);
    }

    #[test]
    fn flight_map_examples() {
        let p = params();
        let c = flight_flat_to_controls(&FlatChainState { y1: 1.0, ..Default::default() }, &p);
        assert_eq!(c.u2, 0.0);
        let c = flight_flat_to_controls(&FlatChainState { y1: 1.0, y2_ddot: 2.0, y1_ddot: 5.0, ..Default::default() }, &p);
        assert_eq!(c.u2, 2.0);
        assert_eq!(c.u1, 0.0);
        assert_eq!(c.force, 0.0);
    }

    #[test]
    fn body_angle_examples() {
        let dt = 1e-3;
        let psi = recover_body_angle(&vec![0.0; 101], 3.0, 0.2, -0.5, dt).unwrap();
        for (i, v) in psi.iter().enumerate() {
            assert!((v - (0.2 - 0.5 * i as f64 * dt)).abs() < 1e-14);
        }
        let psi = recover_body_angle(&vec![2.0; 101], 3.0, 0.0, 0.0, dt).unwrap();
        let t = 0.1;
        assert!((psi[100] - 3.0 * 2.0 * t * t / 2.0).abs() < 1e-14);

        for n in [100usize, 200] {
            let dt = 1.0 / n as f64;
            let u: Vec<f64> = (0..=n).map(|i| (i as f64 * dt).sin()).collect();
            let psi = recover_body_angle(&u, 1.0, 0.0, 0.0, dt).unwrap();
            let err = (psi[n] - (1.0 - 1f64.sin())).abs();
            assert!(err < 0.1 * dt * dt, "n = {n}, err = {err}");
        }
        assert_eq!(recover_body_angle(&[1.0], 1.0, 0.0, 0.0, dt), Err(HopperError::EmptySeries));
        assert!(recover_body_angle(&[], 1.0, 0.0, 0.0, dt).is_err());
    }

    #[test]
    fn body_angle_second_difference_recovers_input() {
        let n = 400;
        let dt = 1e-3;
        let alpha = 2.5;
        let u: Vec<f64> = (0..=n).map(|i| (3.0 * i as f64 * dt).cos()).collect();
        let psi = recover_body_angle(&u, alpha, 0.1, 0.2, dt).unwrap();
        for i in 1..n {
            let acc = (psi[i + 1] - 2.0 * psi[i] + psi[i - 1]) / (dt * dt);
            assert!((acc - alpha * u[i]).abs() < 50.0 * dt * dt, "i = {i}");
        }
    }

    #[test]
    fn flat_system_matches_displayed_matrices() {
        let s = build_flat_system(2, 2).unwrap();
        let a_expected = [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0],
        ];
        let b_expected = [[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(s.a(r, c), a_expected[r][c]);
            }
            for c in 0..2 {
                assert_eq!(s.b(r, c), b_expected[r][c]);
            }
        }
    }

    #[test]
    fn flat_system_single_chain_and_nilpotency() {
        let s = build_flat_system(1, 3).unwrap();
        assert_eq!(s.dim(), 3);
        assert_eq!((s.b(0, 0), s.b(1, 0), s.b(2, 0)), (0.0, 0.0, 1.0));
        assert_eq!(s.apply_a(&[1.0, 2.0, 3.0]).unwrap(), vec![2.0, 3.0, 0.0]);

        let s = build_flat_system(2, 3).unwrap();
        let mut v: Vec<f64> = (1..=6).map(|i| i as f64).collect();
        for _ in 0..2 {
            v = s.apply_a(&v).unwrap();
            assert!(v.iter().any(|x| *x != 0.0));
        }
        v = s.apply_a(&v).unwrap();
        assert!(v.iter().all(|x| *x == 0.0));
        for c in 0..2 {
            let ones: usize = (0..6).filter(|r| s.b(*r, c) == 1.0).count();
            assert_eq!(ones, 1);
        }
        assert_eq!(
            build_flat_system(3, 3),
            Err(HopperError::UnsupportedDimension { n_outputs: 3, order: 3 })
        );
        assert!(build_flat_system(1, 4).is_err());
        assert!(s.apply_a(&[1.0]).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = params();
        let f = FlatChainState { y1: 0.9, y1_dot: -0.4, y1_ddot: 2.0, y2: 0.2, y2_dot: 0.7, y2_ddot: -1.0 };
        let j = stance_control_jacobian(&f);
        let h = 1e-6;
        let base = stance_flat_to_controls(&f, &p);
        let d1 = stance_flat_to_controls(&FlatChainState { y1_ddot: f.y1_ddot + h, ..f }, &p);
        let d2 = stance_flat_to_controls(&FlatChainState { y2_ddot: f.y2_ddot + h, ..f }, &p);
        assert!(((d1.u1 - base.u1) / h - j[0][0]).abs() < 1e-6);
        assert!(((d1.u2 - base.u2) / h - j[1][0]).abs() < 1e-6);
        assert!(((d2.u1 - base.u1) / h - j[0][1]).abs() < 1e-6);
        assert!(((d2.u2 - base.u2) / h - j[1][1]).abs() < 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn second_order_outputs_not_differentially_related(y1 in 0.05f64..3.0, y2 in -1.5f64..1.5) {
                let j = stance_control_jacobian(&FlatChainState { y1, y2, ..Default::default() });
                let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                prop_assert!(det > 0.0);
                prop_assert!((det - y1 * y1).abs() < 1e-15);
            }

            /// Along a flat trajectory `y1 = a0 + a1 t + a2 t^2`, `y2 = b0 + b1 t + b2 t^2`,
            /// the recovered physical variables satisfy the first-order EOM
            /// `l' = F`, `gamma' = tau`, `psi' = tau m_l (l+l0)^2 / (m_b + m_l (l+l0)^2)`.
            #[test]
            fn first_order_inverse_satisfies_forward_model(
                a1 in -3.0f64..-0.5, a2 in -0.5f64..0.5,
                b1 in 0.05f64..0.4, b2 in -0.2f64..0.2,
                m_l in 0.05f64..1.0,
            ) {
                let p = HopperParams { m_l, ..HopperParams::default() };
                let chain = |t: f64| FlatChainState {
                    y1: 0.3 + a1 * t + a2 * t * t,
                    y1_dot: a1 + 2.0 * a2 * t,
                    y1_ddot: 2.0 * a2,
                    y2: -0.1 + b1 * t + b2 * t * t,
                    y2_dot: b1 + 2.0 * b2 * t,
                    y2_ddot: 2.0 * b2,
                };
                let t = 0.1;
                let h = 1e-5;
                let f = chain(t);
                let r = first_order_flat_inverse(&f, &p);
                prop_assume!(r.is_ok());
                let r = r.unwrap();
                let lp = first_order_flat_inverse(&chain(t + h), &p);
                let lm = first_order_flat_inverse(&chain(t - h), &p);
                prop_assume!(lp.is_ok() && lm.is_ok());
                let l_dot = (lp.unwrap().l - lm.unwrap().l) / (2.0 * h);
                prop_assert!((l_dot - r.force).abs() < 1e-5 * (1.0 + r.force.abs()));
                prop_assert!((-f.y1_dot - r.tau).abs() < 1e-15);
                let rad2 = (r.l + p.l0).powi(2);
                let psi_dot = r.tau * p.m_l * rad2 / (p.m_b + p.m_l * rad2);
                prop_assert!((psi_dot - f.y2_dot).abs() < 1e-10 * (1.0 + f.y2_dot.abs()));
                prop_assert!((r.gamma - (FRAC_PI_2 - f.y1)).abs() < 1e-15);
            }
        }
    }
}
