mod common;

use hopper_core::model::{cm_kinematics, flight_energy, polar_from_cm, slip_1dof_derivatives, stance_energy};
use hopper_core::sim::rk4_step;
use hopper_core::{ControlInput, HopperParams, HopperState, Phase};
use proptest::prelude::*;

fn stance_state(p: &HopperParams, l_dot: f64, gamma: f64, gamma_dot: f64) -> HopperState {
    let mut s = HopperState::apex(p, 1.0, 0.0);
    s.phase = Phase::Stance;
    s.foot_x = 0.0;
    s.l_dot = l_dot;
    s.gamma = gamma;
    s.gamma_dot = gamma_dot;
    s.sync_cm_from_polar();
    s
}

proptest! {
    #[test]
    fn cm_lies_on_the_leg_circle(l in 0.01f64..5.0, l_dot in -5.0f64..5.0, gamma in -3.0f64..3.0, gamma_dot in -10.0f64..10.0) {
        let cm = cm_kinematics(l, l_dot, gamma, gamma_dot);
        prop_assert!((cm.x * cm.x + cm.y * cm.y - l * l).abs() <= 4.0 * f64::EPSILON * l * l);
    }

    #[test]
    fn polar_map_inverts_cm_map(l in 0.1f64..3.0, l_dot in -5.0f64..5.0, gamma in -1.5f64..1.5, gamma_dot in -10.0f64..10.0) {
        let cm = cm_kinematics(l, l_dot, gamma, gamma_dot);
        let (l2, l_dot2, gamma2, gamma_dot2) = polar_from_cm(cm.x, cm.y, cm.x_dot, cm.y_dot);
        prop_assert!((l2 - l).abs() < 1e-12 && (gamma2 - gamma).abs() < 1e-12);
        prop_assert!((l_dot2 - l_dot).abs() < 1e-11 && (gamma_dot2 - gamma_dot).abs() < 1e-10);
    }

    #[test]
    fn unforced_flight_conserves_energy(x_dot in -2.0f64..2.0, y_dot in -3.0f64..3.0, y in 1.0f64..2.0) {
        let p = HopperParams::default();
        let mut s0 = HopperState::apex(&p, y, x_dot);
        s0.y_cm_dot = y_dot;
        let e0 = flight_energy(&s0, &p);
        let path = common::integrate(s0, &p, 1e-3, 600, |_, _| ControlInput::new(0.0, 0.0));
        let drift = path.iter().fold(0.0f64, |m, s| m.max((flight_energy(s, &p) - e0).abs() / e0.abs()));
        prop_assert!(drift <= 1e-8, "drift {drift:e}");
    }

    #[test]
    fn flight_leg_force_leaves_the_cm_alone(force in -100.0f64..100.0, tau in -2.0f64..2.0) {
        let p = HopperParams::default();
        let mut s0 = HopperState::apex(&p, 1.2, 0.3);
        s0.y_cm_dot = 1.0;
        let free = common::integrate(s0, &p, 1e-3, 200, |_, _| ControlInput::new(0.0, tau));
        let pushed = common::integrate(s0, &p, 1e-3, 200, |_, _| ControlInput::new(force, tau));
        for (a, b) in free.iter().zip(&pushed) {
            prop_assert_eq!((a.x_cm, a.y_cm, a.x_cm_dot, a.y_cm_dot), (b.x_cm, b.y_cm, b.x_cm_dot, b.y_cm_dot));
        }
    }

    #[test]
    fn passive_spring_stance_conserves_energy(l_dot in -2.5f64..-0.3, gamma in -0.3f64..0.3, gamma_dot in -0.5f64..0.5) {
        let p = HopperParams::default();
        let s0 = stance_state(&p, l_dot, gamma, gamma_dot);
        let e0 = stance_energy(&s0, &p);
        let path = common::integrate(s0, &p, 1e-4, 2500, |_, s| ControlInput::new(p.k * (p.l0 - s.l), 0.0));
        let mut drift = 0.0f64;
        for s in path.iter().take_while(|s| s.l <= p.l0 || s.l_dot < 0.0) {
            drift = drift.max((stance_energy(s, &p) - e0).abs() / e0.abs());
        }
        prop_assert!(drift <= 1e-6, "drift {drift:e}");
    }

    #[test]
    fn slip_stance_is_a_sinusoid(v in 0.2f64..3.0) {
        let p = HopperParams::default();
        let omega = (p.k / p.m).sqrt();
        let y_star = p.l0 - p.m * p.g / p.k;
        let (a, b) = (p.l0 - y_star, -v / omega);
        let dt = 1e-4;
        let mut x = vec![p.l0, -v];
        for k in 1..=1500 {
            x = rk4_step(|_, s| {
                let (d0, d1) = slip_1dof_derivatives(s[0], s[1], &p, Phase::Stance);
                Ok(vec![d0, d1])
            }, 0.0, &x, dt).unwrap();
            let t = k as f64 * dt;
            let exact = y_star + a * (omega * t).cos() + b * (omega * t).sin();
            prop_assert!((x[0] - exact).abs() < 1e-9);
        }
    }
}

#[test]
fn slip_flight_is_ballistic() {
    let p = HopperParams::default();
    assert_eq!(slip_1dof_derivatives(1.3, 0.4, &p, Phase::Flight), (0.4, -p.g));
    // at the rest length the spring is unloaded
    assert_eq!(slip_1dof_derivatives(p.l0, 0.0, &p, Phase::Stance).1, -p.g);
}
