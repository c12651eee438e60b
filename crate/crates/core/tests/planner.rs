use hopper_core::planner::{costate_rhs, plan_flight, plan_stance, plan_stance_fixed, JerkPlan, PlanOptions, StanceBoundary};
use hopper_core::{HopperError, HopperParams};
use proptest::prelude::*;

fn opts() -> PlanOptions {
    PlanOptions::default()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Largest mismatch between `P'` from the costate equation and a central
/// difference of the solved costates, relative to the costate size.
fn costate_derivative_mismatch(plan: &JerkPlan) -> f64 {
    let h = 1e-4 * plan.tf;
    let sys = plan.system();
    let mut worst = 0.0f64;
    for i in 1..20 {
        let t = plan.tf * i as f64 / 20.0;
        let (_, p) = plan.state_at(t).unwrap();
        let (_, pa) = plan.state_at(t - h).unwrap();
        let (_, pb) = plan.state_at(t + h).unwrap();
        let model = costate_rhs(&p, sys).unwrap();
        let scale = 1.0 + max_abs(&p.0) / plan.tf;
        for k in 0..p.0.len() {
            let fd = (pb.0[k] - pa.0[k]) / (2.0 * h);
            worst = worst.max((fd - model[k]).abs() / scale);
        }
    }
    worst
}

/// Quintic with prescribed position, rate and acceleration at both ends.
fn quintic(start: [f64; 3], end: [f64; 3], t: f64) -> impl Fn(f64) -> f64 {
    let [p0, v0, a0] = start;
    let [p1, v1, a1] = end;
    let h = p1 - p0;
    let c = [
        p0,
        v0,
        0.5 * a0,
        (20.0 * h - (8.0 * v1 + 12.0 * v0) * t - (3.0 * a0 - a1) * t * t) / (2.0 * t.powi(3)),
        (-30.0 * h + (14.0 * v1 + 16.0 * v0) * t + (3.0 * a0 - 2.0 * a1) * t * t) / (2.0 * t.powi(4)),
        (12.0 * h - 6.0 * (v1 + v0) * t + (a1 - a0) * t * t) / (2.0 * t.powi(5)),
    ];
    move |s: f64| c.iter().rev().fold(0.0, |acc, ci| acc * s + ci)
}

fn stance_case() -> impl Strategy<Value = (StanceBoundary, f64)> {
    (-0.3f64..0.3, -2.5f64..-0.3, 0.3f64..2.5, 0.08f64..0.3).prop_map(|(gamma0, ldot0, ldotf, tf)| {
        (StanceBoundary::symmetric(1.0, gamma0, ldot0, ldotf), tf)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn flight_costates_follow_their_dynamics(g0 in -0.5f64..0.5, gd in -0.5f64..0.5, tf in 0.1f64..1.5) {
        let plan = plan_flight(g0, gd, tf, &HopperParams::default(), &opts()).unwrap();
        let err = costate_derivative_mismatch(&plan);
        prop_assert!(err < 1e-5, "mismatch {err:e}");
    }

    #[test]
    fn stance_costates_follow_their_dynamics((b, tf) in stance_case()) {
        let plan = plan_stance_fixed(b, tf, &HopperParams::default(), &opts()).unwrap();
        let err = costate_derivative_mismatch(&plan);
        prop_assert!(err < 1e-5, "mismatch {err:e}");
    }

    #[test]
    fn jerk_is_minus_half_bt_p((b, tf) in stance_case()) {
        let plan = plan_stance_fixed(b, tf, &HopperParams::default(), &opts()).unwrap();
        let sys = plan.system();
        for i in 0..=20 {
            let t = tf * i as f64 / 20.0;
            let (_, p) = plan.state_at(t).unwrap();
            let s = plan.sample(t).unwrap();
            for (j, w) in [s.w1, s.w2].into_iter().enumerate() {
                let bt_p: f64 = (0..sys.dim()).map(|r| sys.b(r, j) * p.0[r]).sum();
                prop_assert!((w + 0.5 * bt_p).abs() <= 1e-10 * (1.0 + bt_p.abs()));
            }
        }
    }

    #[test]
    fn stance_plans_are_quintics((b, tf) in stance_case()) {
        let plan = plan_stance_fixed(b, tf, &HopperParams::default(), &opts()).unwrap();
        let l = quintic([b.l_start, b.ldot_start, 0.0], [b.l_end, b.ldot_end, 0.0], tf);
        let gamma = quintic([b.gamma_start, b.gamma_dot_start, 0.0], [b.gamma_end, 0.0, 0.0], tf);
        for i in 0..=100 {
            let t = tf * i as f64 / 100.0;
            let c = plan.sample(t).unwrap().chain;
            prop_assert!((c.y1 - l(t)).abs() <= 1e-8 && (c.y2 - gamma(t)).abs() <= 1e-8, "t {t}");
        }
    }

    #[test]
    fn stance_plans_obey_the_sign_convention((b, tf) in stance_case()) {
        let plan = plan_stance_fixed(b, tf, &HopperParams::default(), &opts()).unwrap();
        prop_assert!(plan.sample(0.02 * tf).unwrap().chain.y1_dot < 0.0);
        prop_assert!(plan.sample(0.98 * tf).unwrap().chain.y1_dot > 0.0);
    }

    #[test]
    fn hamiltonian_is_constant_along_a_plan((b, tf) in stance_case()) {
        let plan = plan_stance_fixed(b, tf, &HopperParams::default(), &opts()).unwrap();
        let h: Vec<f64> = (0..=50).map(|i| plan.hamiltonian_at(tf * i as f64 / 50.0).unwrap()).collect();
        let spread = h.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)) - h.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        prop_assert!(spread <= 1e-6 * (1.0 + max_abs(&h)), "spread {spread:e} of {h:?}");
    }
}

/// `s^3 (1 - s)^3 (a + b s + c s^2)` vanishes with its first two derivatives at both ends.
fn bump_third_derivative(a: f64, b: f64, c: f64, s: f64) -> f64 {
    // coefficients of s^3 (1 - s)^3 = s^3 - 3 s^4 + 3 s^5 - s^6, times (a + b s + c s^2)
    let base = [0.0, 0.0, 0.0, 1.0, -3.0, 3.0, -1.0];
    let mut poly = [0.0f64; 9];
    for (i, bi) in base.iter().enumerate() {
        for (j, cj) in [a, b, c].iter().enumerate() {
            poly[i + j] += bi * cj;
        }
    }
    (3..9).map(|k| poly[k] * (k * (k - 1) * (k - 2)) as f64 * s.powi(k as i32 - 3)).sum()
}

#[test]
fn flight_plan_minimises_the_jerk_cost() {
    use rand::{Rng, SeedableRng};
    let p = HopperParams::default();
    let (g0, gd, tf) = (0.15, -0.2, 0.45);
    let plan = plan_flight(g0, gd, tf, &p, &opts()).unwrap();
    let panels = 400;
    let n = 2 * panels;
    let h = tf / n as f64;
    let jerk: Vec<f64> = (0..=n).map(|i| plan.sample((i as f64 * h).min(tf)).unwrap().w2).collect();
    let simpson = |f: &dyn Fn(usize) -> f64| {
        (0..=n).map(|i| f(i) * if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 }).sum::<f64>() * h / 3.0
    };
    let j_plan = simpson(&|i| jerk[i] * jerk[i]);
    assert!((j_plan - plan.cost(panels).unwrap()).abs() <= 1e-9 * j_plan);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let (a, b, c) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let eps = rng.random_range(1e-3..1.0);
        // d^3/dt^3 of a bump in s = t / tf
        let delta = |i: usize| eps * bump_third_derivative(a, b, c, i as f64 / n as f64) / tf.powi(3);
        let j_perturbed = simpson(&|i| (jerk[i] + delta(i)).powi(2));
        assert!(j_perturbed >= j_plan, "perturbation lowered the cost: {j_perturbed} < {j_plan}");
    }
}

#[test]
fn free_end_time_stance_has_no_transversal_solution() {
    // With zero end accelerations the end-time Hamiltonian keeps one sign, so
    // the free-time problem is reported as unsolvable rather than returning a plan.
    let p = HopperParams::default();
    let err = plan_stance(1.0, 0.1, -1.5, 1.5, 0.1, &p, &opts()).unwrap_err();
    assert!(matches!(err, HopperError::Bvp(_) | HopperError::FinalTimeUnbounded { .. }), "{err:?}");
}

#[test]
fn stance_rejects_wrong_signs() {
    let p = HopperParams::default();
    let b = StanceBoundary::symmetric(1.0, 0.1, 1.0, 1.0);
    assert!(matches!(plan_stance_fixed(b, 0.2, &p, &opts()), Err(HopperError::SignConventionViolated { .. })));
    assert!(matches!(plan_stance(1.0, 0.1, -1.0, -1.0, 0.2, &p, &opts()), Err(HopperError::SignConventionViolated { .. })));
}
