use hopper_core::raibert::{body_pd, hip_pd, RaibertGains};
use hopper_core::sim::{run, run_partial, ControllerKind, EventKind, SimConfig, Trajectory};
use hopper_core::{HopperParams, Phase};
use proptest::prelude::*;

fn simulate(controller: ControllerKind, seed: u64, hops: usize) -> Trajectory {
    let cfg = SimConfig { controller, seed, hops, ..SimConfig::default() };
    run(&cfg, &HopperParams::default(), &RaibertGains::default()).expect("run completes")
}

/// Phase implied by the event log at time `t`; runs start in flight.
fn phase_from_events(traj: &Trajectory, t: f64) -> Phase {
    match traj.events.iter().take_while(|e| e.t <= t).last() {
        Some(e) if e.kind == EventKind::Touchdown => Phase::Stance,
        _ => Phase::Flight,
    }
}

fn check_log_consistency(traj: &Trajectory) {
    for r in &traj.records {
        assert_eq!(r.phase(), phase_from_events(traj, r.t()), "record at t = {}", r.t());
    }
    for pair in traj.events.windows(2) {
        assert_ne!(pair[0].kind, pair[1].kind, "events must alternate");
        assert!(pair[0].t < pair[1].t);
    }
    assert_eq!(traj.events.first().map(|e| e.kind), Some(EventKind::Touchdown));
    // every event falls inside the step whose end points straddle the switch
    for e in &traj.events {
        let after = traj.records.iter().position(|r| r.t() >= e.t).expect("records continue past events");
        assert!(after > 0);
        let (a, b) = (&traj.records[after - 1], &traj.records[after]);
        assert!(b.t() - a.t() <= traj.dt * (1.0 + 1e-9));
        assert_ne!(a.phase(), b.phase(), "event at {} not between a phase change", e.t);
    }
}

#[test]
fn records_agree_with_the_event_log() {
    for controller in [ControllerKind::Raibert, ControllerKind::JerkBvp] {
        check_log_consistency(&simulate(controller, 5, 4));
    }
}

#[test]
fn records_sit_on_a_uniform_grid() {
    let traj = simulate(ControllerKind::Raibert, 1, 3);
    for (k, r) in traj.records.iter().enumerate() {
        assert_eq!(r.t(), k as f64 * traj.dt);
    }
}

#[test]
fn jerk_is_undefined_only_at_the_ends() {
    let traj = simulate(ControllerKind::JerkBvp, 2, 2);
    let n = traj.records.len();
    assert!(traj.records[0].jerk_gamma.is_nan() && traj.records[n - 1].jerk_gamma.is_nan());
    assert!(traj.records[1..n - 1].iter().all(|r| r.jerk_gamma.is_finite()));
}

#[test]
fn metrics_match_the_records() {
    let traj = simulate(ControllerKind::Raibert, 3, 3);
    let m = traj.metrics();
    let flights = traj.events.iter().filter(|e| e.kind == EventKind::Touchdown).count() + 1;
    assert_eq!(m.apex_heights.len(), flights);
    assert!((m.apex_heights[0] - SimConfig::default().references.apex_height).abs() < 1e-12);
    let peak = traj
        .records
        .iter()
        .filter(|r| r.phase() == Phase::Stance && r.jerk_gamma.is_finite())
        .fold(0.0f64, |a, r| a.max(r.jerk_gamma.abs()));
    assert_eq!(m.peak_stance_jerk, peak);
    assert!(m.boundary_residuals.is_empty());
}

#[test]
fn bvp_runs_replan_at_every_event() {
    let traj = simulate(ControllerKind::JerkBvp, 4, 3);
    assert_eq!(traj.plans.len(), traj.events.len() + 1);
    for (plan, event) in traj.plans[1..].iter().zip(&traj.events) {
        assert_eq!(plan.t, event.t);
        let expected = match event.kind {
            EventKind::Touchdown => Phase::Stance,
            EventKind::Liftoff => Phase::Flight,
        };
        assert_eq!(plan.phase, expected);
    }
}

#[test]
fn invalid_configuration_is_rejected() {
    let p = HopperParams::default();
    let g = RaibertGains::default();
    for cfg in [
        SimConfig { dt: 0.0, ..SimConfig::default() },
        SimConfig { sigma_process: -1.0, ..SimConfig::default() },
        SimConfig { max_duration: f64::NAN, ..SimConfig::default() },
    ] {
        let (traj, err) = run_partial(&cfg, &p, &g);
        assert!(err.is_some() && traj.records.is_empty());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn same_seed_same_trajectory(seed in any::<u64>(), bvp in any::<bool>()) {
        let controller = if bvp { ControllerKind::JerkBvp } else { ControllerKind::Raibert };
        let a = simulate(controller, seed, 2);
        let b = simulate(controller, seed, 2);
        prop_assert_eq!(a.records.len(), b.records.len());
        for (x, y) in a.records.iter().zip(&b.records) {
            prop_assert_eq!(x.state.to_vector().map(f64::to_bits), y.state.to_vector().map(f64::to_bits));
            prop_assert_eq!(x.control.tau.to_bits(), y.control.tau.to_bits());
        }
        prop_assert_eq!(a.events, b.events);
    }

    #[test]
    fn pd_loops_are_linear(e in -2.0f64..2.0, rate in -5.0f64..5.0) {
        // errors measured from a zero target, so doubling them is exact in floating point
        let g = RaibertGains { k_p_body: 20.0, k_v_body: 4.0, ..RaibertGains::default() };
        prop_assert_eq!(hip_pd(2.0 * e, 0.0, 2.0 * rate, &g), 2.0 * hip_pd(e, 0.0, rate, &g));
        prop_assert_eq!(body_pd(2.0 * e, 0.0, 2.0 * rate, &g), 2.0 * body_pd(e, 0.0, rate, &g));
    }
}
