use hopper_core::model::derivatives;
use hopper_core::sim::rk4_step;
use hopper_core::{ControlInput, HopperParams, HopperState};

/// RK4 from `s0` over `steps` steps of `dt`, with the control law evaluated
/// at every stage. Returns the state after each step (not including `s0`).
pub fn integrate(
    s0: HopperState,
    p: &HopperParams,
    dt: f64,
    steps: usize,
    control: impl Fn(f64, &HopperState) -> ControlInput,
) -> Vec<HopperState> {
    let mut x = s0.to_vector().to_vec();
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        x = rk4_step(
            |t, v| {
                let s = s0.with_vector(&v.try_into().unwrap(), t);
                derivatives(&s, p, &control(t, &s)).map(|d| d.to_vec())
            },
            k as f64 * dt,
            &x,
            dt,
        )
        .expect("finite step");
        out.push(s0.with_vector(&x.as_slice().try_into().unwrap(), (k + 1) as f64 * dt));
    }
    out
}
