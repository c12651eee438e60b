//! CSV encoding of trajectories, events, plan summaries and figure tables.
//!
//! Floats are written with 17 significant digits (`{:.16e}`) so every value
//! parses back bit-for-bit; non-finite values appear as `NaN` / `inf`.

use hopper_core::sim::{
    Event, EventKind, PlanRecord, Record, Trajectory, EVENTS_CSV_HEADER, PLANS_CSV_HEADER, TRAJECTORY_CSV_HEADER,
};
use hopper_core::{ControlInput, HopperState, Phase};

use crate::CliError;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_phase(s: &str) -> Option<Phase> {
    match s {
        "stance" => Some(Phase::Stance),
        "flight" => Some(Phase::Flight),
        _ => None,
    }
}

/// Writes a header and rows of pre-formatted fields.
pub fn write_table<I, R>(header: &[&str], rows: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Csv(e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Csv(e.to_string()))
}

/// Reads a table, checking the header matches `expected` exactly.
fn read_table(text: &str, expected: &[&str]) -> Result<Vec<csv::StringRecord>, CliError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| CliError::Csv(e.to_string()))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(CliError::Csv(format!("header {:?} does not match {:?}", header.iter().collect::<Vec<_>>(), expected)));
    }
    r.records().map(|rec| rec.map_err(|e| CliError::Csv(e.to_string()))).collect()
}

fn field_f64(rec: &csv::StringRecord, i: usize) -> Result<f64, CliError> {
    let raw = rec.get(i).ok_or_else(|| CliError::Csv(format!("missing column {i}")))?;
    raw.parse().map_err(|_| CliError::Csv(format!("not a number: {raw:?}")))
}

fn record_row(r: &Record) -> Vec<String> {
    let s = &r.state;
    let mut row = vec![fmt_f64(s.t), s.phase.as_str().to_string()];
    row.extend(
        [
            s.l,
            s.l_dot,
            s.gamma,
            s.gamma_dot,
            s.psi,
            s.psi_dot,
            s.x_cm,
            s.y_cm,
            s.x_cm_dot,
            s.y_cm_dot,
            r.control.force,
            r.control.tau,
            r.jerk_gamma,
        ]
        .map(fmt_f64),
    );
    row
}

pub fn trajectory_csv(traj: &Trajectory) -> Result<String, CliError> {
    write_table(&TRAJECTORY_CSV_HEADER, traj.records.iter().map(record_row))
}

pub fn events_csv(events: &[Event]) -> Result<String, CliError> {
    write_table(&EVENTS_CSV_HEADER, events.iter().map(|e| [fmt_f64(e.t), e.kind.as_str().to_string()]))
}

pub fn plans_csv(plans: &[PlanRecord]) -> Result<String, CliError> {
    write_table(
        &PLANS_CSV_HEADER,
        plans.iter().map(|p| {
            [fmt_f64(p.t), p.phase.as_str().to_string(), fmt_f64(p.tf), fmt_f64(p.boundary_residual), p.iterations.to_string()]
        }),
    )
}

/// Parses `trajectory.csv`. `gamma_ddot` and `foot_x` are not logged and come back as NaN.
pub fn parse_trajectory(text: &str) -> Result<Vec<Record>, CliError> {
    read_table(text, &TRAJECTORY_CSV_HEADER)?
        .iter()
        .map(|rec| {
            let phase = rec.get(1).and_then(parse_phase).ok_or_else(|| CliError::Csv(format!("bad phase in {rec:?}")))?;
            let v = |i| field_f64(rec, i);
            let state = HopperState {
                t: v(0)?,
                phase,
                l: v(2)?,
                l_dot: v(3)?,
                gamma: v(4)?,
                gamma_dot: v(5)?,
                psi: v(6)?,
                psi_dot: v(7)?,
                x_cm: v(8)?,
                y_cm: v(9)?,
                x_cm_dot: v(10)?,
                y_cm_dot: v(11)?,
                foot_x: f64::NAN,
            };
            Ok(Record {
                state,
                control: ControlInput { force: v(12)?, tau: v(13)? },
                gamma_ddot: f64::NAN,
                jerk_gamma: v(14)?,
            })
        })
        .collect()
}

pub fn parse_events(text: &str) -> Result<Vec<Event>, CliError> {
    read_table(text, &EVENTS_CSV_HEADER)?
        .iter()
        .map(|rec| {
            let kind = rec.get(1).and_then(EventKind::parse).ok_or_else(|| CliError::Csv(format!("bad event in {rec:?}")))?;
            Ok(Event { t: field_f64(rec, 0)?, kind })
        })
        .collect()
}

pub fn parse_plans(text: &str) -> Result<Vec<PlanRecord>, CliError> {
    read_table(text, &PLANS_CSV_HEADER)?
        .iter()
        .map(|rec| {
            let phase = rec.get(1).and_then(parse_phase).ok_or_else(|| CliError::Csv(format!("bad phase in {rec:?}")))?;
            let iterations = rec
                .get(4)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::Csv(format!("bad iteration count in {rec:?}")))?;
            Ok(PlanRecord { t: field_f64(rec, 0)?, phase, tf: field_f64(rec, 2)?, boundary_residual: field_f64(rec, 3)?, iterations })
        })
        .collect()
}

pub const FIG_STATES_HEADER: [&str; 7] = ["t", "phase", "l", "gamma", "psi", "x_cm", "y_cm"];
pub const FIG_TORQUE_HEADER: [&str; 4] = ["t", "phase", "F", "tau"];
pub const FIG_JERK_HEADER: [&str; 3] = ["t", "phase", "jerk_gamma"];

/// The three per-controller figure tables: states, control, jerk.
pub fn figure_tables(traj: &Trajectory) -> Result<[String; 3], CliError> {
    let head = |r: &Record| vec![fmt_f64(r.t()), r.phase().as_str().to_string()];
    let states = write_table(
        &FIG_STATES_HEADER,
        traj.records.iter().map(|r| {
            let s = &r.state;
            let mut row = head(r);
            row.extend([s.l, s.gamma, s.psi, s.x_cm, s.y_cm].map(fmt_f64));
            row
        }),
    )?;
    let torque = write_table(
        &FIG_TORQUE_HEADER,
        traj.records.iter().map(|r| {
            let mut row = head(r);
            row.extend([r.control.force, r.control.tau].map(fmt_f64));
            row
        }),
    )?;
    let jerk = write_table(
        &FIG_JERK_HEADER,
        traj.records.iter().map(|r| {
            let mut row = head(r);
            row.push(fmt_f64(r.jerk_gamma));
            row
        }),
    )?;
    Ok([states, torque, jerk])
}
