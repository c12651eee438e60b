//! Command implementations behind the `hopper` binary.
//!
//! Each command returns a typed report; the binary only parses arguments and
//! maps [`CliError`] onto exit codes (1 for usage/config, 2 for runtime).

pub mod csv_io;

use std::fs;
use std::path::{Path, PathBuf};

use hopper_core::bvp::{battery, solve, BvpOptions};
use hopper_core::config::RunConfig;
use hopper_core::sim::{run_partial, ControllerKind, Metrics, Trajectory};
use hopper_core::HopperError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(HopperError),
    #[error("run failed: {0}")]
    Runtime(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed csv: {0}")]
    Csv(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            _ => 2,
        }
    }
}

pub const REPORT_FILE: &str = "report.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmittedFiles {
    pub trajectory: String,
    pub events: String,
    pub plans: String,
}

impl EmittedFiles {
    fn with_prefix(prefix: &str) -> Self {
        Self {
            trajectory: format!("{prefix}trajectory.csv"),
            events: format!("{prefix}events.csv"),
            plans: format!("{prefix}plans.csv"),
        }
    }
}

/// Per-controller summary. Every number is recomputable from the emitted
/// trajectory and plan CSVs via [`Metrics::compute`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub controller: String,
    pub seed: u64,
    pub dt: f64,
    pub hops: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub peak_stance_jerk: f64,
    pub rms_stance_jerk: f64,
    pub peak_tau: f64,
    pub peak_force: f64,
    pub control_effort: f64,
    pub mean_forward_speed: f64,
    pub max_boundary_residual: f64,
    pub apex_heights: Vec<f64>,
    pub boundary_residuals: Vec<f64>,
    pub files: EmittedFiles,
}

impl RunReport {
    fn new(kind: ControllerKind, seed: u64, traj: &Trajectory, error: Option<&HopperError>, files: EmittedFiles) -> Self {
        let m = traj.metrics();
        Self {
            controller: kind.as_str().to_string(),
            seed,
            dt: traj.dt,
            hops: traj.hops(),
            error: error.map(|e| e.to_string()),
            peak_stance_jerk: m.peak_stance_jerk,
            rms_stance_jerk: m.rms_stance_jerk,
            peak_tau: m.peak_tau,
            peak_force: m.peak_force,
            control_effort: m.control_effort,
            mean_forward_speed: m.mean_forward_speed,
            max_boundary_residual: m.max_boundary_residual,
            apex_heights: m.apex_heights,
            boundary_residuals: m.boundary_residuals,
            files,
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            peak_stance_jerk: self.peak_stance_jerk,
            rms_stance_jerk: self.rms_stance_jerk,
            peak_tau: self.peak_tau,
            peak_force: self.peak_force,
            control_effort: self.control_effort,
            apex_heights: self.apex_heights.clone(),
            mean_forward_speed: self.mean_forward_speed,
            max_boundary_residual: self.max_boundary_residual,
            boundary_residuals: self.boundary_residuals.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub seed: u64,
    /// Peak stance jerk of the PD run over that of the BVP run.
    pub jerk_ratio: f64,
    pub pd: RunReport,
    pub bvp: RunReport,
}

pub fn jerk_ratio(pd: &Metrics, bvp: &Metrics) -> f64 {
    pd.peak_stance_jerk / bvp.peak_stance_jerk
}

/// Recomputes the metrics of a run from its emitted files.
pub fn metrics_from_files(dir: &Path, files: &EmittedFiles, dt: f64) -> Result<Metrics, CliError> {
    let records = csv_io::parse_trajectory(&read(&dir.join(&files.trajectory))?)?;
    let plans = csv_io::parse_plans(&read(&dir.join(&files.plans))?)?;
    Ok(Metrics::compute(&records, &plans, dt))
}

pub fn read_report<T: for<'de> Deserialize<'de>>(dir: &Path) -> Result<T, CliError> {
    let path = dir.join(REPORT_FILE);
    toml::from_str(&read(&path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    RunConfig::load(path).map_err(CliError::Config)
}

fn run_with(cfg: &RunConfig, kind: ControllerKind, seed: u64) -> (Trajectory, Option<HopperError>) {
    let mut sim = cfg.sim;
    sim.controller = kind;
    sim.seed = seed;
    run_partial(&sim, &cfg.params, &cfg.gains)
}

fn write_run(dir: &Path, files: &EmittedFiles, traj: &Trajectory) -> Result<(), CliError> {
    write(&dir.join(&files.trajectory), &csv_io::trajectory_csv(traj)?)?;
    write(&dir.join(&files.events), &csv_io::events_csv(&traj.events)?)?;
    write(&dir.join(&files.plans), &csv_io::plans_csv(&traj.plans)?)
}

fn to_toml<T: Serialize>(value: &T) -> Result<String, CliError> {
    toml::to_string(value).map_err(|e| CliError::Csv(format!("report serialisation: {e}")))
}

/// Runs one controller and writes `trajectory.csv`, `events.csv`,
/// `plans.csv` and `report.toml` into `out`. Logs are kept on failure.
pub fn simulate(config: &Path, controller: Option<ControllerKind>, seed: Option<u64>, out: &Path) -> Result<RunReport, CliError> {
    let cfg = load_config(config)?;
    let kind = controller.unwrap_or(cfg.sim.controller);
    let seed = seed.unwrap_or(cfg.sim.seed);
    create_dir(out)?;

    let (traj, err) = run_with(&cfg, kind, seed);
    let files = EmittedFiles::with_prefix("");
    write_run(out, &files, &traj)?;
    let report = RunReport::new(kind, seed, &traj, err.as_ref(), files);
    write(&out.join(REPORT_FILE), &to_toml(&report)?)?;
    match err {
        Some(e) => Err(CliError::Runtime(e.to_string())),
        None => Ok(report),
    }
}

const FIGURES_PD: [&str; 3] = ["fig3_states.csv", "fig4_torque.csv", "fig5_jerk.csv"];
const FIGURES_BVP: [&str; 3] = ["fig6_states.csv", "fig7_torque.csv", "fig8_jerk.csv"];

const PLOT_SCRIPT: &str = r#"# gnuplot -persist plot.gp
set datafile separator ","
set key autotitle columnhead
set multiplot layout 3,2
set title "PD: leg length and angle"
plot "fig3_states.csv" using 1:3 with lines, "" using 1:4 with lines, "" using 1:5 with lines
set title "BVP: leg length and angle"
plot "fig6_states.csv" using 1:3 with lines, "" using 1:4 with lines, "" using 1:5 with lines
set title "PD: controls"
plot "fig4_torque.csv" using 1:3 with lines, "" using 1:4 with lines
set title "BVP: controls"
plot "fig7_torque.csv" using 1:3 with lines, "" using 1:4 with lines
set title "PD: leg-angle jerk"
plot "fig5_jerk.csv" using 1:3 with lines
set title "BVP: leg-angle jerk"
plot "fig8_jerk.csv" using 1:3 with lines
unset multiplot
"#;

/// Seed offsets for the two controllers of a comparison.
pub const PD_SEED_OFFSET: u64 = 0;
pub const BVP_SEED_OFFSET: u64 = 1;

/// Runs both controllers on the same configuration and writes `pd_*` and
/// `bvp_*` logs, the figure tables, `plot.gp` and `report.toml`.
pub fn compare(config: &Path, seed: Option<u64>, out: &Path) -> Result<CompareReport, CliError> {
    let cfg = load_config(config)?;
    let seed = seed.unwrap_or(cfg.sim.seed);
    create_dir(out)?;

    let pd_seed = seed.wrapping_add(PD_SEED_OFFSET);
    let bvp_seed = seed.wrapping_add(BVP_SEED_OFFSET);
    let ((pd, pd_err), (bvp, bvp_err)) = std::thread::scope(|s| {
        let pd = s.spawn(|| run_with(&cfg, ControllerKind::Raibert, pd_seed));
        let bvp = run_with(&cfg, ControllerKind::JerkBvp, bvp_seed);
        (pd.join().expect("simulation thread panicked"), bvp)
    });

    let pd_files = EmittedFiles::with_prefix("pd_");
    let bvp_files = EmittedFiles::with_prefix("bvp_");
    write_run(out, &pd_files, &pd)?;
    write_run(out, &bvp_files, &bvp)?;
    for (traj, names) in [(&pd, FIGURES_PD), (&bvp, FIGURES_BVP)] {
        for (table, name) in csv_io::figure_tables(traj)?.iter().zip(names) {
            write(&out.join(name), table)?;
        }
    }
    write(&out.join("plot.gp"), PLOT_SCRIPT)?;

    let pd_report = RunReport::new(ControllerKind::Raibert, pd_seed, &pd, pd_err.as_ref(), pd_files);
    let bvp_report = RunReport::new(ControllerKind::JerkBvp, bvp_seed, &bvp, bvp_err.as_ref(), bvp_files);
    let report = CompareReport {
        seed,
        jerk_ratio: jerk_ratio(&pd_report.metrics(), &bvp_report.metrics()),
        pd: pd_report,
        bvp: bvp_report,
    };
    write(&out.join(REPORT_FILE), &to_toml(&report)?)?;
    match pd_err.or(bvp_err) {
        Some(e) => Err(CliError::Runtime(e.to_string())),
        None => Ok(report),
    }
}

/// Initial mesh for the standalone battery problems.
pub const BATTERY_INTERVALS: usize = 10;
const SAMPLES_PER_INTERVAL: usize = 4;

#[derive(Debug, Clone)]
pub struct BvpSummary {
    pub csv: String,
    pub mesh_points: usize,
    pub max_residual: f64,
    pub bc_residual: f64,
    pub iterations: usize,
    /// Largest absolute deviation from the exact solution over mesh and samples.
    pub max_error: f64,
}

/// Solves a battery problem. The CSV lists every mesh node and dense
/// samples between them alongside the pointwise error.
pub fn solve_bvp(name: &str, tol: f64) -> Result<BvpSummary, CliError> {
    let tp = battery::by_name(name, BATTERY_INTERVALS)
        .ok_or_else(|| CliError::Usage(format!("unknown problem {name:?}; valid names: {}", battery::NAMES.join(", "))))?;
    if !(tol.is_finite() && tol > 0.0) {
        return Err(CliError::Usage(format!("--tol must be a positive number, got {tol}")));
    }
    let opts = BvpOptions { defect_tol: tol, bc_tol: tol.min(BvpOptions::default().bc_tol), ..Default::default() };
    let sol = solve(&tp.problem, &opts).map_err(|e| CliError::Runtime(e.to_string()))?;

    let dim = sol.dim();
    let mut header = vec!["kind".to_string(), "t".to_string()];
    header.extend((0..dim).map(|i| format!("x{i}")));
    header.push("error".to_string());

    let mut max_error = 0.0f64;
    let mut rows = Vec::new();
    let mut push = |kind: &str, t: f64, x: Vec<f64>| {
        let exact = (tp.exact)(t);
        let err = x.iter().zip(&exact).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        max_error = max_error.max(err);
        let mut row = vec![kind.to_string(), csv_io::fmt_f64(t)];
        row.extend(x.into_iter().map(csv_io::fmt_f64));
        row.push(csv_io::fmt_f64(err));
        rows.push(row);
    };
    for (i, &t) in sol.mesh.iter().enumerate() {
        push("mesh", t, sol.states[i].clone());
        if let Some(&t_next) = sol.mesh.get(i + 1) {
            for j in 1..SAMPLES_PER_INTERVAL {
                let ts = t + (t_next - t) * j as f64 / SAMPLES_PER_INTERVAL as f64;
                push("sample", ts, sol.eval(ts).map_err(|e| CliError::Runtime(e.to_string()))?);
            }
        }
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    Ok(BvpSummary {
        csv: csv_io::write_table(&header_refs, rows)?,
        mesh_points: sol.mesh.len(),
        max_residual: sol.max_residual,
        bc_residual: sol.bc_residual,
        iterations: sol.iterations,
        max_error,
    })
}
