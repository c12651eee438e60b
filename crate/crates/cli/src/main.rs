use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use hopper_cli::{compare, simulate, solve_bvp, CliError, REPORT_FILE};
use hopper_core::sim::ControllerKind;

#[derive(Parser)]
#[command(name = "hopper", version, about = "Planar hopper simulator and minimum-jerk planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Controller {
    Raibert,
    Bvp,
}

impl From<Controller> for ControllerKind {
    fn from(c: Controller) -> Self {
        match c {
            Controller::Raibert => ControllerKind::Raibert,
            Controller::Bvp => ControllerKind::JerkBvp,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one controller and write its logs and report.
    Simulate {
        config: PathBuf,
        #[arg(long, value_enum)]
        controller: Option<Controller>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the PD and BVP controllers side by side.
    Compare {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve a built-in test problem and print the solution as CSV.
    SolveBvp {
        name: String,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { config, controller, seed, out } => {
            let r = simulate(&config, controller.map(Into::into), seed, &out)?;
            eprintln!(
                "{} hops, peak stance jerk {:.6e}, max boundary residual {:.3e}; report in {}",
                r.hops,
                r.peak_stance_jerk,
                r.max_boundary_residual,
                out.join(REPORT_FILE).display()
            );
        }
        Command::Compare { config, seed, out } => {
            let r = compare(&config, seed, &out)?;
            eprintln!(
                "peak stance jerk PD {:.6e}, BVP {:.6e}, ratio {:.6e}; report in {}",
                r.pd.peak_stance_jerk,
                r.bvp.peak_stance_jerk,
                r.jerk_ratio,
                out.join(REPORT_FILE).display()
            );
        }
        Command::SolveBvp { name, tol } => {
            let s = solve_bvp(&name, tol)?;
            print!("{}", s.csv);
            eprintln!(
                "mesh points {}, max residual {:.3e}, bc residual {:.3e}, newton iterations {}, max error {:.3e}",
                s.mesh_points, s.max_residual, s.bc_residual, s.iterations, s.max_error
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
