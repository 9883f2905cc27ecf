//! Command-line frontend: load a scenario (file path or bundled fixture),
//! run one command, print the result, and write artifacts.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use dualport_core::run::{run, Command, OutputFormat, RunFlags};
use dualport_core::scenario::load_scenario;

#[derive(Parser, Debug)]
#[command(
    name = "dualport",
    about = "Stability analysis and simulation of hybrid ac/dc grids under dual-port grid-forming control",
    long_about = None
)]
struct Args {
    /// Scenario file path, or the name of a bundled fixture
    /// (fig8, fig2, fig7-left, fig7-right, hvdc-p2p).
    #[arg(long)]
    scenario: String,

    /// One of: check, eig, steady, simulate, report.
    #[arg(long)]
    command: String,

    /// Directory to write artifacts into (normalized scenario, reports,
    /// trajectory files). Only stdout is produced without it.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Re-check the synchronizing topology after every single line or
    /// machine outage.
    #[arg(long, default_value_t = false)]
    n_minus_one: bool,

    /// Scale every dc conductance by this factor.
    #[arg(long)]
    gdc_scale: Option<f64>,

    /// Integration step in seconds.
    #[arg(long)]
    step: Option<f64>,

    /// Simulation horizon in seconds.
    #[arg(long)]
    t_end: Option<f64>,

    /// Output format: text or machine.
    #[arg(long, default_value = "text")]
    format: String,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command: Command = match args.command.parse() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let format = match args.format.as_str() {
        "text" => OutputFormat::Text,
        "machine" => OutputFormat::Machine,
        other => {
            eprintln!("error: unknown format `{other}`");
            return ExitCode::from(2);
        }
    };
    let mut scenario = match load_scenario(&args.scenario) {
        Ok(s) => s,
        Err(e) => {
            match format {
                OutputFormat::Text => eprintln!("error: {e}"),
                OutputFormat::Machine => println!("error={e}"),
            }
            return ExitCode::from(2);
        }
    };
    let flags = RunFlags {
        gdc_scale: args.gdc_scale,
        step: args.step,
        t_end: args.t_end,
        n_minus_one: args.n_minus_one,
        format,
    };
    let out = run(command, &mut scenario, &flags);
    print!("{}", out.stdout);
    if let Some(dir) = args.out {
        if let Err(e) = std::fs::create_dir_all(&dir) {
            eprintln!("error: cannot create {}: {e}", dir.display());
            return ExitCode::from(2);
        }
        for (name, content) in &out.artifacts {
            let path = dir.join(name);
            if let Err(e) = std::fs::write(&path, content) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
    }
    ExitCode::from(out.exit_code as u8)
}
