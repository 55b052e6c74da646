use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use melt_control::driver::{load_simulation, run_simulation, verify_first_step, RunOverrides};
use melt_control::state::oracle::compare_with_enumeration;
use melt_control::Error;

#[derive(Parser)]
#[command(name = "melt-control", version, about = "Instantaneous boundary control of a melting front")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the time loop and write records.csv
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Shortened run: 100 steps in 1D, 25x50 cells in 2D
        #[arg(long)]
        fast: bool,
        /// Fill the wall_ms column
        #[arg(long)]
        timings: bool,
    },
    /// Solve the first step and check solver invariants
    Verify {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare the state solver with active-set enumeration
    Oracle {
        #[arg(long)]
        nodes: usize,
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } => 4,
        _ => 3,
    }
}

fn execute(cmd: Command) -> Result<bool, Error> {
    match cmd {
        Command::Run {
            config,
            output_dir,
            fast,
            timings,
        } => {
            let ov = RunOverrides {
                output_dir,
                fast,
                timings,
                ..RunOverrides::default()
            };
            let sim = load_simulation(&config, &ov)?;
            let dir = sim.output.as_ref().map(|o| o.dir.clone());
            let out = run_simulation(sim)?;
            if let Some(last) = out.records.last() {
                println!("steps: {}  final J: {:.6e}", out.records.len(), last.j);
            }
            if let Some(dir) = dir {
                println!("records: {}", dir.join("records.csv").display());
            }
            Ok(true)
        }
        Command::Verify { config } => {
            let sim = load_simulation(&config, &RunOverrides::default())?;
            let checks = verify_first_step(sim)?;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(checks.iter().all(|c| c.passed))
        }
        Command::Oracle {
            nodes,
            instances,
            seed,
        } => {
            let r = compare_with_enumeration(nodes, instances, seed)?;
            let passed = r.max_diff_y <= 1e-10 && r.max_diff_xi <= 1e-10;
            println!(
                "{} {} instances, {nodes} free nodes: max |dy| {:.3e}, max |dxi| {:.3e}",
                if passed { "PASS" } else { "FAIL" },
                r.instances,
                r.max_diff_y,
                r.max_diff_xi
            );
            Ok(passed)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
