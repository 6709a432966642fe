use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cutcell::driver::{run, Config, RunOptions, Scenario};
use cutcell::mesh::Mesh;
use cutcell::Error;
use serde_json::json;

#[derive(Parser)]
#[command(name = "solver", version, about = "Cut-cell hp-AMR Euler solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to its final time or steady state.
    Run {
        config: PathBuf,
        /// Directory for snapshots, CSV tables and the run summary.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Simulated time between VTK snapshots.
        #[arg(long)]
        snapshot_every: Option<f64>,
    },
    /// Print the level-0 cell classification and merge targets as CSV.
    MeshDump { config: PathBuf },
}

fn diagnostic(e: &Error) -> serde_json::Value {
    let kind = match e {
        Error::Parameter(_) => "parameter",
        Error::Quadrature { .. } => "quadrature",
        Error::UnmergeableCell { .. } => "unmergeable-cell",
        Error::DegenerateElement { .. } => "degenerate-element",
        Error::Positivity { .. } => "positivity",
        Error::NonPhysical { .. } => "non-physical",
        Error::Vacuum => "vacuum",
        Error::Transfer(_) => "transfer",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
    };
    let mut v = json!({ "error": kind, "message": e.to_string() });
    match e {
        Error::Positivity {
            level,
            element,
            rho,
            pressure,
        } => {
            v["level"] = json!(level);
            v["element"] = json!(element);
            v["rho"] = json!(rho);
            v["pressure"] = json!(pressure);
        }
        Error::Quadrature { cell, .. } | Error::UnmergeableCell { cell } => v["cell"] = json!(cell),
        _ => {}
    }
    v
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("{}", diagnostic(e));
    match e {
        Error::Config(_) => ExitCode::from(2),
        _ => ExitCode::from(3),
    }
}

fn scenario(path: &Path) -> Result<Scenario, Error> {
    Scenario::from_config(&Config::load(path)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            threads,
            max_steps,
            snapshot_every,
        } => {
            if let Some(n) = threads {
                if n == 0 {
                    return fail(&Error::Config("--threads must be positive".into()));
                }
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    return fail(&Error::Config(e.to_string()));
                }
            }
            if snapshot_every.is_some_and(|s| !(s > 0.0)) {
                return fail(&Error::Config("--snapshot-every must be positive".into()));
            }
            let sc = match scenario(&config) {
                Ok(s) => s,
                Err(e) => return fail(&e),
            };
            let opts = RunOptions {
                out,
                max_steps,
                snapshot_every,
            };
            match run(&sc, &opts) {
                Ok((_, s)) => {
                    println!(
                        "{}: {} steps, t = {:.6}, {} regrids, elements per level {:?}",
                        s.scenario, s.steps, s.t, s.regrids, s.final_elements
                    );
                    if let Some(t) = s.steady_at {
                        println!("steady state at t = {t:.6}");
                    }
                    if let Some(e) = s.errors {
                        println!("density error: L2 {:.6e}, Linf {:.6e}", e.l2, e.linf);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::MeshDump { config } => {
            let sc = match scenario(&config) {
                Ok(s) => s,
                Err(e) => return fail(&e),
            };
            let nu = sc.hierarchy.levels[0].nu_bar;
            let mesh = match Mesh::build(&sc.grid, &sc.phi, nu, &sc.hierarchy.spec(0)) {
                Ok(m) => m,
                Err(e) => return fail(&e),
            };
            let stdout = std::io::stdout();
            let mut w = std::io::BufWriter::new(stdout.lock());
            if let Err(e) = mesh.write_debug_csv(&mut w).and_then(|_| w.flush().map_err(Error::from)) {
                return fail(&e);
            }
            ExitCode::SUCCESS
        }
    }
}
