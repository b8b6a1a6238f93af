use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pocmw_core::harness::audit::{run_audit, AuditConfig};
use pocmw_core::harness::{emit_report, run_experiment, verify, ExperimentConfig};
use pocmw_core::pocmw::{dpoco_params, lazy_params};
use pocmw_core::Error;

#[derive(Parser)]
#[command(name = "pocmw", version, about = "Lazy and private online convex optimization by Gibbs sampling")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-round traces.
        #[arg(long)]
        trace: bool,
    },
    /// Run the empirical privacy audit.
    Audit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the randomized lemma suites.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print parameter schedules.
    Params {
        #[command(subcommand)]
        which: ParamsCommand,
    },
}

#[derive(Args)]
struct Problem {
    #[arg(long)]
    horizon: u64,
    #[arg(long, default_value_t = 1.0)]
    lipschitz: f64,
    #[arg(long, default_value_t = 1.0)]
    diameter: f64,
    #[arg(long, default_value_t = 1)]
    dimension: usize,
}

#[derive(Subcommand)]
enum ParamsCommand {
    Lazy {
        #[arg(long)]
        switches: u64,
        #[command(flatten)]
        problem: Problem,
    },
    Dp {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[command(flatten)]
        problem: Problem,
    },
}

fn write_json(value: &impl serde::Serialize, out: Option<PathBuf>, name: &str) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(dir) => {
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Run { config, seed, out, trace } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if trace {
                cfg.output.trace = true;
            }
            let dir = out.or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
            let report = run_experiment(&cfg)?;
            for p in emit_report(&report, &dir, cfg.output.curves)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::Audit { config, seed, out } => {
            let mut cfg = AuditConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            let outcome = run_audit(&cfg)?;
            write_json(&outcome, out, "audit.json")?;
            Ok(true)
        }
        Command::Verify { seed } => {
            let mut ok = true;
            for s in verify::run_all(seed)? {
                let tag = if s.passed() { "PASS" } else { "FAIL" };
                println!("{tag} {} ({} checks, {} violations)", s.name, s.checked, s.violations);
                ok &= s.passed();
            }
            Ok(ok)
        }
        Command::Params { which } => {
            let params = match which {
                ParamsCommand::Lazy { switches, problem: p } => {
                    lazy_params(switches, p.horizon, p.lipschitz, p.diameter, p.dimension)
                }
                ParamsCommand::Dp { epsilon, delta, problem: p } => {
                    dpoco_params(epsilon, delta, p.horizon, p.lipschitz, p.diameter, p.dimension)
                }
            }
            .map_err(|e| Error::Config { field: "params".into(), message: e.to_string() })?;
            write_json(&params, None, "")?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
