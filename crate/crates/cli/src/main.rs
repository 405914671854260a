mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use projhead_core::verify::Suite;

use commands::{Failure, Options};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Closed-form feature weights, discriminant and depth curves.
    Predict,
    /// Train one model per seed and export trajectories.
    Train,
    /// Run property suites; exits 1 if any assertion fails.
    Verify,
    /// Train over a parameter grid and aggregate over seeds.
    Sweep,
}

#[derive(Parser, Debug)]
#[command(name = "projhead-lab", version, about = "Layer-wise feature weighting experiments on synthetic data")]
struct Args {
    command: Command,

    #[arg(long)]
    config: PathBuf,

    /// Output root; the experiment id is appended.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Use seeds 0..N instead of the config's seed list.
    #[arg(long)]
    seeds: Option<usize>,

    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,

    /// Restrict `verify` to these suites (repeatable).
    #[arg(long = "suite", value_parser = parse_suite)]
    suites: Vec<Suite>,
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: projhead_core::Error| e.to_string())
}

fn run(args: &Args) -> Result<bool, Failure> {
    let loaded = config::load(&args.config).map_err(Failure::Config)?;
    let opts = Options { out: args.out.clone(), seeds: args.seeds, jobs: args.jobs, suites: args.suites.clone() };
    let id = &loaded.config.id;
    match args.command {
        Command::Predict => {
            let m = commands::predict(&loaded, &opts)?;
            println!("{id}: wrote {} files", m.files.len());
            for inv in &m.invariants {
                println!("{} {}: {}", if inv.passed { "ok  " } else { "FAIL" }, inv.name, inv.detail);
            }
            Ok(true)
        }
        Command::Train => {
            let m = commands::train_cmd(&loaded, &opts)?;
            for o in &m.outcomes {
                println!("seed {}: {}{}", o.seed, if o.ok { "" } else { "failed: " }, o.summary);
            }
            if m.outcomes.iter().any(|o| !o.ok) {
                return Err(Failure::Runtime(anyhow::anyhow!("some seeds failed")));
            }
            Ok(true)
        }
        Command::Verify => {
            let (m, reports) = commands::verify_cmd(&loaded, &opts)?;
            for r in &reports {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.suite, r.summary());
            }
            Ok(m.all_passed())
        }
        Command::Sweep => {
            let m = commands::sweep_cmd(&loaded, &opts)?;
            let failed = m.outcomes.iter().filter(|o| !o.ok).count();
            println!("{id}: {} runs, {failed} failed, {} files", m.outcomes.len(), m.files.len());
            for inv in &m.invariants {
                println!("{} {}", if inv.passed { "ok  " } else { "FAIL" }, inv.name);
            }
            if failed > 0 {
                return Err(Failure::Runtime(anyhow::anyhow!("{failed} runs failed")));
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("projhead-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
