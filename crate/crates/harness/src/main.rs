use std::path::PathBuf;
use std::process::ExitCode;

use chaoslab::config::{load_config, Overrides, StudyKind};
use chaoslab::run_study;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "chaoslab",
    version,
    about = "Mean-field particle system studies on the torus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the mean-field equation on a periodic grid.
    PdeSolve(Common),
    /// Simulate replicated particle ensembles.
    ParticlesRun(Common),
    /// Solve the N = 2, 3 Liouville equation and audit relative entropies.
    LiouvilleRun(Common),
    /// Marginal error against the mean field over a particle-number ladder.
    ChaosStudy(Common),
    /// Change-of-measure and exponential-moment checks.
    VerifyInequalities(Common),
    /// Time the naive and spectral force evaluators.
    BenchForces(Common),
}

#[derive(Args)]
struct Common {
    /// TOML study configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `run.output`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    /// Validate the configuration without running anything.
    #[arg(long)]
    dry_run: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (study, args) = match cli.command {
        Command::PdeSolve(a) => (StudyKind::PdeSolve, a),
        Command::ParticlesRun(a) => (StudyKind::ParticlesRun, a),
        Command::LiouvilleRun(a) => (StudyKind::LiouvilleRun, a),
        Command::ChaosStudy(a) => (StudyKind::ChaosStudy, a),
        Command::VerifyInequalities(a) => (StudyKind::VerifyInequalities, a),
        Command::BenchForces(a) => (StudyKind::BenchForces, a),
    };
    let overrides = Overrides {
        seed: args.seed,
        output: args.out,
        workers: args.workers,
    };
    let cfg = match load_config(&args.config, study, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if args.dry_run {
        println!("{study}: configuration valid (hash {})", cfg.hash());
        return ExitCode::SUCCESS;
    }
    match run_study(&cfg, study) {
        Ok(m) => {
            for c in &m.checks {
                let tag = if c.passed { "ok  " } else { "FAIL" };
                if c.detail.is_empty() {
                    println!("[{tag}] {}", c.name);
                } else {
                    println!("[{tag}] {}: {}", c.name, c.detail);
                }
            }
            println!(
                "{study}: {:?}, {} artifacts in {}",
                m.status,
                m.artifacts.len(),
                cfg.run.output.display()
            );
            if let Some(p) = &m.failure_point {
                eprintln!("failure point: {p}");
            }
            ExitCode::from(m.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
