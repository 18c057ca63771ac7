use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use davie_cli::config::{ConfigError, ExperimentConfig};
use davie_cli::{run, RunError};

/// Simulate Lévy-driven degenerate SDEs and run the numerical checks named in a config.
#[derive(Parser, Debug)]
#[command(name = "davie", version)]
struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config output_dir, else ./davie-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for path ensembles.
    #[arg(long)]
    threads: Option<usize>,
    /// Check to run; repeatable. Replaces the config's list.
    #[arg(long = "check")]
    checks: Vec<String>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let built = ExperimentConfig::from_path(&args.config).and_then(|mut c| {
        if let Some(seed) = args.seed {
            c.seed = seed;
        }
        if !args.checks.is_empty() {
            c.checks = args.checks.clone();
        }
        c.build()
    });
    let exp = match built {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let out = args.out.or_else(|| exp.config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("davie-out"));
    match run(&exp, &exp.config.checks, &out) {
        Ok(summary) => {
            for (name, c) in &summary.checks {
                match &c.error {
                    Some(e) => println!("{name}: FAIL ({e})"),
                    None => println!(
                        "{name}: {} (max residual {:.3e}, tolerance {:.3e})",
                        if c.pass { "PASS" } else { "FAIL" },
                        c.max_residual,
                        c.tolerance
                    ),
                }
            }
            if summary.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(RunError::Config(ConfigError::Io { path, source })) => {
            eprintln!("error: {}: {source}", path.display());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
