use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fdelay_cli::error::CliError;
use fdelay_cli::experiment::{prepare, run_density, run_fbm_sample, run_sensitivity, run_simulate, with_threads};
use fdelay_cli::verify::run_suite;

#[derive(Parser)]
#[command(name = "fdelay", version, about = "Delay equations driven by fractional Brownian motion")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Verb {
    /// Solve the equation on `mc_paths` fBm drivers.
    Simulate(RunArgs),
    /// Malliavin matrices, lower bounds and a density estimate of `y_T`.
    Density(RunArgs),
    /// Sensitivity field of the first path.
    Sensitivity(RunArgs),
    /// Sample fBm drivers only.
    FbmSample(RunArgs),
    /// Run acceptance criteria: `all` or a list such as `1,5,12`.
    Verify {
        #[arg(default_value = "all")]
        suite: String,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,

    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("report serializes"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = cli.threads;
    let out = cli.out.as_deref();
    match cli.verb {
        Verb::Simulate(a) => {
            let exp = prepare(&a.config, a.seed, out)?;
            let r = run_simulate(&exp, threads)?;
            eprintln!("{} paths written to {} ({})", exp.config.mc_paths, r.dir.display(), r.manifest.regime);
        }
        Verb::Density(a) => {
            let exp = prepare(&a.config, a.seed, out)?;
            let (_, report) = run_density(&exp, threads)?;
            print_json(&report);
        }
        Verb::Sensitivity(a) => {
            let exp = prepare(&a.config, a.seed, out)?;
            let (_, report) = run_sensitivity(&exp, threads)?;
            print_json(&report);
        }
        Verb::FbmSample(a) => {
            let exp = prepare(&a.config, a.seed, out)?;
            let (_, report) = run_fbm_sample(&exp, threads)?;
            print_json(&report);
        }
        Verb::Verify { suite } => {
            let dir = out.map(PathBuf::from).unwrap_or_else(|| PathBuf::from("verify-out"));
            std::fs::create_dir_all(&dir)?;
            let reports = with_threads(threads, || run_suite(&suite, &dir))??;
            for r in &reports {
                eprintln!("{}", r.line());
            }
            let text = serde_json::to_string_pretty(&reports).expect("report serializes");
            std::fs::write(dir.join("verify.json"), format!("{text}\n"))?;
            println!("{text}");
            if reports.iter().any(|r| !r.pass) {
                return Err(CliError::Verification(
                    reports.iter().filter(|r| !r.pass).map(|r| r.id).collect(),
                ));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
