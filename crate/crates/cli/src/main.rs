use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use tnn_eig::driver::{self, RunConfig, RunOptions};

/// Train tensor neural networks for the leading eigenpairs of a separable
/// eigenvalue problem and report Ritz values and errors.
#[derive(Parser, Debug)]
#[command(name = "tnn-eig", version)]
struct Args {
    /// TOML run configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration.
    #[arg(long, value_parser = driver::PRESETS)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for results and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps_adam: Option<u64>,
    #[arg(long)]
    steps_lbfgs: Option<u64>,
    /// Continue training from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Run on the calling thread only.
    #[arg(long)]
    sequential: bool,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

enum Failure {
    Config(anyhow::Error),
    Numerical(anyhow::Error),
}

fn resolve(args: &Args) -> anyhow::Result<RunConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => driver::preset(name)?,
        (None, None) => anyhow::bail!("one of --config or --preset is required"),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    if let Some(n) = args.steps_adam {
        cfg.optimizer.adam_steps = n;
    }
    if let Some(n) = args.steps_lbfgs {
        cfg.optimizer.lbfgs_steps = n;
    }
    if args.sequential {
        cfg.sequential = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(args: &Args) -> Result<(), Failure> {
    let cfg = resolve(args).map_err(Failure::Config)?;
    if args.print_config {
        print!("{}", cfg.to_toml().map_err(|e| Failure::Config(e.into()))?);
        return Ok(());
    }
    let opts = RunOptions { resume: args.resume.clone(), write_files: true };
    let report = driver::run(&cfg, &opts).map_err(|e| {
        let wrapped = anyhow::Error::new(e);
        let config = wrapped.downcast_ref::<tnn_eig::Error>().is_some_and(|e| e.is_config_error());
        if config {
            Failure::Config(wrapped)
        } else {
            Failure::Numerical(wrapped)
        }
    })?;
    print!("{}", driver::format_table(&report));
    println!(
        "final loss {:.15}  ({:.1} s)  results in {}",
        report.final_loss,
        report.timing.total_seconds,
        cfg.output.dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            let e = e.context("numerical failure");
            eprintln!("{e:#}");
            ExitCode::from(3)
        }
    }
}
