use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Experiment, ExperimentConfig, MAX_STEPS};
use crate::error::{CliError, CliResult};
use crate::runner::{
    default_out_dir, grad_check_report, rotation_check_report, run_experiment, GRAD_TOL,
};

#[derive(Debug, Parser)]
#[command(
    name = "oplas",
    version,
    about = "Operational latent space experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a projector whose latent sums stand in for source mixes.
    Mixing(RunArgs),
    /// Train an encoder and transform so that one step walks around a ring.
    Stargate(RunArgs),
    /// Learn a ring, then fit a second transform that jumps by fifths.
    Co5(RunArgs),
    /// Compare reverse-mode gradients with central differences.
    GradCheck(CheckArgs),
    /// Measure orthogonality and angle residuals of the plane rotation.
    RotationCheck(CheckArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Partial JSON config merged over the experiment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    steps: Option<i64>,
    /// Output directory (otherwise the config's `output_dir`, then `$OPLAS_OUT/<experiment>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run of the same config.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn resolve(experiment: Experiment, args: &RunArgs) -> CliResult<(ExperimentConfig, PathBuf)> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path, experiment)?,
        None => ExperimentConfig::defaults(experiment),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(steps) = args.steps {
        if !(1..=MAX_STEPS as i64).contains(&steps) {
            return Err(CliError::Usage(format!(
                "--steps must be in 1..={MAX_STEPS}, got {steps}"
            )));
        }
        config.steps = steps as u64;
    }
    config.validate()?;
    let out = args
        .out
        .clone()
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| default_out_dir(experiment));
    Ok((config, out))
}

fn run_command(experiment: Experiment, args: &RunArgs) -> CliResult<()> {
    let (config, out) = resolve(experiment, args)?;
    let summary = run_experiment(&config, &out, args.resume.as_deref())?;
    for line in summary.lines() {
        println!("{line}");
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn grad_check(args: &CheckArgs) -> CliResult<bool> {
    let (reports, worst) = grad_check_report(args.seed)?;
    for r in &reports {
        let mark = if r.max_rel_err < GRAD_TOL {
            "ok"
        } else {
            "FAIL"
        };
        println!(
            "{:<28} {:>3} points  max rel err {:.3e}  {mark}",
            r.name, r.points, r.max_rel_err
        );
    }
    println!("worst {worst:.3e} (tolerance {GRAD_TOL:.0e})");
    Ok(worst < GRAD_TOL)
}

fn rotation_check(args: &CheckArgs) -> CliResult<bool> {
    let (reports, ok) = rotation_check_report(args.seed)?;
    for r in &reports {
        println!(
            "n={:<3} pairs={}  orthogonality {:.2e}  det {:.2e}  complement {:.2e}  angle {:.2e}",
            r.dim, r.pairs, r.orthogonality, r.determinant, r.complement, r.angle
        );
    }
    println!(
        "{}",
        if ok {
            "all residuals within bounds"
        } else {
            "residuals out of bounds"
        }
    );
    Ok(ok)
}

fn dispatch(cli: &Cli) -> CliResult<i32> {
    let passed = match &cli.command {
        Command::Mixing(a) => run_command(Experiment::Mixing, a).map(|()| true)?,
        Command::Stargate(a) => run_command(Experiment::Stargate, a).map(|()| true)?,
        Command::Co5(a) => run_command(Experiment::Co5, a).map(|()| true)?,
        Command::GradCheck(a) => grad_check(a)?,
        Command::RotationCheck(a) => rotation_check(a)?,
    };
    Ok(if passed { 0 } else { 1 })
}

/// Parses `argv` (program name first), runs, and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let informational = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if informational { 0 } else { 1 };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("oplas: {e}");
            e.exit_code()
        }
    }
}
