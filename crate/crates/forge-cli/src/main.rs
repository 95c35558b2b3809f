//! `forge` — command-line driver for the domain-adaptation data pipeline.
//!
//! One subcommand per stage (quality filtering, exercise extraction,
//! mixture/curriculum assembly, packing, decontamination, preference-pair
//! synthesis, evaluation) plus `dryrun`, which exercises the whole chain on
//! generated toy data with scripted endpoints.
//!
//! Exit codes: 0 success, 1 stage failure (a `FAILED` marker with the error
//! is left in the stage's output directory; partial outputs are kept for
//! inspection), 2 usage or configuration error.

mod config;
mod dryrun;
mod mocks;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{resolve, PipelineConfig};

#[derive(Parser, Debug)]
#[command(name = "forge", version, about = "Batch pipeline for domain-adaptive post-training data")]
struct Cli {
    /// Pipeline config (TOML); `dryrun` generates its own instead.
    #[arg(long, global = true, default_value = "forge.toml")]
    config: PathBuf,
    /// Directory that relative paths resolve against.
    #[arg(long, global = true, default_value = ".")]
    workspace: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score documents with an LLM quality judge and keep the high scorers.
    Filter(stages::FilterArgs),
    /// Mine exercises out of book-like documents, backfilling missing answers.
    ExtractExercises(stages::ExtractArgs),
    /// Assemble a weighted mixture or a grouped curriculum from unit pools.
    Mix(stages::MixArgs),
    /// Render, loss-mask, and pack units into fixed-context records.
    Pack(stages::PackArgs),
    /// Scan training text against evaluation sets for contamination.
    Decontam(stages::DecontamArgs),
    /// Synthesize preference pairs from sampled trajectories.
    SynthPa(stages::SynthArgs),
    /// Run the capability-tagged evaluation harness.
    Eval(stages::EvalArgs),
    /// Run every stage end to end on generated toy data with mock endpoints.
    Dryrun(dryrun::DryrunArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<stages::UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                write_failure_marker(&cli, &err);
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Command::Dryrun(args) = &cli.command {
        return dryrun::run(&cli.workspace, cli.seed, args);
    }
    let config_path = resolve(&cli.workspace, &cli.config);
    let mut config =
        PipelineConfig::load(&config_path).map_err(|e| stages::usage(format!("{e:#}")))?;
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(stages::usage(format!(
            "config {} is invalid:\n  - {}",
            config_path.display(),
            violations.join("\n  - ")
        )));
    }
    match &cli.command {
        Command::Filter(args) => stages::run_filter(&config, &cli.workspace, args),
        Command::ExtractExercises(args) => stages::run_extract(&config, &cli.workspace, args),
        Command::Mix(args) => stages::run_mix(&config, &cli.workspace, args),
        Command::Pack(args) => stages::run_pack(&config, &cli.workspace, args),
        Command::Decontam(args) => stages::run_decontam(&config, &cli.workspace, args),
        Command::SynthPa(args) => stages::run_synth(&config, &cli.workspace, args),
        Command::Eval(args) => stages::run_eval(&config, &cli.workspace, args),
        Command::Dryrun(_) => unreachable!("handled above"),
    }
}

/// Where a FAILED marker belongs: the directory holding the subcommand's
/// primary output.
fn failure_dir(cli: &Cli) -> Option<PathBuf> {
    let parent = |p: &Path| p.parent().map(Path::to_path_buf);
    let dir = match &cli.command {
        Command::Filter(a) => parent(&a.out)?,
        Command::ExtractExercises(a) => parent(&a.out)?,
        Command::Mix(a) => match (&a.out_dir, &a.out) {
            (Some(dir), _) => dir.clone(),
            (None, Some(out)) => parent(out)?,
            (None, None) => return None,
        },
        Command::Pack(a) => parent(&a.out)?,
        Command::Decontam(a) => parent(&a.report)?,
        Command::SynthPa(a) => parent(&a.out)?,
        Command::Eval(a) => a.out.clone(),
        Command::Dryrun(a) => a.out.clone(),
    };
    Some(resolve(&cli.workspace, &dir))
}

fn write_failure_marker(cli: &Cli, err: &anyhow::Error) {
    let Some(dir) = failure_dir(cli) else {
        return;
    };
    if std::fs::create_dir_all(&dir).is_err() {
        return;
    }
    let _ = std::fs::write(dir.join("FAILED"), format!("{err:#}\n"));
}
