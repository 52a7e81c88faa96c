use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use lbc_core::experiment::{self, Manifest, Preset};
use lbc_core::{ExecMode, RunConfig};

/// Learnable behavior control experiments on tabular environments.
#[derive(Parser, Debug)]
#[command(name = "lbc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one preset over a range of seeds.
    Run {
        #[arg(long)]
        preset: String,
        /// TOML config file, or `default`.
        #[arg(long, default_value = "default")]
        config: String,
        /// `a..b` (inclusive), a single seed, or a comma-separated list.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the execution mode from the config.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Summarize every preset under a run directory.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Print the machine-readable summary instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Compare final-window returns of two preset directories.
    Compare {
        dir_a: PathBuf,
        dir_b: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Re-run the seeds recorded in a manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Sequential,
    Concurrent,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let text = text.trim();
    let seeds = if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().with_context(|| format!("bad seed range start in `{text}`"))?;
        let b: u64 = b.trim().trim_start_matches('=').parse().with_context(|| format!("bad seed range end in `{text}`"))?;
        if b < a {
            bail!("empty seed range `{text}`");
        }
        (a..=b).collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed `{s}`")))
            .collect::<Result<Vec<_>>>()?
    };
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(seeds)
}

fn load_config(arg: &str) -> Result<RunConfig> {
    if arg == "default" {
        return Ok(RunConfig::default());
    }
    let text = std::fs::read_to_string(arg).with_context(|| format!("reading config {arg}"))?;
    RunConfig::from_toml(&text).with_context(|| format!("parsing config {arg}"))
}

fn finish(manifest: &Manifest, dir: &Path) -> Result<ExitCode> {
    let failed: Vec<_> = manifest.status.iter().filter(|s| !s.ok).collect();
    println!("{} seeds written to {}", manifest.status.len() - failed.len(), dir.display());
    if failed.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    for s in failed {
        eprintln!("seed {} failed: {}", s.seed, s.error.as_deref().unwrap_or("unknown error"));
    }
    Ok(ExitCode::FAILURE)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { preset, config, seeds, out, mode } => {
            let preset: Preset = preset.parse()?;
            let mut cfg = load_config(&config)?;
            if let Some(m) = mode {
                cfg.mode = match m {
                    Mode::Sequential => ExecMode::Sequential,
                    Mode::Concurrent => ExecMode::Concurrent,
                };
            }
            let seeds = parse_seeds(&seeds)?;
            log::info!("running {preset} on {} seeds", seeds.len());
            let manifest = experiment::run_preset(preset, &cfg, &seeds, &out)?;
            finish(&manifest, &out.join(preset.name()))
        }
        Command::Report { out, json } => {
            let summary = experiment::report(&out)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                println!("{summary}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { dir_a, dir_b, json } => {
            let cmp = experiment::compare(&dir_a, &dir_b)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&cmp)?);
            } else {
                println!("{cmp}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Rerun { manifest, out } => {
            let m = Manifest::load(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
            let m = experiment::rerun_manifest(&m, &out)?;
            finish(&m, &out)
        }
        Command::DefaultConfig => {
            print!("{}", RunConfig::default().to_toml());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
