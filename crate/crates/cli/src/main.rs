use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use conceptsim_cli::pipeline::{self, Workspace};
use conceptsim_cli::{PipelineConfig, Result};
use serde_json::json;

/// Concept-level representational similarity between two networks.
#[derive(Debug, Parser)]
#[command(name = "conceptsim", version)]
struct Cli {
    /// Pipeline configuration (TOML); every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the pipeline seed (and the synthetic generator's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic bundle pair with known ground truth.
    Synth,
    /// Factorize every selected (model, layer, class) activation matrix.
    Extract,
    /// Regress concepts across models, run the replacement test and attributions.
    Compare,
    /// Mean-max concept similarity between all pairs of selected layers.
    Layerwise,
    /// Explain the selected concepts with patch lists and optional collages.
    Report,
}

fn configure(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.synth.spec.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<serde_json::Value> {
    let config = configure(cli)?;
    Ok(match cli.command {
        Command::Synth => {
            let out = pipeline::synth(&config)?;
            json!({
                "stage": "synth",
                "model1": out.model1.bundle,
                "model2": out.model2.bundle,
                "truth": out.truth,
            })
        }
        Command::Extract => {
            let items = pipeline::extract(&Workspace::open(&config, "extract")?)?;
            json!({
                "stage": "extract",
                "decompositions": items.len(),
                "cached": items.iter().filter(|i| i.cached).count(),
            })
        }
        Command::Compare => {
            let results = pipeline::compare(&Workspace::open(&config, "compare")?)?;
            json!({
                "stage": "compare",
                "classes": results.len(),
                "concepts": results.iter().map(|r| r.records.len()).sum::<usize>(),
                "notes": results.iter().flat_map(|r| &r.notes).collect::<Vec<_>>(),
            })
        }
        Command::Layerwise => {
            let out = pipeline::layerwise(&Workspace::open(&config, "layerwise")?)?;
            json!({ "stage": "layerwise", "csv": out.csv, "cached": out.cached })
        }
        Command::Report => {
            let out = pipeline::report(&config)?;
            json!({
                "stage": "report",
                "candidates": out.candidates,
                "reports": out.index.reports.len(),
                "collages": out.collages.len(),
            })
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
