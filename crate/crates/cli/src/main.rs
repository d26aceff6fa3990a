use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use heritage_cli::server::{self, AppState};
use heritage_core::config::Config;
use heritage_core::fixtures::synth_town;
use heritage_core::pipeline::{Pipeline, PipelineError, Stage, StageOptions, StageReport};
use serde_json::json;

#[derive(Parser)]
#[command(name = "heritage", about = "Street-view heritage value pipeline", version)]
struct Cli {
    /// Workspace directory holding stage artifacts.
    #[arg(long, global = true, default_value = "workspace")]
    workspace: PathBuf,
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "config.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate the input datasets.
    Ingest {
        /// Reference year for construction-year validation.
        #[arg(long)]
        current_year: Option<i32>,
    },
    /// Link certificates to footprints and attach registers and areas.
    Match,
    /// Compute and filter road-to-wall sightlines.
    Sightlines,
    /// Derive one camera pose per target.
    PlanViews,
    /// Query coverage and fetch facade images.
    Fetch,
    /// Prompt the model for every fetched image.
    Assess {
        /// Stop after this many new model calls.
        #[arg(long)]
        max_new: Option<usize>,
    },
    /// Filter by visibility and keep the best observation per certificate.
    Aggregate,
    /// Assign heritage groups.
    Assign,
    /// Write the report tables.
    Report,
    /// Run every stage in order.
    Run {
        #[arg(long)]
        current_year: Option<i32>,
        #[arg(long)]
        max_new: Option<usize>,
    },
    /// Draw a seeded review sample and print it as JSON.
    Sample {
        #[arg(long)]
        n: usize,
        /// Defaults to the configured heritage threshold.
        #[arg(long)]
        min_score: Option<u32>,
        /// Region names to stratify over; repeatable or comma-separated.
        #[arg(long, value_delimiter = ',')]
        region: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve results and review endpoints over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
    /// Write a synthetic town (inputs, panoramas and config) to a directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        buildings: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn print_report(r: &StageReport) {
    for w in &r.warnings {
        eprintln!("warning [{}]: {w}", r.stage.as_str());
    }
    println!("{}", json!({ "stage": r.stage.as_str(), "summary": r.summary }));
}

fn fail(e: &PipelineError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn load_config(path: &Path) -> Result<Config, PipelineError> {
    Ok(Config::load(path)?)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let stage = match &cli.command {
        Command::Ingest { .. } => Some(Stage::Ingest),
        Command::Match => Some(Stage::Match),
        Command::Sightlines => Some(Stage::Sightlines),
        Command::PlanViews => Some(Stage::PlanViews),
        Command::Fetch => Some(Stage::Fetch),
        Command::Assess { .. } => Some(Stage::Assess),
        Command::Aggregate => Some(Stage::Aggregate),
        Command::Assign => Some(Stage::Assign),
        Command::Report => Some(Stage::Report),
        _ => None,
    };
    if let Command::Synth { out, buildings, seed } = &cli.command {
        let cfg = synth_town(*seed, *buildings).write(out).with_context(|| format!("writing {}", out.display()))?;
        println!("{}", json!({ "config": cfg, "buildings": buildings, "seed": seed }));
        return Ok(ExitCode::SUCCESS);
    }
    let config = match load_config(&cli.config) {
        Ok(c) => c,
        Err(e) => return Ok(fail(&e)),
    };
    std::fs::create_dir_all(&cli.workspace).with_context(|| format!("creating {}", cli.workspace.display()))?;
    let pipeline = Pipeline::new(&cli.workspace, config);
    let opts = match &cli.command {
        Command::Ingest { current_year } => StageOptions { current_year: *current_year, ..Default::default() },
        Command::Assess { max_new } => StageOptions { max_new: *max_new, ..Default::default() },
        Command::Run { current_year, max_new } => StageOptions { max_new: *max_new, current_year: *current_year },
        _ => StageOptions::default(),
    };
    if let Some(stage) = stage {
        return Ok(match pipeline.run_stage(stage, &opts) {
            Ok(r) => {
                print_report(&r);
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        });
    }
    match cli.command {
        Command::Run { .. } => {
            for s in Stage::ALL {
                match pipeline.run_stage(s, &opts) {
                    Ok(r) => print_report(&r),
                    Err(e) => return Ok(fail(&e)),
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sample { n, min_score, region, seed } => {
            let min = min_score.unwrap_or(pipeline.config.pipeline.heritage_threshold);
            let regions: Vec<String> = region.into_iter().map(|r| r.trim().to_string()).filter(|r| !r.is_empty()).collect();
            let regions = (!regions.is_empty()).then_some(regions);
            match pipeline.sample(n, min, regions.as_deref(), seed) {
                Ok(s) => {
                    for w in &s.warnings {
                        eprintln!("warning [sample]: {w}");
                    }
                    println!("{}", json!({ "epc_ids": s.epc_ids, "min_score": min, "seed": seed }));
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => Ok(fail(&e)),
            }
        }
        Command::Serve { bind } => {
            let state = AppState::open(&cli.workspace, pipeline.config)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(state, &bind))?;
            Ok(ExitCode::SUCCESS)
        }
        _ => unreachable!("stage commands handled above"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
