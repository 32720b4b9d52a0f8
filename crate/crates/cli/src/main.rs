//! Command-line front end for the co-inference simulator.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coinfer::fusion::assisted_inference;
use coinfer::harness::{
    export, parse_config, run_experiment, sweep_csv, sweep_delta, ExperimentConfig,
};
use coinfer::tensor::{ProbMap, RegionMaskSet};
use coinfer::text::TextTensor;

#[derive(Parser)]
#[command(name = "coinfer", version, about = "Edge-cloud co-inference simulator")]
struct Cli {
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress and summary output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (strategy, seed) cell and export the results.
    Run { config: PathBuf },
    /// Sweep the routing threshold with frozen models.
    Sweep { config: PathBuf },
    /// Fuse an edge probability map with region masks and print the labels.
    Fuse { pred: PathBuf, masks: PathBuf },
    /// Parse and validate a config, then print its resolved form.
    Validate { config: PathBuf },
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn load(cli: &Cli, path: &Path) -> Result<ExperimentConfig, String> {
    let mut cfg = parse_config(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<ExitCode, String> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(cli, config)?;
            let result = run_experiment(&cfg).map_err(|e| e.to_string())?;
            export(&cfg, &result, &cfg.output).map_err(|e| e.to_string())?;
            if !cli.quiet {
                for cell in &result.cells {
                    if let Ok(report) = &cell.result {
                        let agg = report.aggregate.as_ref();
                        println!(
                            "{:<10} seed {:<4} miou {:.4}  cur {:.4}  latency {:.3}s  updates {}",
                            cell.strategy.name(),
                            cell.seed,
                            agg.map_or(f64::NAN, |a| a.miou),
                            agg.map_or(f64::NAN, |a| a.cur),
                            agg.map_or(f64::NAN, |a| a.avg_latency_s),
                            report.updates
                        );
                    }
                }
                println!("results in {}", cfg.output.display());
            }
            let failed: Vec<_> = result.failed().collect();
            if failed.is_empty() {
                return Ok(ExitCode::SUCCESS);
            }
            for cell in failed {
                if let Err(e) = &cell.result {
                    eprintln!("failed: {} seed {}: {e}", cell.strategy, cell.seed);
                }
            }
            Ok(ExitCode::FAILURE)
        }
        Command::Sweep { config } => {
            let cfg = load(cli, config)?;
            let points = sweep_delta(&cfg, &cfg.sweep_deltas).map_err(|e| e.to_string())?;
            fs::create_dir_all(&cfg.output)
                .map_err(|e| format!("{}: {e}", cfg.output.display()))?;
            let path = cfg.output.join("sweep.csv");
            fs::write(&path, sweep_csv(&points)).map_err(|e| format!("{}: {e}", path.display()))?;
            if !cli.quiet {
                println!("{} points in {}", points.len(), path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Fuse { pred, masks } => {
            let pred =
                ProbMap::from_text(&read(pred)?).map_err(|e| format!("{}: {e}", pred.display()))?;
            let masks = RegionMaskSet::from_text(&read(masks)?)
                .map_err(|e| format!("{}: {e}", masks.display()))?;
            let fused = assisted_inference(&pred, &masks).map_err(|e| e.to_string())?;
            print!("{}", fused.semantic.to_text());
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let cfg = load(cli, config)?;
            if !cli.quiet {
                print!("{}", cfg.to_text());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
