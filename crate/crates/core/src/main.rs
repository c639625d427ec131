//! Command-line frontend: run a backtest grid, score a completed store, or
//! emit report tables.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use epicast::config::BacktestConfig;
use epicast::corpus::PhaseSet;
use epicast::harness::{
    load_corpus, model_grid_report, run_backtest, run_scoring, write_ribbons,
};
use epicast::store::ForecastStore;

#[derive(Parser)]
#[command(name = "epicast", version, about = "Rolling-origin epidemic forecast backtests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the forecast grid described by a config file.
    Backtest {
        /// JSON config file.
        #[arg(long)]
        config: PathBuf,
        /// Store directory; overrides the config's output_dir.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated family filter (cori,renewal-rw,sarima,trend,gp).
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        /// Sample paths per forecast.
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Score a completed store against observed cases.
    Score {
        /// Store directory written by `backtest`.
        #[arg(long)]
        store: PathBuf,
        /// Daily case CSV with the observations.
        #[arg(long)]
        input: PathBuf,
        /// Optional CSV of (region, start, end, phase) intervals.
        #[arg(long)]
        phases: Option<PathBuf>,
    },
    /// Write ribbon quantiles and the per-family model selection.
    Report {
        /// Store directory that has been scored.
        #[arg(long)]
        store: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> epicast::Result<ExitCode> {
    match cli.command {
        Command::Backtest {
            config,
            output,
            jobs,
            seed,
            models,
            draws,
        } => {
            let mut cfg = BacktestConfig::load(&config)?;
            if let Some(j) = jobs {
                cfg.jobs = Some(j);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(d) = draws {
                cfg.draws = d;
            }
            if let Some(m) = models {
                cfg.retain_families(&m)?;
            }
            cfg.validate()?;
            let root = output.or_else(|| cfg.output_dir.clone()).ok_or_else(|| {
                epicast::Error::config("no store directory: set output_dir or pass --output")
            })?;
            let report = run_backtest(&cfg, &root)?;
            println!(
                "backtest: {} tasks, {} computed, {} cached, {} failed -> {}",
                report.total,
                report.completed,
                report.skipped,
                report.failed,
                root.display()
            );
            Ok(if report.failed > 0 {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Score {
            store,
            input,
            phases,
        } => {
            let store = ForecastStore::open(&store)?;
            let snapshot = store.read_snapshot()?;
            let mut cfg = snapshot.config;
            cfg.cases_file = input;
            let corpus = load_corpus(&cfg)?;
            let phase_set = match phases {
                Some(p) => Some(PhaseSet::load(&p)?),
                None => None,
            };
            let out = run_scoring(&store, &corpus, phase_set.as_ref())?;
            println!(
                "score: {} records, {} hotspot targets, {} models ranked -> {}",
                out.records.len(),
                out.hotspots.len(),
                out.skill.models.len(),
                store.root().display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { store } => {
            let store = ForecastStore::open(&store)?;
            let rows = write_ribbons(&store)?;
            let best = model_grid_report(&store)?;
            println!("report: {rows} ribbon rows, {} families selected", best.len());
            for b in &best {
                println!("  {}: {} (mean CRPS {:.4} over {} scores)", b.family, b.model_id, b.mean_crps, b.n_scores);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
