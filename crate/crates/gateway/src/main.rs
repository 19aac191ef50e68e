use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use ol_core::dataset;
use ol_core::harness::{
    compare_strategies, run_benchmark, write_results, ComparisonReport, ExperimentConfig, HarnessError,
};
use ol_core::strategy::StrategySpec;
use ol_gateway::{resolve_data_dir, router, Registry, DATA_DIR_ENV};

#[derive(Parser)]
#[command(name = "ol", version, about = "Active-learning benchmarks and annotation service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config over its seeds and write the results directory.
    Bench {
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Run several strategies on a shared dataset and seed list.
    Compare {
        /// Config files; with --strategies, the first one is the template.
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Comma-separated strategy identifiers applied to the first config.
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<String>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Start the HTTP annotation service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Snapshot directory; OL_DATA_DIR takes precedence.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Write the dataset a config generates for one seed as JSON.
    Gen {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_report(report: &ComparisonReport, dir: &Path) {
    println!(
        "{:<28} {:>10} {:>10} {:>12} {:>8}",
        "strategy", "mean AULC", "std AULC", "final acc", "target"
    );
    for s in &report.strategies {
        println!(
            "{:<28} {:>10.3} {:>10.3} {:>12.4} {:>4}/{:<3}",
            s.strategy,
            s.mean_aulc,
            s.std_aulc,
            s.mean_final_accuracy,
            s.seeds_reaching_target,
            s.runs.len()
        );
    }
    println!("results written to {}", dir.display());
}

fn compare_configs(configs: &[PathBuf], strategies: &[String]) -> Result<Vec<ExperimentConfig>, HarnessError> {
    let loaded = configs
        .iter()
        .map(|p| ExperimentConfig::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    if strategies.is_empty() {
        return Ok(loaded);
    }
    strategies
        .iter()
        .map(|name| {
            let spec: StrategySpec = name
                .parse()
                .map_err(|e: ol_core::strategy::StrategyError| HarnessError::ConfigInvalid(e.to_string()))?;
            Ok(ExperimentConfig {
                strategy: spec,
                ..loaded[0].clone()
            })
        })
        .collect()
}

async fn serve(host: std::net::IpAddr, port: u16, data_dir: Option<PathBuf>) -> std::io::Result<()> {
    let data_dir = resolve_data_dir(data_dir, std::env::var(DATA_DIR_ENV).ok());
    let registry = Arc::new(Registry::new(data_dir.clone()));
    let addr = SocketAddr::new(host, port);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, data_dir = ?data_dir, "listening");
    axum::serve(listener, router(registry))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Bench { config, out } => {
            let config = ExperimentConfig::load(&config)?;
            let report = run_benchmark(&config)?;
            let dir = write_results(&report, &out)?;
            print_report(&report, &dir);
        }
        Command::Compare {
            configs,
            strategies,
            out,
        } => {
            let configs = compare_configs(&configs, &strategies)?;
            let report = compare_strategies(&configs)?;
            let dir = write_results(&report, &out)?;
            print_report(&report, &dir);
        }
        Command::Serve { port, host, data_dir } => {
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?
                .block_on(serve(host, port, data_dir))?;
        }
        Command::Gen { config, seed, out } => {
            let config = ExperimentConfig::load(&config)?;
            let seed = seed.or_else(|| config.seeds.first().copied()).unwrap_or(0);
            let data = dataset::generate(&config.dataset, seed)?;
            let json = serde_json::to_string_pretty(&data)?;
            match out {
                Some(path) => std::fs::write(path, json)?,
                None => println!("{json}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
