use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use flexgrid_core::doms;
use flexgrid_core::exec::Execution;
use flexgrid_sim::{Runtime, RuntimeOptions, Scenario, ScenarioSpec};

#[derive(Parser)]
#[command(name = "flexgrid", version, about = "Grid-state forecasting and flexibility estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic installation (config + history) for a preset.
    Generate {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(flexgrid_sim::PRESETS))]
        preset: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 28)]
        days: u32,
        #[arg(long)]
        out: PathBuf,
        /// Leave out the default overload event.
        #[arg(long)]
        no_injection: bool,
    },
    /// Drive an installation for a number of simulated hours.
    Run {
        #[arg(long, env = "FLEXGRID_DATA_DIR")]
        dir: PathBuf,
        #[arg(long, default_value_t = 24)]
        hours: u32,
        /// Where to write the JSON report (stdout summary only when absent).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, env = "FLEXGRID_WORKERS", default_value_t = 8)]
        workers: usize,
        /// Run inference loops on one thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Serve the HTTP API over an installation, journaling to `<dir>/store`.
    Serve {
        #[arg(long, env = "FLEXGRID_DATA_DIR")]
        dir: PathBuf,
        #[arg(long, env = "FLEXGRID_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "FLEXGRID_WORKERS", default_value_t = 8)]
        workers: usize,
        /// Keep the store in memory instead of journaling it.
        #[arg(long)]
        in_memory: bool,
    },
    /// Advance one hour, then write the assembled system of one horizon
    /// step in coordinate-triplet form.
    DumpGraph {
        #[arg(long, env = "FLEXGRID_DATA_DIR")]
        dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        step: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn execute(command: Command) -> CliResult {
    match command {
        Command::Generate { preset, seed, days, out, no_injection } => {
            let mut spec = ScenarioSpec::preset(&preset, seed, days)?;
            if !no_injection {
                spec = spec.with_default_injection();
            }
            let scenario = Scenario::new(spec)?;
            scenario.generate(&out)?;
            let c = scenario.spec.counts;
            println!(
                "wrote {}: {} series, {} entities, {} signals, {} models, {} days of history",
                out.display(),
                c.series,
                c.entities,
                c.signals,
                c.models,
                days
            );
            Ok(())
        }
        Command::Run { dir, hours, report, workers, sequential } => {
            let exec = if sequential { Execution::Sequential } else { Execution::Parallel };
            let runtime = Runtime::open(&dir, RuntimeOptions { workers, exec, persist: false })?;
            let result = runtime.run(hours);
            let t = &result.totals;
            println!(
                "{} hours: {} score jobs, {} train jobs, {} failed, {} forecasts, {} violations, {} flex windows in {:.1} s",
                hours, t.score_jobs, t.train_jobs, t.failed_jobs, t.forecasts_issued, t.violations, t.flex_windows,
                result.wall_seconds
            );
            if let Some(path) = report {
                fs::write(&path, serde_json::to_string_pretty(&result)?)?;
            }
            Ok(())
        }
        Command::Serve { dir, port, host, workers, in_memory } => {
            let runtime = Runtime::open(&dir, RuntimeOptions { workers, exec: Execution::Parallel, persist: !in_memory })?;
            let addr: SocketAddr = format!("{host}:{port}").parse()?;
            let app = flexgrid_service::router(Arc::new(runtime));
            tokio::runtime::Runtime::new()?.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                tracing::info!(%addr, "listening");
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
            })?;
            Ok(())
        }
        Command::DumpGraph { dir, step, out } => {
            let runtime = Runtime::open(&dir, RuntimeOptions::default())?;
            runtime.advance(1);
            let model = &runtime.installation().doms;
            let inputs = doms::gather_inputs(runtime.store().as_ref(), model, runtime.now())?;
            let graph = doms::step_graph(model, &inputs, step)?;
            match out {
                Some(path) => graph.graph.write_triplets(fs::File::create(path)?)?,
                None => graph.graph.write_triplets(std::io::stdout().lock())?,
            }
            Ok(())
        }
    }
}
