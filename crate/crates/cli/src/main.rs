use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fogsim::scenario::{generate_traces, write_traces_csv, AreaSpec, ClientParams};
use fogsim::{RngStream, SimTime};
use fogsim_cli::{emit_plot_data, run_experiment, ExperimentConfig, RESULTS_FILE};
use log::{error, info};

#[derive(Parser)]
#[command(name = "fogsim", version, about = "Fog node discovery simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every strategy × ratio × seed in a config and write results.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to one per core.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Write random-waypoint traces in the importable CSV format.
    GenTraces {
        #[arg(long)]
        clients: usize,
        /// Trace length in milliseconds.
        #[arg(long)]
        duration: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate results.csv into per-figure tidy files.
    PlotData {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, jobs } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    error!("invalid config: {e}");
                    return ExitCode::from(2);
                }
            };
            if jobs == Some(0) {
                error!("--jobs must be at least 1");
                return ExitCode::from(2);
            }
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            match run_experiment(&cfg, &out, jobs) {
                Ok(rows) => {
                    info!(
                        "wrote {} rows to {}",
                        rows.len(),
                        out.join(RESULTS_FILE).display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    error!("{e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Command::GenTraces {
            clients,
            duration,
            seed,
            out,
        } => {
            let traces = generate_traces(
                clients,
                &AreaSpec::default(),
                &ClientParams::default(),
                SimTime::from_millis(duration),
                &mut RngStream::new(seed, "traces"),
                &mut RngStream::new(seed, "startup"),
            );
            let written = std::fs::File::create(&out)
                .map_err(|e| e.to_string())
                .and_then(|f| {
                    write_traces_csv(&traces, std::io::BufWriter::new(f)).map_err(|e| e.to_string())
                });
            match written {
                Ok(()) => {
                    info!("wrote {clients} traces to {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    error!("{}: {e}", out.display());
                    ExitCode::FAILURE
                }
            }
        }
        Command::PlotData { results, out } => match emit_plot_data(&results, &out) {
            Ok(files) => {
                for f in files {
                    info!("wrote {}", f.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                error!("{e}");
                ExitCode::FAILURE
            }
        },
    }
}
