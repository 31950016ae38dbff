//! Experiment orchestration for `fogsim`: TOML configs, parallel sweeps
//! over strategies × client ratios × seeds, and plot-ready aggregates.

pub mod config;
pub mod experiment;
pub mod plot;

pub use config::{ConfigError, ExperimentConfig, TraceConfig};
pub use experiment::{build_world, grid, run_experiment, write_results, GridPoint, RunError, RESULTS_FILE};
pub use plot::{aggregate, emit_plot_data, mean_stddev, PlotError, PlotRow, FIGURES};
