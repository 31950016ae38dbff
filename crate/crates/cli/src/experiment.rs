use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fogsim::metrics::{DiscoveryRecord, ResultRow};
use fogsim::scenario::ScenarioError;
use fogsim::simulation::{ClientSummary, NodeSnapshot, SearchLog};
use fogsim::{run, NodeSource, SimError, StrategyKind, TraceSource, World};
use log::{debug, info};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ExperimentConfig, TraceConfig};

pub const RESULTS_FILE: &str = "results.csv";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("building world for ratio {ratio}, seed {seed}: {source}")]
    Scenario {
        ratio: f64,
        seed: u64,
        #[source]
        source: ScenarioError,
    },
    #[error("run {strategy} ratio {ratio} seed {seed}: {source}")]
    Simulation {
        strategy: StrategyKind,
        ratio: f64,
        seed: u64,
        #[source]
        source: SimError,
    },
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl RunError {
    /// 2 for bad inputs, 3 for a violated runtime invariant, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Scenario { .. } => 2,
            RunError::Simulation { source, .. } => match source {
                SimError::Scenario(_) => 2,
                _ => 3,
            },
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_owned(),
        source,
    }
}

/// One grid point; rows are emitted in this order regardless of which run
/// finishes first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub strategy: StrategyKind,
    pub ratio: f64,
    pub seed: u64,
}

/// Strategy-major, then ratio, then seed, each in config order.
pub fn grid(cfg: &ExperimentConfig) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for &strategy in &cfg.strategies {
        for &ratio in &cfg.client_ratios {
            for &seed in &cfg.seeds {
                out.push(GridPoint {
                    strategy,
                    ratio,
                    seed,
                });
            }
        }
    }
    out
}

#[derive(Serialize)]
struct RunDetail<'a> {
    strategy: StrategyKind,
    client_ratio: f64,
    seed: u64,
    end_time_ms: f64,
    invalid_vivaldi_samples: u64,
    clients: &'a [ClientSummary],
    nodes: &'a [NodeSnapshot],
    discoveries: &'a [DiscoveryRecord],
    searches: &'a [SearchLog],
}

fn detail_name(p: &GridPoint) -> String {
    format!("{}-r{}-s{}.json", p.strategy, p.ratio, p.seed)
}

pub fn build_world(cfg: &ExperimentConfig, ratio: f64, seed: u64) -> Result<World, RunError> {
    let nodes = match &cfg.node_file {
        Some(p) => NodeSource::File(p),
        None => NodeSource::Bundled,
    };
    let traces = match &cfg.traces {
        TraceConfig::Generate => TraceSource::Generate,
        TraceConfig::File { path } => TraceSource::File(path),
    };
    World::build(
        seed,
        cfg.client_count(ratio),
        cfg.duration(),
        &cfg.area,
        &cfg.world,
        &cfg.clients,
        nodes,
        traces,
    )
    .map_err(|source| RunError::Scenario { ratio, seed, source })
}

fn run_point(cfg: &ExperimentConfig, p: &GridPoint) -> Result<(ResultRow, Option<String>), RunError> {
    let started = Instant::now();
    let world = build_world(cfg, p.ratio, p.seed)?;
    let out = run(&cfg.sim_config(p.strategy, p.seed), &world).map_err(|source| RunError::Simulation {
        strategy: p.strategy,
        ratio: p.ratio,
        seed: p.seed,
        source,
    })?;
    let row = out.summarize(p.ratio);
    let detail = if cfg.details {
        Some(serde_json::to_string_pretty(&RunDetail {
            strategy: p.strategy,
            client_ratio: p.ratio,
            seed: p.seed,
            end_time_ms: out.end_time.as_ms_f64(),
            invalid_vivaldi_samples: out.invalid_vivaldi_samples,
            clients: &out.clients,
            nodes: &out.nodes,
            discoveries: &out.discoveries,
            searches: &out.searches,
        })?)
    } else {
        None
    };
    info!(
        "{} ratio={} seed={}: {} discoveries, {} messages in {:.2?}",
        p.strategy,
        p.ratio,
        p.seed,
        row.discoveries,
        row.messages_sent,
        started.elapsed()
    );
    Ok((row, detail))
}

/// Runs the full grid and writes `results.csv` (plus per-run JSON when
/// `details` is on) into `out_dir`. `jobs = None` uses every core.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    jobs: Option<usize>,
) -> Result<Vec<ResultRow>, RunError> {
    let points = grid(cfg);
    info!("running {} simulations into {}", points.len(), out_dir.display());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()?;
    let results: Vec<_> = pool.install(|| points.par_iter().map(|p| run_point(cfg, p)).collect());

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut rows = Vec::with_capacity(results.len());
    let mut details = Vec::new();
    for (p, r) in points.iter().zip(results) {
        let (row, detail) = r?;
        rows.push(row);
        if let Some(d) = detail {
            details.push((detail_name(p), d));
        }
    }
    write_results(&out_dir.join(RESULTS_FILE), &rows)?;
    if !details.is_empty() {
        let dir = out_dir.join("details");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (name, text) in details {
            let path = dir.join(name);
            fs::write(&path, text).map_err(io_err(&path))?;
        }
    }
    let echo = out_dir.join("config.toml");
    fs::write(&echo, cfg.to_toml()).map_err(io_err(&echo))?;
    debug!("wrote {} rows", rows.len());
    Ok(rows)
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_strategy_major() {
        let cfg = ExperimentConfig {
            strategies: vec![StrategyKind::Vivaldi, StrategyKind::Baseline],
            client_ratios: vec![0.5, 0.1],
            seeds: vec![3, 1, 2],
            ..ExperimentConfig::default()
        };
        let g = grid(&cfg);
        assert_eq!(g.len(), 12);
        assert_eq!(
            g[0],
            GridPoint {
                strategy: StrategyKind::Vivaldi,
                ratio: 0.5,
                seed: 3
            }
        );
        assert_eq!(g[2].seed, 2);
        assert_eq!(g[3].ratio, 0.1);
        assert_eq!(g[6].strategy, StrategyKind::Baseline);
    }

    #[test]
    fn full_default_grid_has_120_points() {
        let cfg = ExperimentConfig::default();
        assert_eq!(grid(&cfg).len(), 4 * 10 * 3);
    }

    #[test]
    fn exit_codes() {
        let scenario = RunError::Scenario {
            ratio: 0.1,
            seed: 1,
            source: ScenarioError::Invalid("x".into()),
        };
        assert_eq!(scenario.exit_code(), 2);
        let invariant = RunError::Simulation {
            strategy: StrategyKind::Random,
            ratio: 0.1,
            seed: 1,
            source: SimError::Invariant("sent != delivered".into()),
        };
        assert_eq!(invariant.exit_code(), 3);
        assert!(invariant.to_string().contains("random ratio 0.1 seed 1"));
    }
}
