//! Tidy per-figure data derived from `results.csv`.
//!
//! Each output file has the columns `strategy,ratio,metric,mean,stddev,n`,
//! one line per strategy, ratio and metric. `stddev` is the sample standard
//! deviation over seeds (0 with a single seed); `n` counts seeds that
//! produced a value.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("results file lacks columns: {}", .0.join(", "))]
    MissingColumns(Vec<String>),
    #[error("line {line}: {message}")]
    BadValue { line: u64, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Output file name and the result columns it aggregates.
pub const FIGURES: [(&str, &[&str]); 3] = [
    (
        "messages_vs_ratio.csv",
        &[
            "mean_node_total",
            "mean_node_in",
            "mean_node_out",
            "mean_client_messages",
            "mean_reconnects",
            "mean_rediscoveries",
            "mean_lost",
        ],
    ),
    (
        "selection_vs_ratio.csv",
        &["optimal_rate", "selection_error", "unique_selections"],
    ),
    (
        "latency_vs_ratio.csv",
        &["mean_rtt_task", "mean_rtt_client", "connection_error"],
    ),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotRow {
    pub strategy: String,
    pub ratio: f64,
    pub metric: String,
    pub mean: Option<f64>,
    pub stddev: Option<f64>,
    pub n: usize,
}

/// Mean and sample standard deviation; `None` for no values.
pub fn mean_stddev(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

/// Groups `results` by strategy (first-appearance order) and ratio
/// (ascending) and aggregates `metrics` over seeds.
pub fn aggregate<R: std::io::Read>(results: R, metrics: &[&str]) -> Result<Vec<PlotRow>, PlotError> {
    let mut reader = csv::Reader::from_reader(results);
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut missing: Vec<String> = ["strategy", "client_ratio"]
        .iter()
        .chain(metrics)
        .filter(|m| col(m).is_none())
        .map(|m| m.to_string())
        .collect();
    missing.dedup();
    if !missing.is_empty() {
        return Err(PlotError::MissingColumns(missing));
    }
    let (s_col, r_col) = (col("strategy").unwrap(), col("client_ratio").unwrap());
    let m_cols: Vec<usize> = metrics.iter().map(|m| col(m).unwrap()).collect();

    let mut order: Vec<String> = Vec::new();
    // (strategy index, ratio bits) -> per-metric values
    let mut groups: BTreeMap<(usize, u64), Vec<Vec<f64>>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let parse = |i: usize| -> Result<Option<f64>, PlotError> {
            let s = record.get(i).unwrap_or("").trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>().map(Some).map_err(|e| PlotError::BadValue {
                line,
                message: format!("{}: {e}", &headers[i]),
            })
        };
        let strategy = record.get(s_col).unwrap_or("").to_owned();
        let ratio = parse(r_col)?.ok_or_else(|| PlotError::BadValue {
            line,
            message: "empty client_ratio".into(),
        })?;
        let si = match order.iter().position(|s| *s == strategy) {
            Some(i) => i,
            None => {
                order.push(strategy);
                order.len() - 1
            }
        };
        // Ratios are positive, so IEEE bit order equals numeric order.
        let slot = groups
            .entry((si, ratio.to_bits()))
            .or_insert_with(|| vec![Vec::new(); metrics.len()]);
        for (k, &c) in m_cols.iter().enumerate() {
            if let Some(v) = parse(c)? {
                slot[k].push(v);
            }
        }
    }
    let mut out = Vec::new();
    for ((si, bits), values) in groups {
        for (metric, vals) in metrics.iter().zip(values) {
            let stats = mean_stddev(&vals);
            out.push(PlotRow {
                strategy: order[si].clone(),
                ratio: f64::from_bits(bits),
                metric: metric.to_string(),
                mean: stats.map(|s| s.0),
                stddev: stats.map(|s| s.1),
                n: vals.len(),
            });
        }
    }
    Ok(out)
}

/// Writes one file per entry of [`FIGURES`] into `out_dir`.
pub fn emit_plot_data(results: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, PlotError> {
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| PlotError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let mut written = Vec::new();
    for (name, metrics) in FIGURES {
        let file = fs::File::open(results).map_err(io(results))?;
        let rows = aggregate(file, metrics)?;
        let path = out_dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush().map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}
