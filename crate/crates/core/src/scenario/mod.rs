//! World model: simulated area, fog node placement and client movement.

mod traces;
mod world;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use traces::{
    generate_traces, position_at, read_traces, read_traces_csv, write_traces_csv, ClientTrace, Waypoint,
};
pub use world::{
    assign_slots, bundled_world, load_world, parse_nodes, parse_world, FogNodeSpec, NodeRow, WorldParams,
    BUNDLED_NODES_CSV,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AreaSpec {
    pub width_m: f64,
    pub height_m: f64,
    /// Observed round trips above this trigger rediscovery.
    pub max_latency_ms: f64,
    /// Vivaldi nodes whose prediction error is below this stop probing eagerly.
    pub latency_threshold_ms: f64,
    /// A round trip this much worse than the best seen on the current
    /// connection triggers rediscovery.
    pub round_trip_threshold_ms: f64,
    pub timeout_ms: f64,
}

impl Default for AreaSpec {
    fn default() -> Self {
        AreaSpec {
            width_m: 1500.0,
            height_m: 1500.0,
            max_latency_ms: 50.0,
            latency_threshold_ms: 5.0,
            round_trip_threshold_ms: 10.0,
            timeout_ms: 100.0,
        }
    }
}

impl AreaSpec {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width_m).contains(&x) && (0.0..=self.height_m).contains(&y)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.width_m > 0.0 && self.height_m > 0.0) {
            return Err("area.width_m and area.height_m must be > 0".into());
        }
        if !(self.timeout_ms > 0.0) {
            return Err("area.timeout_ms must be > 0".into());
        }
        Ok(())
    }
}

/// Client behaviour knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientParams {
    pub startup_delay_min_s: f64,
    pub startup_delay_max_s: f64,
    pub task_period_min_ms: u64,
    pub task_period_max_ms: u64,
    /// How long an accepted task occupies a slot.
    pub task_service_ms: u64,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
}

impl Default for ClientParams {
    fn default() -> Self {
        ClientParams {
            startup_delay_min_s: 3.0,
            startup_delay_max_s: 10.0,
            task_period_min_ms: 500,
            task_period_max_ms: 1_000,
            task_service_ms: 100,
            speed_min_mps: 1.0,
            speed_max_mps: 14.0,
        }
    }
}

impl ClientParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 <= self.startup_delay_min_s && self.startup_delay_min_s <= self.startup_delay_max_s) {
            return Err("client startup delay range is invalid".into());
        }
        if self.task_period_min_ms == 0 || self.task_period_min_ms > self.task_period_max_ms {
            return Err("client task period range is invalid".into());
        }
        if !(0.0 < self.speed_min_mps && self.speed_min_mps <= self.speed_max_mps) {
            return Err("client speed range is invalid".into());
        }
        Ok(())
    }
}
