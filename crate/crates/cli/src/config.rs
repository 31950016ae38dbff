//! Experiment configuration files.
//!
//! A config is a TOML document. Every simulator parameter has an explicit key
//! with its default filled in, and unknown keys are rejected so typos surface
//! before a sweep starts.

use std::path::{Path, PathBuf};

use fogsim::meridian::MeridianParams;
use fogsim::net::LatencyParams;
use fogsim::scenario::{AreaSpec, ClientParams, WorldParams};
use fogsim::vivaldi::VivaldiParams;
use fogsim::{SimConfig, SimTime, StrategyKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Syntax {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("{field}: {message}")]
    Field { field: String, message: String },
}

impl ConfigError {
    fn field(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Field {
            field: field.to_owned(),
            message: message.into(),
        }
    }
}

/// Where client movement traces come from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceConfig {
    #[default]
    Generate,
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub strategies: Vec<StrategyKind>,
    pub client_ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub duration_ms: u64,
    pub output_dir: PathBuf,
    /// Write a JSON dump per run next to `results.csv`.
    pub details: bool,
    /// Fog node CSV; the bundled 29-node layout when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node_file: Option<PathBuf>,
    pub traces: TraceConfig,
    pub area: AreaSpec,
    pub world: WorldParams,
    pub clients: ClientParams,
    pub latency: LatencyParams,
    pub vivaldi: VivaldiParams,
    pub meridian: MeridianParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            strategies: StrategyKind::ALL.to_vec(),
            client_ratios: (1..=10).map(|i| i as f64 / 10.0).collect(),
            seeds: vec![1, 2, 3],
            duration_ms: 600_000,
            output_dir: PathBuf::from("results"),
            details: false,
            node_file: None,
            traces: TraceConfig::Generate,
            area: AreaSpec::default(),
            world: WorldParams::default(),
            clients: ClientParams::default(),
            latency: LatencyParams::default(),
            vivaldi: VivaldiParams::default(),
            meridian: MeridianParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }

    /// Reads and validates a config file. Relative paths inside it resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|source| ConfigError::Syntax {
            path: path.to_owned(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.node_file.as_mut() {
            join(p);
        }
        if let TraceConfig::File { path } = &mut self.traces {
            join(path);
        }
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_millis(self.duration_ms)
    }

    /// `round(ratio × total_slots)`.
    pub fn client_count(&self, ratio: f64) -> usize {
        (ratio * self.world.total_slots as f64).round() as usize
    }

    pub fn sim_config(&self, strategy: StrategyKind, seed: u64) -> SimConfig {
        SimConfig {
            strategy,
            seed,
            duration: self.duration(),
            area: self.area.clone(),
            latency: self.latency.clone(),
            vivaldi: self.vivaldi.clone(),
            meridian: self.meridian.clone(),
            clients: self.clients.clone(),
            keep_message_log: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.strategies.is_empty() {
            return Err(ConfigError::field(
                "strategies",
                "must list at least one strategy",
            ));
        }
        for (i, s) in self.strategies.iter().enumerate() {
            if self.strategies[..i].contains(s) {
                return Err(ConfigError::field("strategies", format!("{s} listed twice")));
            }
        }
        if self.client_ratios.is_empty() {
            return Err(ConfigError::field(
                "client_ratios",
                "must list at least one ratio",
            ));
        }
        for &r in &self.client_ratios {
            if !(r > 0.0 && r <= 1.0) {
                return Err(ConfigError::field(
                    "client_ratios",
                    format!("{r} is outside (0, 1]"),
                ));
            }
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::field("seeds", "must list at least one seed"));
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return Err(ConfigError::field("seeds", format!("{s} listed twice")));
            }
        }
        if self.duration_ms == 0 {
            return Err(ConfigError::field("duration_ms", "must be > 0"));
        }
        if let Some(p) = &self.node_file {
            if !p.is_file() {
                return Err(ConfigError::field(
                    "node_file",
                    format!("{} does not exist", p.display()),
                ));
            }
        }
        if let TraceConfig::File { path } = &self.traces {
            if !path.is_file() {
                return Err(ConfigError::field(
                    "traces.path",
                    format!("{} does not exist", path.display()),
                ));
            }
        }
        let sections: [(&str, Result<(), String>); 6] = [
            ("area", self.area.validate()),
            ("world", self.world.validate()),
            ("clients", self.clients.validate()),
            ("latency", self.latency.validate()),
            ("vivaldi", self.vivaldi.validate()),
            ("meridian", self.meridian.validate()),
        ];
        for (name, result) in sections {
            result.map_err(|m| ConfigError::field(name, m))?;
        }
        Ok(())
    }
}
