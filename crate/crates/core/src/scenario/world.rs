use std::io::Read;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AreaSpec, ScenarioError};
use crate::ids::NodeId;

/// 29 node positions sampled uniformly over the default 1500 m × 1500 m area.
pub const BUNDLED_NODES_CSV: &str = include_str!("../../data/fog_nodes.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldParams {
    pub total_slots: u32,
    /// Hardware factors are drawn uniformly from this list.
    pub hardware_factors: Vec<f64>,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            total_slots: 318,
            hardware_factors: vec![1.0, 1.5, 2.0],
        }
    }
}

impl WorldParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.total_slots == 0 {
            return Err("world.total_slots must be >= 1".into());
        }
        if self.hardware_factors.is_empty() || self.hardware_factors.iter().any(|h| !(*h >= 0.0)) {
            return Err("world.hardware_factors must be a non-empty list of values >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FogNodeSpec {
    pub id: NodeId,
    pub x_m: f64,
    pub y_m: f64,
    pub slots: u32,
    pub hardware_factor: f64,
}

/// One parsed line of a node file.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRow {
    pub id: u32,
    pub x_m: f64,
    pub y_m: f64,
    pub slots: Option<u32>,
    pub hardware_factor: Option<f64>,
    pub line: usize,
}

fn field<T: std::str::FromStr>(raw: &str, name: &str, line: usize) -> Result<T, ScenarioError> {
    raw.trim().parse().map_err(|_| ScenarioError::Parse {
        line,
        message: format!("invalid {name} {raw:?}"),
    })
}

fn optional<T: std::str::FromStr>(
    raw: Option<&str>,
    name: &str,
    line: usize,
) -> Result<Option<T>, ScenarioError> {
    match raw.map(str::trim) {
        None | Some("") => Ok(None),
        Some(v) => field(v, name, line).map(Some),
    }
}

/// Parses `id,x_m,y_m[,slots[,hardware_factor]]` with a header row. Ids must
/// be `0..n` in any order; positions must lie inside `area`.
pub fn parse_nodes<R: Read>(input: R, area: &AreaSpec) -> Result<Vec<NodeRow>, ScenarioError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() < 3 {
            return Err(ScenarioError::Parse {
                line,
                message: format!("expected at least 3 columns, got {}", record.len()),
            });
        }
        let row = NodeRow {
            id: field(&record[0], "id", line)?,
            x_m: field(&record[1], "x_m", line)?,
            y_m: field(&record[2], "y_m", line)?,
            slots: optional(record.get(3), "slots", line)?,
            hardware_factor: optional(record.get(4), "hardware_factor", line)?,
            line,
        };
        if !area.contains(row.x_m, row.y_m) {
            return Err(ScenarioError::Parse {
                line,
                message: format!(
                    "node {} at ({}, {}) lies outside the area",
                    row.id, row.x_m, row.y_m
                ),
            });
        }
        if row.slots == Some(0) {
            return Err(ScenarioError::Parse {
                line,
                message: "slots must be >= 1".into(),
            });
        }
        if matches!(row.hardware_factor, Some(h) if !(h >= 0.0)) {
            return Err(ScenarioError::Parse {
                line,
                message: "hardware_factor must be >= 0".into(),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ScenarioError::Invalid("node file contains no nodes".into()));
    }
    rows.sort_by_key(|r| r.id);
    for (expected, row) in rows.iter().enumerate() {
        if row.id as usize != expected {
            return Err(ScenarioError::Parse {
                line: row.line,
                message: format!("node ids must be 0..{} without gaps or duplicates", rows.len()),
            });
        }
    }
    Ok(rows)
}

/// Distributes `total` slots: explicit values are kept and the remainder is
/// split uniformly at random over the other nodes, each getting at least one.
pub fn assign_slots<R: Rng + ?Sized>(
    explicit: &[Option<u32>],
    total: u32,
    rng: &mut R,
) -> Result<Vec<u32>, ScenarioError> {
    let fixed: u32 = explicit.iter().flatten().sum();
    let free: Vec<usize> = (0..explicit.len()).filter(|&i| explicit[i].is_none()).collect();
    let mut out: Vec<u32> = explicit.iter().map(|s| s.unwrap_or(0)).collect();
    if free.is_empty() {
        return Ok(out);
    }
    let remaining = total.saturating_sub(fixed);
    if (remaining as usize) < free.len() {
        return Err(ScenarioError::Invalid(format!(
            "{remaining} slots left for {} nodes without explicit slots",
            free.len()
        )));
    }
    // Stars and bars: n-1 distinct cut points in 1..remaining.
    let mut cuts: Vec<u32> = index::sample(rng, remaining as usize - 1, free.len() - 1)
        .into_iter()
        .map(|c| c as u32 + 1)
        .collect();
    cuts.sort_unstable();
    let mut prev = 0;
    for (k, &node) in free.iter().enumerate() {
        let end = cuts.get(k).copied().unwrap_or(remaining);
        out[node] = end - prev;
        prev = end;
    }
    Ok(out)
}

pub fn parse_world<R: Read, S: Rng + ?Sized, H: Rng + ?Sized>(
    input: R,
    area: &AreaSpec,
    params: &WorldParams,
    slot_rng: &mut S,
    hardware_rng: &mut H,
) -> Result<Vec<FogNodeSpec>, ScenarioError> {
    let rows = parse_nodes(input, area)?;
    let explicit: Vec<Option<u32>> = rows.iter().map(|r| r.slots).collect();
    let slots = assign_slots(&explicit, params.total_slots, slot_rng)?;
    Ok(rows
        .iter()
        .zip(slots)
        .map(|(row, slots)| FogNodeSpec {
            id: NodeId(row.id),
            x_m: row.x_m,
            y_m: row.y_m,
            slots,
            hardware_factor: row.hardware_factor.unwrap_or_else(|| {
                params.hardware_factors[hardware_rng.gen_range(0..params.hardware_factors.len())]
            }),
        })
        .collect())
}

pub fn load_world<S: Rng + ?Sized, H: Rng + ?Sized>(
    path: &Path,
    area: &AreaSpec,
    params: &WorldParams,
    slot_rng: &mut S,
    hardware_rng: &mut H,
) -> Result<Vec<FogNodeSpec>, ScenarioError> {
    let file = std::fs::File::open(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_world(file, area, params, slot_rng, hardware_rng)
}

pub fn bundled_world<S: Rng + ?Sized, H: Rng + ?Sized>(
    area: &AreaSpec,
    params: &WorldParams,
    slot_rng: &mut S,
    hardware_rng: &mut H,
) -> Result<Vec<FogNodeSpec>, ScenarioError> {
    parse_world(BUNDLED_NODES_CSV.as_bytes(), area, params, slot_rng, hardware_rng)
}
