use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AreaSpec, ClientParams, ScenarioError};
use crate::ids::ClientId;
use crate::kernel::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: SimTime,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientTrace {
    pub client: ClientId,
    /// Strictly increasing in `t`; never empty.
    pub waypoints: Vec<Waypoint>,
    pub start_delay: SimTime,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    client_id: u32,
    t_ms: u64,
    x_m: f64,
    y_m: f64,
}

const STEP: SimTime = SimTime::from_secs(1);

fn start_delay<R: Rng + ?Sized>(params: &ClientParams, rng: &mut R) -> SimTime {
    let s = if params.startup_delay_max_s > params.startup_delay_min_s {
        rng.gen_range(params.startup_delay_min_s..=params.startup_delay_max_s)
    } else {
        params.startup_delay_min_s
    };
    SimTime::from_ms_f64(s * 1000.0)
}

/// Random-waypoint walk sampled every second.
fn walk<R: Rng + ?Sized>(
    area: &AreaSpec,
    params: &ClientParams,
    duration: SimTime,
    rng: &mut R,
) -> Vec<Waypoint> {
    let uniform_point = |rng: &mut R| {
        (
            rng.gen_range(0.0..=area.width_m),
            rng.gen_range(0.0..=area.height_m),
        )
    };
    let speed = |rng: &mut R| {
        if params.speed_max_mps > params.speed_min_mps {
            rng.gen_range(params.speed_min_mps..=params.speed_max_mps)
        } else {
            params.speed_min_mps
        }
    };
    let (mut x, mut y) = uniform_point(rng);
    let mut dest = uniform_point(rng);
    let mut v = speed(rng);
    let mut out = vec![Waypoint {
        t: SimTime::ZERO,
        x,
        y,
    }];
    let mut t = SimTime::ZERO;
    while t < duration {
        let next = (t + STEP).min(duration);
        let mut budget = (next - t).as_ms_f64() / 1000.0;
        while budget > 0.0 {
            let (dx, dy) = (dest.0 - x, dest.1 - y);
            let dist = dx.hypot(dy);
            let reach = v * budget;
            if reach < dist {
                x += dx / dist * reach;
                y += dy / dist * reach;
                budget = 0.0;
            } else {
                x = dest.0;
                y = dest.1;
                budget -= dist / v;
                dest = uniform_point(rng);
                v = speed(rng);
            }
        }
        out.push(Waypoint {
            t: next,
            x: x.clamp(0.0, area.width_m),
            y: y.clamp(0.0, area.height_m),
        });
        t = next;
    }
    out
}

/// Synthetic random-waypoint traces. Waypoints come from `trace_rng`, start
/// delays from `startup_rng`.
pub fn generate_traces<R: Rng + ?Sized, S: Rng + ?Sized>(
    n_clients: usize,
    area: &AreaSpec,
    params: &ClientParams,
    duration: SimTime,
    trace_rng: &mut R,
    startup_rng: &mut S,
) -> Vec<ClientTrace> {
    (0..n_clients)
        .map(|i| ClientTrace {
            client: ClientId(i as u32),
            waypoints: walk(area, params, duration, trace_rng),
            start_delay: start_delay(params, startup_rng),
        })
        .collect()
}

/// Linear interpolation, clamped to the first and last waypoint.
pub fn position_at(trace: &ClientTrace, t: SimTime) -> (f64, f64) {
    let w = &trace.waypoints;
    let after = w.partition_point(|p| p.t <= t);
    if after == 0 {
        return (w[0].x, w[0].y);
    }
    if after == w.len() {
        let last = w[w.len() - 1];
        return (last.x, last.y);
    }
    let (a, b) = (w[after - 1], w[after]);
    let f = (t - a.t).as_micros() as f64 / (b.t - a.t).as_micros() as f64;
    (a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f)
}

pub fn write_traces_csv<W: Write>(traces: &[ClientTrace], out: W) -> Result<(), ScenarioError> {
    let mut w = csv::Writer::from_writer(out);
    for trace in traces {
        for p in &trace.waypoints {
            w.serialize(TraceRow {
                client_id: trace.client.0,
                t_ms: p.t.as_micros() / 1000,
                x_m: p.x,
                y_m: p.y,
            })?;
        }
    }
    w.flush().map_err(|source| ScenarioError::Io {
        path: "<trace output>".into(),
        source,
    })?;
    Ok(())
}

/// Parses `client_id,t_ms,x_m,y_m` sorted by `(client_id, t_ms)`. Client ids
/// must be `0..n`; start delays are not part of the file.
pub fn read_traces_csv<R: Read>(input: R, area: &AreaSpec) -> Result<Vec<Vec<Waypoint>>, ScenarioError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out: Vec<Vec<Waypoint>> = Vec::new();
    let headers = reader.headers()?.clone();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let err = |message: String| ScenarioError::Parse { line, message };
        let row: TraceRow = record
            .deserialize(Some(&headers))
            .map_err(|e| err(e.to_string()))?;
        if !area.contains(row.x_m, row.y_m) {
            return Err(err(format!("({}, {}) lies outside the area", row.x_m, row.y_m)));
        }
        let id = row.client_id as usize;
        if id == out.len() {
            out.push(Vec::new());
        } else if id + 1 != out.len() {
            return Err(err(format!(
                "client ids must be contiguous and sorted, got {} after {}",
                id,
                out.len() as i64 - 1
            )));
        }
        let t = SimTime::from_millis(row.t_ms);
        let series = out.last_mut().expect("pushed above");
        if series.last().is_some_and(|p| p.t >= t) {
            return Err(err(format!(
                "waypoint times must strictly increase for client {id}"
            )));
        }
        series.push(Waypoint {
            t,
            x: row.x_m,
            y: row.y_m,
        });
    }
    Ok(out)
}

/// Loads a trace file and draws a start delay per client.
pub fn read_traces<R: Rng + ?Sized>(
    path: &Path,
    area: &AreaSpec,
    params: &ClientParams,
    startup_rng: &mut R,
) -> Result<Vec<ClientTrace>, ScenarioError> {
    let file = std::fs::File::open(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(read_traces_csv(file, area)?
        .into_iter()
        .enumerate()
        .map(|(i, waypoints)| ClientTrace {
            client: ClientId(i as u32),
            waypoints,
            start_delay: start_delay(params, startup_rng),
        })
        .collect())
}
