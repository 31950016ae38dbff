//! Height-augmented Vivaldi coordinates.
//!
//! Each participant holds a 2-D position, a non-negative height modelling its
//! access-link delay, and a local error estimate. Every RTT sample moves the
//! coordinate along the spring between the two participants by an adaptive
//! timestep weighted by the relative confidence of both sides.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::NodeId;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VivaldiParams {
    /// Fraction `c_c` of the relative error used as timestep.
    pub timestep_fraction: f64,
    /// Smoothing fraction `c_e` for the local error estimate.
    pub error_fraction: f64,
    pub initial_error: f64,
    /// Heights never drop below this (ms); a zero height could never grow.
    pub min_height_ms: f64,
    /// How often a node samples a random peer.
    pub sample_period_ms: u64,
    /// Once a node's smoothed prediction error is below the latency
    /// threshold it probes only every `idle_probe_every` periods.
    pub idle_probe_every: u32,
    /// Clients additionally probe one random node per task cycle.
    pub client_probes: bool,
}

impl Default for VivaldiParams {
    fn default() -> Self {
        VivaldiParams {
            timestep_fraction: 0.25,
            error_fraction: 0.25,
            initial_error: 10.0,
            min_height_ms: 0.01,
            sample_period_ms: 1_000,
            idle_probe_every: 10,
            client_probes: true,
        }
    }
}

impl VivaldiParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.timestep_fraction > 0.0 && self.timestep_fraction < 1.0) {
            return Err(format!(
                "vivaldi.timestep_fraction must be in (0, 1), got {}",
                self.timestep_fraction
            ));
        }
        if !(self.error_fraction > 0.0 && self.error_fraction < 1.0) {
            return Err(format!(
                "vivaldi.error_fraction must be in (0, 1), got {}",
                self.error_fraction
            ));
        }
        if !(self.initial_error >= 0.0) || !(self.min_height_ms >= 0.0) {
            return Err("vivaldi.initial_error and min_height_ms must be >= 0".into());
        }
        if self.sample_period_ms == 0 || self.idle_probe_every == 0 {
            return Err("vivaldi.sample_period_ms and idle_probe_every must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VivaldiCoordinate {
    pub pos: [f64; 2],
    pub height: f64,
    pub error: f64,
}

impl VivaldiCoordinate {
    /// Origin with the configured initial error.
    pub fn origin(params: &VivaldiParams) -> Self {
        VivaldiCoordinate {
            pos: [0.0, 0.0],
            height: params.min_height_ms,
            error: params.initial_error,
        }
    }

    pub fn new(pos: [f64; 2], height: f64, error: f64) -> Self {
        VivaldiCoordinate { pos, height, error }
    }

    fn planar_delta(&self, other: &VivaldiCoordinate) -> [f64; 2] {
        [self.pos[0] - other.pos[0], self.pos[1] - other.pos[1]]
    }

    /// Applies one RTT sample against `remote`.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        remote: &VivaldiCoordinate,
        rtt_ms: f64,
        params: &VivaldiParams,
        rng: &mut R,
    ) -> Result<UpdateOutcome, InvalidSample> {
        if !(rtt_ms > 0.0 && rtt_ms.is_finite()) {
            return Err(InvalidSample { rtt_ms });
        }
        let dist = estimated_distance(self, remote);
        let weight = relative_weight(self.error, remote.error);
        let sample_error = (dist - rtt_ms).abs() / rtt_ms;
        let ce_w = params.error_fraction * weight;
        self.error = sample_error * ce_w + self.error * (1.0 - ce_w);

        let delta = params.timestep_fraction * weight;
        let force = rtt_ms - dist;
        let dir = unit_direction(self.planar_delta(remote), rng);
        self.pos[0] += delta * force * dir[0];
        self.pos[1] += delta * force * dir[1];
        if dist > EPS {
            let share = (self.height + remote.height) / dist;
            self.height += delta * force * share;
        }
        self.height = self.height.max(params.min_height_ms).max(0.0);
        Ok(UpdateOutcome {
            timestep: delta,
            abs_error_ms: (dist - rtt_ms).abs(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    pub timestep: f64,
    /// |estimate - rtt| before the update.
    pub abs_error_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("invalid rtt sample {rtt_ms}")]
pub struct InvalidSample {
    pub rtt_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VivaldiError {
    #[error("no candidate nodes")]
    NoNodes,
}

/// `‖x_a − x_b‖ + h_a + h_b`.
pub fn estimated_distance(a: &VivaldiCoordinate, b: &VivaldiCoordinate) -> f64 {
    let d = a.planar_delta(b);
    d[0].hypot(d[1]) + a.height + b.height
}

fn relative_weight(local: f64, remote: f64) -> f64 {
    let sum = local + remote;
    if sum > 0.0 && sum.is_finite() {
        local / sum
    } else if remote.is_infinite() && local.is_finite() {
        0.0
    } else {
        // Both zero: equally confident.
        0.5
    }
}

/// `c_c · e_l / (e_l + e_r)`.
pub fn adaptive_timestep(local_error: f64, remote_error: f64, timestep_fraction: f64) -> f64 {
    timestep_fraction * relative_weight(local_error, remote_error)
}

fn unit_direction<R: Rng + ?Sized>(v: [f64; 2], rng: &mut R) -> [f64; 2] {
    let norm = v[0].hypot(v[1]);
    if norm > EPS {
        [v[0] / norm, v[1] / norm]
    } else {
        let theta = rng.gen_range(0.0..TAU);
        [theta.cos(), theta.sin()]
    }
}

/// `(rtt − d(a,b)) · u(x_a − x_b)`; positive magnitude pushes `a` away from `b`.
pub fn spring_force<R: Rng + ?Sized>(
    a: &VivaldiCoordinate,
    b: &VivaldiCoordinate,
    rtt_ms: f64,
    rng: &mut R,
) -> [f64; 2] {
    let magnitude = rtt_ms - estimated_distance(a, b);
    let u = unit_direction(a.planar_delta(b), rng);
    [magnitude * u[0], magnitude * u[1]]
}

/// Sum of spring forces from all neighbours.
pub fn net_force<R: Rng + ?Sized>(
    a: &VivaldiCoordinate,
    neighbours: &[(VivaldiCoordinate, f64)],
    rng: &mut R,
) -> [f64; 2] {
    neighbours.iter().fold([0.0, 0.0], |acc, (b, rtt)| {
        let f = spring_force(a, b, *rtt, rng);
        [acc[0] + f[0], acc[1] + f[1]]
    })
}

/// Spring-relaxation energy `Σ (L_ij − d_ij)²` over the given pairs.
pub fn embedding_error(coords: &[VivaldiCoordinate], rtts: &[Vec<f64>]) -> f64 {
    let mut e = 0.0;
    for (i, a) in coords.iter().enumerate() {
        for (j, b) in coords.iter().enumerate() {
            if i != j {
                e += (rtts[i][j] - estimated_distance(a, b)).powi(2);
            }
        }
    }
    e
}

/// Node with the smallest estimated distance among nodes with a free slot,
/// or among all nodes if none is free. Ties go to the lowest id.
pub fn nearest_node(
    client: &VivaldiCoordinate,
    nodes: &[(NodeId, VivaldiCoordinate, bool)],
) -> Result<NodeId, VivaldiError> {
    let best = |only_free: bool| {
        nodes
            .iter()
            .filter(|(_, _, free)| *free || !only_free)
            .map(|(id, c, _)| (estimated_distance(client, c), *id))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| id)
    };
    best(true).or_else(|| best(false)).ok_or(VivaldiError::NoNodes)
}
