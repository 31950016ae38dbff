//! Meridian: concentric latency rings and recursive closest-node search.
//!
//! Every node files its peers into rings of exponentially growing radius.
//! Ring `0` covers `(0, α]`, ring `i > 0` covers `(α·s^(i−1), α·s^i]`, and
//! anything beyond the last ring is clamped into it. Each ring keeps `k`
//! primary members chosen for geometric diversity and up to `l` secondary
//! substitutes. A closest-node query walks from node to node, each hop asking
//! the primary members in a `(1±β)·d` band to measure the target and moving
//! to the best strictly closer answer.

mod hypervolume;
mod node;
mod rings;
mod search;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::SimTime;

pub use hypervolume::{
    exclusion_scores, hypervolume_proxy, log_volume, pairwise_spread, reassess_ring, set_proxy,
};
pub use node::{GossipEntry, MeridianNode, PeerEntry};
pub use rings::{MeridianRingSet, Placement, RingMember, RingSnapshot};
pub use search::{
    closest_node_search, decide_hop, search_band, HopDecision, SearchBand, SearchOracle, SearchTrace,
};

#[derive(Debug, Error, PartialEq)]
pub enum MeridianError {
    #[error("ring distance must be positive, got {0}")]
    NonPositiveDistance(f64),
}

/// Meridian configuration as it appears in experiment files. `k` and `l`
/// default to `⌊log₁.₆ N⌋` and `N − k` once the node count is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeridianParams {
    pub ring_count: usize,
    pub alpha_ms: f64,
    pub ring_factor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub primary_per_ring: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub secondary_per_ring: Option<usize>,
    pub beta: f64,
    pub reassess_period_s: u64,
    pub gossip_period_s: u64,
    pub staleness_s: u64,
}

impl Default for MeridianParams {
    fn default() -> Self {
        MeridianParams {
            ring_count: 8,
            alpha_ms: 1.0,
            ring_factor: 1.5,
            primary_per_ring: None,
            secondary_per_ring: None,
            beta: 0.5,
            reassess_period_s: 30,
            gossip_period_s: 5,
            staleness_s: 60,
        }
    }
}

impl MeridianParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.ring_count == 0 {
            return Err("meridian.ring_count must be >= 1".into());
        }
        if !(self.alpha_ms > 0.0) {
            return Err(format!("meridian.alpha_ms must be > 0, got {}", self.alpha_ms));
        }
        if !(self.ring_factor > 1.0) {
            return Err(format!(
                "meridian.ring_factor must be > 1, got {}",
                self.ring_factor
            ));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(format!("meridian.beta must be in [0, 1), got {}", self.beta));
        }
        if self.primary_per_ring == Some(0) {
            return Err("meridian.primary_per_ring must be >= 1".into());
        }
        if self.reassess_period_s == 0 || self.gossip_period_s == 0 {
            return Err("meridian periods must be > 0".into());
        }
        Ok(())
    }

    pub fn resolve(&self, node_count: usize) -> RingSetParams {
        let k = self
            .primary_per_ring
            .unwrap_or_else(|| primary_members_for(node_count));
        let l = self
            .secondary_per_ring
            .unwrap_or_else(|| node_count.saturating_sub(k));
        RingSetParams {
            ring_count: self.ring_count,
            alpha_ms: self.alpha_ms,
            ring_factor: self.ring_factor,
            k,
            l,
            beta: self.beta,
            reassess_period: SimTime::from_secs(self.reassess_period_s),
            gossip_period: SimTime::from_secs(self.gossip_period_s),
            staleness: SimTime::from_secs(self.staleness_s),
        }
    }
}

/// `⌊log₁.₆ N⌋`, at least 1. Computed by integer-exact repeated multiplication.
pub fn primary_members_for(node_count: usize) -> usize {
    let n = node_count as f64;
    let mut k = 0;
    let mut pow = 1.6_f64;
    while pow <= n {
        k += 1;
        pow *= 1.6;
    }
    k.max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RingSetParams {
    pub ring_count: usize,
    pub alpha_ms: f64,
    pub ring_factor: f64,
    pub k: usize,
    pub l: usize,
    pub beta: f64,
    pub reassess_period: SimTime,
    pub gossip_period: SimTime,
    pub staleness: SimTime,
}

impl RingSetParams {
    /// Outer radius `R_i` of ring `i`.
    pub fn outer_radius(&self, ring: usize) -> f64 {
        self.alpha_ms * self.ring_factor.powi(ring as i32)
    }

    /// Inner radius `r_i` of ring `i` (0 for the innermost ring).
    pub fn inner_radius(&self, ring: usize) -> f64 {
        if ring == 0 {
            0.0
        } else {
            self.outer_radius(ring - 1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingSlot {
    pub index: usize,
    /// Distance lies beyond the outermost radius.
    pub clamped: bool,
}

pub fn ring_index(d: f64, p: &RingSetParams) -> Result<RingSlot, MeridianError> {
    if !(d > 0.0) {
        return Err(MeridianError::NonPositiveDistance(d));
    }
    let mut index = 0;
    let mut upper = p.alpha_ms;
    while d > upper && index + 1 < p.ring_count {
        index += 1;
        upper *= p.ring_factor;
    }
    Ok(RingSlot {
        index,
        clamped: d > upper,
    })
}
