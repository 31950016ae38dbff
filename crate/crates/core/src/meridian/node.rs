//! Per-node Meridian state: ring set, membership table and gossip views.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{MeridianError, MeridianRingSet, Placement, RingMember, RingSetParams, RingSnapshot};
use crate::ids::NodeId;
use crate::kernel::SimTime;

/// One row of a gossip digest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GossipEntry {
    pub node: NodeId,
    /// Sender's last measured distance to `node`, if any.
    pub distance: Option<f64>,
    pub heard_at: SimTime,
    pub alive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeerEntry {
    pub distance: Option<f64>,
    pub heard_at: SimTime,
    pub alive: bool,
}

#[derive(Debug, Clone)]
pub struct MeridianNode {
    id: NodeId,
    rings: MeridianRingSet,
    known: BTreeMap<NodeId, PeerEntry>,
    /// Distance tables last gossiped by each peer.
    views: BTreeMap<NodeId, BTreeMap<NodeId, f64>>,
}

impl MeridianNode {
    pub fn new(id: NodeId, params: RingSetParams) -> Self {
        MeridianNode {
            id,
            rings: MeridianRingSet::new(params),
            known: BTreeMap::new(),
            views: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn rings(&self) -> &MeridianRingSet {
        &self.rings
    }

    pub fn knows(&self, peer: NodeId) -> bool {
        self.known.contains_key(&peer)
    }

    pub fn known_peers(&self) -> Vec<NodeId> {
        self.known.keys().copied().collect()
    }

    pub fn peer(&self, peer: NodeId) -> Option<&PeerEntry> {
        self.known.get(&peer)
    }

    /// Adds a contact without a measurement yet.
    pub fn add_contact(&mut self, peer: NodeId, now: SimTime) {
        if peer != self.id {
            self.known.entry(peer).or_insert(PeerEntry {
                distance: None,
                heard_at: now,
                alive: true,
            });
        }
    }

    pub fn record_measurement(
        &mut self,
        peer: NodeId,
        rtt_ms: f64,
        now: SimTime,
    ) -> Result<Placement, MeridianError> {
        let placement = self.rings.insert_member(peer, rtt_ms)?;
        self.known.insert(
            peer,
            PeerEntry {
                distance: Some(rtt_ms),
                heard_at: now,
                alive: true,
            },
        );
        Ok(placement)
    }

    /// Digest sent to a gossip partner; includes a fresh entry for ourselves.
    pub fn gossip_digest(&self, now: SimTime) -> Vec<GossipEntry> {
        let mut out = vec![GossipEntry {
            node: self.id,
            distance: Some(0.0),
            heard_at: now,
            alive: true,
        }];
        out.extend(self.known.iter().map(|(&node, e)| GossipEntry {
            node,
            distance: e.distance,
            heard_at: e.heard_at,
            alive: e.alive,
        }));
        out
    }

    /// Merges a digest from `from`. Returns peers learned for the first time,
    /// which the caller should probe.
    pub fn merge_gossip(
        &mut self,
        from: NodeId,
        digest: &[GossipEntry],
        now: SimTime,
        staleness: SimTime,
    ) -> Vec<NodeId> {
        let mut learned = Vec::new();
        let mut view = BTreeMap::new();
        for entry in digest {
            if let Some(d) = entry.distance {
                if entry.node != from {
                    view.insert(entry.node, d);
                }
            }
            if entry.node == self.id {
                continue;
            }
            match self.known.get_mut(&entry.node) {
                Some(local) => {
                    if entry.heard_at > local.heard_at {
                        local.heard_at = entry.heard_at;
                        local.alive = entry.alive;
                    }
                }
                None => {
                    if entry.alive && now.saturating_sub(entry.heard_at) <= staleness {
                        self.known.insert(
                            entry.node,
                            PeerEntry {
                                distance: None,
                                heard_at: entry.heard_at,
                                alive: true,
                            },
                        );
                        learned.push(entry.node);
                    }
                }
            }
        }
        self.views.insert(from, view);
        self.evict_stale(now, staleness);
        learned
    }

    /// Drops peers that are dead or have not been heard of within `staleness`.
    pub fn evict_stale(&mut self, now: SimTime, staleness: SimTime) -> Vec<NodeId> {
        let stale: Vec<NodeId> = self
            .known
            .iter()
            .filter(|(_, e)| !e.alive || now.saturating_sub(e.heard_at) > staleness)
            .map(|(&n, _)| n)
            .collect();
        for n in &stale {
            self.known.remove(n);
            self.views.remove(n);
            self.rings.remove(*n);
        }
        stale
    }

    /// Distance between two ring members as known from gossip, falling back
    /// to the triangle lower bound through this node.
    fn member_distance(&self, a: &RingMember, b: &RingMember) -> f64 {
        if a.node == b.node {
            return 0.0;
        }
        self.views
            .get(&a.node)
            .and_then(|v| v.get(&b.node))
            .or_else(|| self.views.get(&b.node).and_then(|v| v.get(&a.node)))
            .copied()
            .unwrap_or_else(|| (a.measured_distance - b.measured_distance).abs())
    }

    pub fn reassess(&mut self) {
        let params = self.rings.params().clone();
        let mut rings = std::mem::replace(&mut self.rings, MeridianRingSet::new(params));
        rings.reassess(|pool| {
            pool.iter()
                .map(|a| pool.iter().map(|b| self.member_distance(a, b)).collect())
                .collect()
        });
        self.rings = rings;
    }

    /// Unvisited primary members within the search band, by node id.
    pub fn candidates(&self, lo: f64, hi: f64) -> Vec<NodeId> {
        self.rings
            .primary_in_band(lo, hi)
            .iter()
            .map(|m| m.node)
            .collect()
    }

    pub fn snapshot(&self) -> Vec<RingSnapshot> {
        self.rings.snapshot()
    }
}
