use serde::Serialize;

use super::{reassess_ring, ring_index, MeridianError, RingSetParams};
use crate::ids::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RingMember {
    pub node: NodeId,
    pub measured_distance: f64,
    /// Distances from this member to the other members of its ring, filled
    /// in at reassessment.
    pub coordinate_tuple: Vec<f64>,
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Primary(usize),
    Secondary(usize),
    /// Both tiers full; decided at the next reassessment.
    Pending(usize),
}

impl Placement {
    pub fn ring(self) -> usize {
        match self {
            Placement::Primary(r) | Placement::Secondary(r) | Placement::Pending(r) => r,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RingSnapshot {
    pub ring: usize,
    pub primary: Vec<(NodeId, f64)>,
    pub secondary: Vec<(NodeId, f64)>,
}

#[derive(Debug, Clone)]
pub struct MeridianRingSet {
    params: RingSetParams,
    primary: Vec<Vec<RingMember>>,
    secondary: Vec<Vec<RingMember>>,
    pending: Vec<Vec<RingMember>>,
}

impl MeridianRingSet {
    pub fn new(params: RingSetParams) -> Self {
        let rings = params.ring_count;
        MeridianRingSet {
            params,
            primary: vec![Vec::new(); rings],
            secondary: vec![Vec::new(); rings],
            pending: vec![Vec::new(); rings],
        }
    }

    pub fn params(&self) -> &RingSetParams {
        &self.params
    }

    pub fn primary(&self, ring: usize) -> &[RingMember] {
        &self.primary[ring]
    }

    pub fn secondary(&self, ring: usize) -> &[RingMember] {
        &self.secondary[ring]
    }

    pub fn locate(&self, node: NodeId) -> Option<Placement> {
        for ring in 0..self.params.ring_count {
            if self.primary[ring].iter().any(|m| m.node == node) {
                return Some(Placement::Primary(ring));
            }
            if self.secondary[ring].iter().any(|m| m.node == node) {
                return Some(Placement::Secondary(ring));
            }
            if self.pending[ring].iter().any(|m| m.node == node) {
                return Some(Placement::Pending(ring));
            }
        }
        None
    }

    pub fn member(&self, node: NodeId) -> Option<&RingMember> {
        self.tiers().flat_map(|t| t.iter()).find(|m| m.node == node)
    }

    fn tiers(&self) -> impl Iterator<Item = &Vec<RingMember>> {
        self.primary
            .iter()
            .chain(self.secondary.iter())
            .chain(self.pending.iter())
    }

    pub fn len(&self) -> usize {
        self.tiers().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn remove(&mut self, node: NodeId) -> bool {
        let mut found = false;
        for tier in self
            .primary
            .iter_mut()
            .chain(self.secondary.iter_mut())
            .chain(self.pending.iter_mut())
        {
            let before = tier.len();
            tier.retain(|m| m.node != node);
            found |= tier.len() != before;
        }
        found
    }

    /// Files `node` at measured distance `d`. A re-measured member stays in
    /// place when its ring is unchanged and moves otherwise.
    pub fn insert_member(&mut self, node: NodeId, d: f64) -> Result<Placement, MeridianError> {
        let slot = ring_index(d, &self.params)?;
        let ring = slot.index;
        if let Some(existing) = self.locate(node) {
            if existing.ring() == ring {
                let tier = match existing {
                    Placement::Primary(r) => &mut self.primary[r],
                    Placement::Secondary(r) => &mut self.secondary[r],
                    Placement::Pending(r) => &mut self.pending[r],
                };
                let m = tier.iter_mut().find(|m| m.node == node).expect("located");
                m.measured_distance = d;
                m.clamped = slot.clamped;
                return Ok(existing);
            }
            self.remove(node);
        }
        let member = RingMember {
            node,
            measured_distance: d,
            coordinate_tuple: Vec::new(),
            clamped: slot.clamped,
        };
        let placement = if self.primary[ring].len() < self.params.k {
            self.primary[ring].push(member);
            Placement::Primary(ring)
        } else if self.secondary[ring].len() < self.params.l {
            self.secondary[ring].push(member);
            Placement::Secondary(ring)
        } else {
            self.pending[ring].push(member);
            Placement::Pending(ring)
        };
        Ok(placement)
    }

    /// Primary members whose measured distance lies in `[lo, hi]`, sorted by id.
    pub fn primary_in_band(&self, lo: f64, hi: f64) -> Vec<&RingMember> {
        let mut out: Vec<&RingMember> = self
            .primary
            .iter()
            .flatten()
            .filter(|m| m.measured_distance >= lo && m.measured_distance <= hi)
            .collect();
        out.sort_by_key(|m| m.node);
        out
    }

    /// Re-runs the diversity selection on every ring. `tuples` receives the
    /// pooled members of one ring and returns one coordinate tuple per member.
    pub fn reassess<F>(&mut self, mut tuples: F)
    where
        F: FnMut(&[RingMember]) -> Vec<Vec<f64>>,
    {
        for ring in 0..self.params.ring_count {
            let mut pool: Vec<RingMember> = Vec::new();
            pool.append(&mut self.primary[ring]);
            pool.append(&mut self.secondary[ring]);
            pool.append(&mut self.pending[ring]);
            pool.sort_by_key(|m| m.node);
            if pool.is_empty() {
                continue;
            }
            let computed = tuples(&pool);
            for (m, t) in pool.iter_mut().zip(computed) {
                m.coordinate_tuple = t;
            }
            let (primary, mut secondary) = reassess_ring(&pool, self.params.k);
            secondary.truncate(self.params.l);
            self.primary[ring] = primary;
            self.secondary[ring] = secondary;
        }
    }

    pub fn snapshot(&self) -> Vec<RingSnapshot> {
        (0..self.params.ring_count)
            .map(|ring| RingSnapshot {
                ring,
                primary: self.primary[ring]
                    .iter()
                    .map(|m| (m.node, m.measured_distance))
                    .collect(),
                secondary: self.secondary[ring]
                    .iter()
                    .map(|m| (m.node, m.measured_distance))
                    .collect(),
            })
            .collect()
    }

    /// Ring-partition and capacity invariants; returns the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = std::collections::BTreeSet::new();
        for ring in 0..self.params.ring_count {
            if self.primary[ring].len() > self.params.k {
                return Err(format!("primary ring {ring} exceeds k"));
            }
            if self.secondary[ring].len() > self.params.l {
                return Err(format!("secondary ring {ring} exceeds l"));
            }
            for m in self.primary[ring]
                .iter()
                .chain(&self.secondary[ring])
                .chain(&self.pending[ring])
            {
                if !seen.insert(m.node) {
                    return Err(format!("{} filed twice", m.node));
                }
                let inner = self.params.inner_radius(ring);
                let outer = self.params.outer_radius(ring);
                let inside = m.measured_distance > inner && m.measured_distance <= outer;
                let clamped_ok =
                    m.clamped && ring + 1 == self.params.ring_count && m.measured_distance > outer;
                if !(inside || clamped_ok) {
                    return Err(format!(
                        "{} at {} ms outside ring {ring}",
                        m.node, m.measured_distance
                    ));
                }
            }
        }
        Ok(())
    }
}
