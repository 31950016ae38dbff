use std::collections::BTreeSet;

use super::{MeridianRingSet, RingSetParams};
use crate::ids::NodeId;

/// Candidate band and answer deadline for one search hop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBand {
    pub lo: f64,
    pub hi: f64,
    /// Answers later than this (ms after the hop's queries go out) are ignored.
    pub deadline_ms: f64,
}

pub fn search_band(d: f64, beta: f64) -> SearchBand {
    SearchBand {
        lo: (1.0 - beta) * d,
        hi: (1.0 + beta) * d,
        deadline_ms: (2.0 * beta + 1.0) * d,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HopDecision {
    Forward { to: NodeId, distance: f64 },
    Stop,
}

/// Forwards to the closest answer if it is strictly closer than `current`.
pub fn decide_hop(current: f64, answers: &[(NodeId, f64)]) -> HopDecision {
    let best = answers
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    match best {
        Some(&(to, distance)) if distance < current => HopDecision::Forward { to, distance },
        _ => HopDecision::Stop,
    }
}

/// Omniscient view of one search target.
pub trait SearchOracle {
    /// Round trip between `node` and the target.
    fn rtt_to_target(&self, node: NodeId) -> f64;
    /// Round trip between two nodes.
    fn rtt_between(&self, a: NodeId, b: NodeId) -> f64;
    fn has_free_slot(&self, node: NodeId) -> bool;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    /// Every node that held the query with its distance to the target.
    pub hops: Vec<(NodeId, f64)>,
    pub chosen: NodeId,
    pub candidates_asked: usize,
}

/// Closest-node search run synchronously against an oracle.
///
/// An answer from candidate `y` reaches the querier after the node-to-node
/// round trip plus `y`'s own probe of the target; answers slower than the
/// band deadline are dropped. Full nodes do not answer.
pub fn closest_node_search<O: SearchOracle>(
    entry: NodeId,
    rings: &[MeridianRingSet],
    oracle: &O,
    params: &RingSetParams,
) -> SearchTrace {
    let mut current = entry;
    let mut d = oracle.rtt_to_target(entry);
    let mut visited = BTreeSet::from([entry]);
    let mut hops = vec![(entry, d)];
    let mut asked = 0;
    loop {
        let band = search_band(d, params.beta);
        let mut answers = Vec::new();
        for m in rings[current.index()].primary_in_band(band.lo, band.hi) {
            if visited.contains(&m.node) {
                continue;
            }
            asked += 1;
            if !oracle.has_free_slot(m.node) {
                continue;
            }
            let dist = oracle.rtt_to_target(m.node);
            let elapsed = oracle.rtt_between(current, m.node) + dist;
            if elapsed <= band.deadline_ms {
                answers.push((m.node, dist));
            }
        }
        match decide_hop(d, &answers) {
            HopDecision::Forward { to, distance } => {
                visited.insert(to);
                hops.push((to, distance));
                current = to;
                d = distance;
            }
            HopDecision::Stop => break,
        }
    }
    SearchTrace {
        hops,
        chosen: current,
        candidates_asked: asked,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meridian::MeridianParams;
    use approx::assert_relative_eq;

    #[test]
    fn band_for_d10_beta_half() {
        let b = search_band(10.0, 0.5);
        assert_relative_eq!(b.lo, 5.0);
        assert_relative_eq!(b.hi, 15.0);
        assert_relative_eq!(b.deadline_ms, 20.0);
    }

    #[test]
    fn decide_requires_strictly_closer() {
        assert_eq!(decide_hop(5.0, &[]), HopDecision::Stop);
        assert_eq!(decide_hop(5.0, &[(NodeId(1), 5.0)]), HopDecision::Stop);
        assert_eq!(
            decide_hop(5.0, &[(NodeId(2), 3.0), (NodeId(1), 3.0), (NodeId(3), 4.0)]),
            HopDecision::Forward {
                to: NodeId(1),
                distance: 3.0
            }
        );
    }

    /// Points on a line; distances are absolute differences.
    struct Line {
        pos: Vec<f64>,
        target: f64,
        full: Vec<bool>,
    }

    impl SearchOracle for Line {
        fn rtt_to_target(&self, n: NodeId) -> f64 {
            (self.pos[n.index()] - self.target).abs()
        }
        fn rtt_between(&self, a: NodeId, b: NodeId) -> f64 {
            (self.pos[a.index()] - self.pos[b.index()]).abs()
        }
        fn has_free_slot(&self, n: NodeId) -> bool {
            !self.full[n.index()]
        }
    }

    fn bootstrap(world: &Line, params: &RingSetParams) -> Vec<MeridianRingSet> {
        (0..world.pos.len())
            .map(|i| {
                let mut rs = MeridianRingSet::new(params.clone());
                for j in 0..world.pos.len() {
                    if i != j {
                        let d = world.rtt_between(NodeId(i as u32), NodeId(j as u32));
                        rs.insert_member(NodeId(j as u32), d).unwrap();
                    }
                }
                rs
            })
            .collect()
    }

    #[test]
    fn one_hop_to_collocated_member() {
        let params = MeridianParams::default().resolve(3);
        let world = Line {
            pos: vec![0.0, 4.0, 30.0],
            target: 4.0001,
            full: vec![false; 3],
        };
        let rings = bootstrap(&world, &params);
        let trace = closest_node_search(NodeId(0), &rings, &world, &params);
        assert_eq!(trace.chosen, NodeId(1));
        assert_eq!(trace.hops.len(), 2);
    }

    #[test]
    fn full_candidates_are_skipped() {
        let params = MeridianParams::default().resolve(3);
        let world = Line {
            pos: vec![0.0, 4.0, 30.0],
            target: 4.0001,
            full: vec![false, true, false],
        };
        let rings = bootstrap(&world, &params);
        let trace = closest_node_search(NodeId(0), &rings, &world, &params);
        assert_eq!(trace.chosen, NodeId(0));
    }

    #[test]
    fn hop_distances_strictly_decrease() {
        let params = MeridianParams::default().resolve(12);
        let world = Line {
            pos: (0..12).map(|i| 1.3f64.powi(i)).collect(),
            target: 0.2,
            full: vec![false; 12],
        };
        let rings = bootstrap(&world, &params);
        for entry in 0..12 {
            let trace = closest_node_search(NodeId(entry), &rings, &world, &params);
            assert!(trace.hops.windows(2).all(|w| w[1].1 < w[0].1));
            let chosen = world.rtt_to_target(trace.chosen);
            assert!(trace.hops.iter().all(|(_, d)| chosen <= *d));
        }
    }
}
