//! Node selection strategies.
//!
//! Baseline and random selection are stateless and live here. Vivaldi and
//! Meridian keep protocol state inside the simulator and reach their decision
//! through message exchanges; all four report through [`SelectionResult`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::NodeId;
use crate::kernel::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Baseline,
    Random,
    Vivaldi,
    Meridian,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Baseline,
        StrategyKind::Random,
        StrategyKind::Vivaldi,
        StrategyKind::Meridian,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Baseline => "baseline",
            StrategyKind::Random => "random",
            StrategyKind::Vivaldi => "vivaldi",
            StrategyKind::Meridian => "meridian",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| StrategyError::UnknownStrategy(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StrategyError {
    #[error("no nodes to select from")]
    NoNodes,
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelectionResult {
    pub chosen: NodeId,
    pub probes_used: u32,
    pub messages_used: u32,
    pub decided_at: SimTime,
}

/// True state of one node as seen by the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeView {
    pub node: NodeId,
    pub rtt_ms: f64,
    pub has_free_slot: bool,
}

/// Lowest-RTT node with a free slot, or the lowest-RTT node overall when
/// every node is full. Ties go to the lowest id.
pub fn optimal_node(view: &[NodeView]) -> Option<NodeView> {
    let best = |only_free: bool| {
        view.iter()
            .filter(|v| v.has_free_slot || !only_free)
            .min_by(|a, b| a.rtt_ms.total_cmp(&b.rtt_ms).then(a.node.cmp(&b.node)))
            .copied()
    };
    best(true).or_else(|| best(false))
}

/// Omniscient selection; charges no protocol messages.
pub fn select_baseline(view: &[NodeView], now: SimTime) -> Result<SelectionResult, StrategyError> {
    let best = optimal_node(view).ok_or(StrategyError::NoNodes)?;
    Ok(SelectionResult {
        chosen: best.node,
        probes_used: 0,
        messages_used: 0,
        decided_at: now,
    })
}

/// Uniform draw over all nodes, blind to load.
pub fn select_random<R: Rng + ?Sized>(
    nodes: &[NodeId],
    rng: &mut R,
    now: SimTime,
) -> Result<SelectionResult, StrategyError> {
    if nodes.is_empty() {
        return Err(StrategyError::NoNodes);
    }
    Ok(SelectionResult {
        chosen: nodes[rng.gen_range(0..nodes.len())],
        probes_used: 0,
        messages_used: 0,
        decided_at: now,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::RngStream;
    use proptest::prelude::*;

    fn v(node: u32, rtt_ms: f64, free: bool) -> NodeView {
        NodeView {
            node: NodeId(node),
            rtt_ms,
            has_free_slot: free,
        }
    }

    #[test]
    fn baseline_examples() {
        let t = SimTime::from_secs(1);
        assert_eq!(
            select_baseline(&[v(0, 9.0, true), v(1, 4.0, true)], t)
                .unwrap()
                .chosen,
            NodeId(1)
        );
        assert_eq!(
            select_baseline(&[v(0, 9.0, true), v(1, 4.0, false)], t)
                .unwrap()
                .chosen,
            NodeId(0)
        );
        assert_eq!(
            select_baseline(&[v(0, 9.0, false), v(1, 4.0, false)], t)
                .unwrap()
                .chosen,
            NodeId(1)
        );
        assert_eq!(
            select_baseline(&[v(3, 4.0, true), v(1, 4.0, true)], t)
                .unwrap()
                .chosen,
            NodeId(1)
        );
        assert_eq!(select_baseline(&[], t), Err(StrategyError::NoNodes));
    }

    #[test]
    fn random_single_and_deterministic() {
        let mut r = RngStream::new(1, "random-select");
        assert_eq!(
            select_random(&[NodeId(4)], &mut r, SimTime::ZERO).unwrap().chosen,
            NodeId(4)
        );
        let nodes: Vec<NodeId> = (0..29).map(NodeId).collect();
        let draw = |seed| {
            let mut r = RngStream::new(seed, "random-select");
            (0..50)
                .map(|_| select_random(&nodes, &mut r, SimTime::ZERO).unwrap().chosen)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        assert!(select_random(&[], &mut r, SimTime::ZERO).is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.as_str().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("nearest".parse::<StrategyKind>().is_err());
    }

    proptest! {
        #[test]
        fn baseline_matches_brute_force(rtts in prop::collection::vec((0.1f64..50.0, any::<bool>()), 1..40)) {
            let view: Vec<NodeView> = rtts.iter().enumerate().map(|(i, &(r, f))| v(i as u32, r, f)).collect();
            let chosen = select_baseline(&view, SimTime::ZERO).unwrap().chosen;
            let any_free = view.iter().any(|x| x.has_free_slot);
            let mut best: Option<&NodeView> = None;
            for x in &view {
                if any_free && !x.has_free_slot {
                    continue;
                }
                if best.is_none_or(|b| x.rtt_ms < b.rtt_ms) {
                    best = Some(x);
                }
            }
            prop_assert_eq!(chosen, best.unwrap().node);
        }
    }
}
