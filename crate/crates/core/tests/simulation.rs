use std::collections::BTreeMap;

use fogsim::metrics::selection_error;
use fogsim::scenario::{AreaSpec, ClientParams, WorldParams};
use fogsim::{run, NodeSource, RunOutput, SimConfig, SimTime, StrategyKind, TraceSource, World};

const SECS: u64 = 20;

fn world(seed: u64, clients: usize) -> World {
    World::build(
        seed,
        clients,
        SimTime::from_secs(SECS),
        &AreaSpec::default(),
        &WorldParams::default(),
        &ClientParams::default(),
        NodeSource::Bundled,
        TraceSource::Generate,
    )
    .unwrap()
}

fn simulate(strategy: StrategyKind, seed: u64, clients: usize, log: bool) -> RunOutput {
    let mut cfg = SimConfig::new(strategy, seed, SimTime::from_secs(SECS));
    cfg.keep_message_log = log;
    run(&cfg, &world(seed, clients)).unwrap()
}

#[test]
fn identical_inputs_give_identical_outputs() {
    for s in StrategyKind::ALL {
        let a = simulate(s, 11, 60, true);
        let b = simulate(s, 11, 60, true);
        assert_eq!(format!("{a:?}"), format!("{b:?}"), "{s} diverged");
    }
}

#[test]
fn different_seeds_differ() {
    let a = simulate(StrategyKind::Random, 1, 40, false);
    let b = simulate(StrategyKind::Random, 2, 40, false);
    assert_ne!(a.discoveries, b.discoveries);
}

#[test]
fn every_message_has_one_outcome() {
    for s in StrategyKind::ALL {
        let out = simulate(s, 3, 120, false);
        let l = &out.ledger;
        assert!(l.sent > 0);
        assert_eq!(l.sent, l.delivered + l.lost + l.timed_out, "{s}");
        assert!(l.is_conserved());
        for c in &out.clients {
            assert_eq!(c.reconnects, c.lost + c.timed_out, "{s} client {:?}", c.client);
        }
    }
}

#[test]
fn baseline_always_picks_the_optimum() {
    let out = simulate(StrategyKind::Baseline, 4, 150, false);
    assert!(!out.discoveries.is_empty());
    for r in &out.discoveries {
        assert_eq!(r.chosen, r.optimal);
        assert_eq!(r.messages_used, 0);
    }
    assert_eq!(selection_error(&out.discoveries), Some(0.0));
}

#[test]
fn discovery_message_counts_match_the_log() {
    for s in StrategyKind::ALL {
        let out = simulate(s, 5, 80, true);
        let log = out.ledger.log().expect("logging enabled");
        let mut tagged: BTreeMap<u64, u32> = BTreeMap::new();
        for e in log {
            if let Some(d) = e.discovery {
                *tagged.entry(d).or_default() += 1;
            }
        }
        assert!(!out.discoveries.is_empty());
        for r in &out.discoveries {
            let counted = tagged.get(&r.discovery).copied().unwrap_or(0);
            assert_eq!(counted, r.messages_used, "{s} discovery {}", r.discovery);
            match s {
                StrategyKind::Baseline | StrategyKind::Random => assert_eq!(r.messages_used, 0),
                StrategyKind::Vivaldi => assert_eq!(r.messages_used, 2),
                StrategyKind::Meridian => assert!(r.messages_used >= 3),
            }
        }
    }
}

#[test]
fn meridian_hops_strictly_approach_the_client() {
    let out = simulate(StrategyKind::Meridian, 6, 100, false);
    assert!(!out.searches.is_empty());
    for s in &out.searches {
        for w in s.hops.windows(2) {
            assert!(
                w[1].1 < w[0].1,
                "search {} did not improve: {:?}",
                s.discovery,
                s.hops
            );
        }
        let mut seen: Vec<_> = s.hops.iter().map(|h| h.0).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), s.hops.len(), "node revisited");
    }
}

#[test]
fn meridian_rings_are_populated_after_bootstrap() {
    let out = simulate(StrategyKind::Meridian, 7, 20, false);
    for n in &out.nodes {
        let rings = n.rings.as_ref().expect("meridian run keeps rings");
        let members: usize = rings.iter().map(|r| r.primary.len() + r.secondary.len()).sum();
        assert_eq!(members, out.nodes.len() - 1, "node {:?}", n.node);
    }
}

#[test]
fn strategies_share_the_world() {
    let w = world(8, 50);
    let a = run(
        &SimConfig::new(StrategyKind::Baseline, 8, SimTime::from_secs(SECS)),
        &w,
    )
    .unwrap();
    let b = run(
        &SimConfig::new(StrategyKind::Vivaldi, 8, SimTime::from_secs(SECS)),
        &w,
    )
    .unwrap();
    let slots = |o: &RunOutput| o.nodes.iter().map(|n| n.slots).collect::<Vec<_>>();
    assert_eq!(slots(&a), slots(&b));
    assert_eq!(slots(&a).iter().sum::<u32>(), 318);
}

#[test]
fn no_clients_means_only_maintenance_traffic() {
    let out = simulate(StrategyKind::Baseline, 9, 0, false);
    assert_eq!(out.ledger.sent, 0);
    let m = simulate(StrategyKind::Meridian, 9, 0, false);
    assert!(m.ledger.sent > 0);
    assert!(m.discoveries.is_empty());
}

#[test]
fn summary_row_is_consistent() {
    let out = simulate(StrategyKind::Vivaldi, 10, 90, false);
    let row = out.summarize(90.0 / 318.0);
    assert_eq!(row.strategy, "vivaldi");
    assert_eq!(row.clients, 90);
    assert_eq!(row.nodes, 29);
    assert_eq!(row.discoveries, out.discoveries.len());
    assert_eq!(row.tasks_sent, out.tasks.len());
    assert_eq!(row.messages_sent, out.ledger.sent);
    assert!(row.selection_error.unwrap() >= 0.0);
}
