//! Message accounting and result metrics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::{ClientId, EntityId, NodeId};
use crate::kernel::SimTime;
use crate::net::{Delivery, MessageId, MessageKind};

/// One client discovery: the node picked and the oracle's pick at that instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscoveryRecord {
    pub discovery: u64,
    pub client: ClientId,
    pub decided_at: SimTime,
    pub chosen: NodeId,
    pub optimal: NodeId,
    pub achieved_rtt_ms: f64,
    pub optimal_rtt_ms: f64,
    pub probes_used: u32,
    pub messages_used: u32,
}

/// One task send with the model RTT to the serving node and to the node the
/// oracle would have picked at send time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaskRecord {
    pub client: ClientId,
    pub sent_at: SimTime,
    pub node: NodeId,
    pub rtt_ms: f64,
    pub optimal_rtt_ms: f64,
    pub outcome: Delivery,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EntityCounters {
    pub sent: u64,
    pub received: u64,
    pub lost: u64,
    pub timed_out: u64,
    pub reconnects: u64,
    pub rediscoveries: u64,
    pub sent_by_kind: [u64; 5],
}

/// Raw log line; only kept when logging is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogEntry {
    pub id: MessageId,
    pub src: EntityId,
    pub dst: EntityId,
    pub kind: MessageKind,
    pub sent_at: SimTime,
    pub outcome: Option<Delivery>,
    /// Discovery this message belongs to, if any.
    pub discovery: Option<u64>,
}

fn kind_index(kind: MessageKind) -> usize {
    MessageKind::ALL.iter().position(|k| *k == kind).expect("listed")
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct MessageLedger {
    pub nodes: Vec<EntityCounters>,
    pub clients: Vec<EntityCounters>,
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
    pub timed_out: u64,
    log: Option<Vec<LogEntry>>,
}

impl MessageLedger {
    pub fn new(nodes: usize, clients: usize, keep_log: bool) -> Self {
        MessageLedger {
            nodes: vec![EntityCounters::default(); nodes],
            clients: vec![EntityCounters::default(); clients],
            log: keep_log.then(Vec::new),
            ..MessageLedger::default()
        }
    }

    pub fn entity_mut(&mut self, e: EntityId) -> &mut EntityCounters {
        match e {
            EntityId::Node(n) => &mut self.nodes[n.index()],
            EntityId::Client(c) => &mut self.clients[c.index()],
        }
    }

    pub fn entity(&self, e: EntityId) -> &EntityCounters {
        match e {
            EntityId::Node(n) => &self.nodes[n.index()],
            EntityId::Client(c) => &self.clients[c.index()],
        }
    }

    pub fn record_send(
        &mut self,
        id: MessageId,
        src: EntityId,
        dst: EntityId,
        kind: MessageKind,
        sent_at: SimTime,
        discovery: Option<u64>,
    ) {
        self.sent += 1;
        let c = self.entity_mut(src);
        c.sent += 1;
        c.sent_by_kind[kind_index(kind)] += 1;
        if let Some(log) = &mut self.log {
            debug_assert_eq!(log.len() as u64, id.0);
            log.push(LogEntry {
                id,
                src,
                dst,
                kind,
                sent_at,
                outcome: None,
                discovery,
            });
        }
    }

    pub fn record_outcome(&mut self, id: MessageId, src: EntityId, dst: EntityId, outcome: Delivery) {
        match outcome {
            Delivery::Delivered => {
                self.delivered += 1;
                self.entity_mut(dst).received += 1;
            }
            Delivery::Lost => {
                self.lost += 1;
                self.entity_mut(src).lost += 1;
            }
            Delivery::TimedOut => {
                self.timed_out += 1;
                self.entity_mut(src).timed_out += 1;
            }
        }
        if let Some(log) = &mut self.log {
            log[id.0 as usize].outcome = Some(outcome);
        }
    }

    pub fn log(&self) -> Option<&[LogEntry]> {
        self.log.as_deref()
    }

    /// `sent = delivered + lost + timed_out`.
    pub fn is_conserved(&self) -> bool {
        self.sent == self.delivered + self.lost + self.timed_out
    }
}

/// Mean over clients of the per-client RMSE of `(achieved, optimal)` pairs.
/// Clients without samples are excluded; `None` when there are no samples.
pub fn mean_rmse<I>(samples: I) -> Option<f64>
where
    I: IntoIterator<Item = (ClientId, f64, f64)>,
{
    let mut per_client: BTreeMap<ClientId, (f64, usize)> = BTreeMap::new();
    for (client, d, f) in samples {
        let e = per_client.entry(client).or_default();
        e.0 += (d - f).powi(2);
        e.1 += 1;
    }
    if per_client.is_empty() {
        return None;
    }
    let n = per_client.len() as f64;
    Some(
        per_client
            .values()
            .map(|(sq, m)| (sq / *m as f64).sqrt())
            .sum::<f64>()
            / n,
    )
}

/// RMSE of the RTT each task saw against the oracle-optimal RTT at send time.
pub fn connection_error(tasks: &[TaskRecord]) -> Option<f64> {
    mean_rmse(tasks.iter().map(|t| (t.client, t.rtt_ms, t.optimal_rtt_ms)))
}

/// RMSE of chosen vs optimal RTT at the moment of each discovery.
pub fn selection_error(records: &[DiscoveryRecord]) -> Option<f64> {
    mean_rmse(
        records
            .iter()
            .map(|r| (r.client, r.achieved_rtt_ms, r.optimal_rtt_ms)),
    )
}

/// Mean number of distinct chosen nodes per `bucket`, over non-empty buckets.
pub fn unique_selections(records: &[DiscoveryRecord], bucket: SimTime) -> Option<f64> {
    let width = bucket.as_micros().max(1);
    let mut buckets: BTreeMap<u64, BTreeSet<NodeId>> = BTreeMap::new();
    for r in records {
        buckets
            .entry(r.decided_at.as_micros() / width)
            .or_default()
            .insert(r.chosen);
    }
    if buckets.is_empty() {
        return None;
    }
    Some(buckets.values().map(|s| s.len() as f64).sum::<f64>() / buckets.len() as f64)
}

pub fn optimal_rate(records: &[DiscoveryRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let hits = records.iter().filter(|r| r.chosen == r.optimal).count();
    Some(hits as f64 / records.len() as f64)
}

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub strategy: String,
    pub client_ratio: f64,
    pub seed: u64,
    pub clients: usize,
    pub nodes: usize,
    pub discoveries: usize,
    pub tasks_sent: usize,
    pub mean_client_messages: f64,
    pub mean_client_sent: f64,
    pub mean_client_received: f64,
    pub mean_lost: f64,
    pub mean_timed_out: f64,
    pub mean_reconnects: f64,
    pub mean_rediscoveries: f64,
    pub mean_node_in: f64,
    pub mean_node_out: f64,
    pub mean_node_total: f64,
    pub optimal_rate: Option<f64>,
    pub connection_error: Option<f64>,
    pub selection_error: Option<f64>,
    pub unique_selections: Option<f64>,
    pub mean_rtt_task: Option<f64>,
    pub mean_rtt_client: Option<f64>,
    pub messages_sent: u64,
    pub messages_delivered: u64,
    pub messages_lost: u64,
    pub messages_timed_out: u64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Identifies the run a row belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct RunKey {
    pub strategy: String,
    pub client_ratio: f64,
    pub seed: u64,
}

pub fn summarize(
    key: &RunKey,
    ledger: &MessageLedger,
    discoveries: &[DiscoveryRecord],
    tasks: &[TaskRecord],
    bucket: SimTime,
) -> ResultRow {
    let clients = &ledger.clients;
    let nodes = &ledger.nodes;
    let delivered: Vec<&TaskRecord> = tasks
        .iter()
        .filter(|t| t.outcome == Delivery::Delivered)
        .collect();
    let mut per_client: BTreeMap<ClientId, (f64, usize)> = BTreeMap::new();
    for t in &delivered {
        let e = per_client.entry(t.client).or_default();
        e.0 += t.rtt_ms;
        e.1 += 1;
    }
    ResultRow {
        strategy: key.strategy.clone(),
        client_ratio: key.client_ratio,
        seed: key.seed,
        clients: clients.len(),
        nodes: nodes.len(),
        discoveries: discoveries.len(),
        tasks_sent: tasks.len(),
        mean_client_messages: mean(clients.iter().map(|c| (c.sent + c.received) as f64)),
        mean_client_sent: mean(clients.iter().map(|c| c.sent as f64)),
        mean_client_received: mean(clients.iter().map(|c| c.received as f64)),
        mean_lost: mean(clients.iter().map(|c| c.lost as f64)),
        mean_timed_out: mean(clients.iter().map(|c| c.timed_out as f64)),
        mean_reconnects: mean(clients.iter().map(|c| c.reconnects as f64)),
        mean_rediscoveries: mean(clients.iter().map(|c| c.rediscoveries as f64)),
        mean_node_in: mean(nodes.iter().map(|c| c.received as f64)),
        mean_node_out: mean(nodes.iter().map(|c| c.sent as f64)),
        mean_node_total: mean(nodes.iter().map(|c| (c.sent + c.received) as f64)),
        optimal_rate: optimal_rate(discoveries),
        connection_error: connection_error(tasks),
        selection_error: selection_error(discoveries),
        unique_selections: unique_selections(discoveries, bucket),
        mean_rtt_task: (!delivered.is_empty()).then(|| mean(delivered.iter().map(|t| t.rtt_ms))),
        mean_rtt_client: (!per_client.is_empty())
            .then(|| mean(per_client.values().map(|(s, n)| s / *n as f64))),
        messages_sent: ledger.sent,
        messages_delivered: ledger.delivered,
        messages_lost: ledger.lost,
        messages_timed_out: ledger.timed_out,
    }
}
