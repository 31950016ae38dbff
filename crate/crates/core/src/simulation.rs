//! Event-driven simulation of one (strategy, client count, seed) point.
//!
//! Every interaction is a message with a one-way latency taken from the
//! latency model at send time. Clients start after their trace's delay, send
//! a task every 0.5–1 s to the node they are connected to and rediscover on
//! loss, timeout or degraded round trips. After `duration` no new activity is
//! started and the simulation drains until every message has an outcome.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::ids::{ClientId, EntityId, NodeId};
use crate::kernel::{EventHandle, Kernel, KernelStats, SimTime};
use crate::meridian::{
    decide_hop, search_band, GossipEntry, HopDecision, MeridianNode, MeridianParams, RingSnapshot,
};
use crate::metrics::{summarize, DiscoveryRecord, MessageLedger, ResultRow, RunKey, TaskRecord};
use crate::net::{
    end_to_end_latency, Delivery, EndpointLoad, LatencyParams, Message, MessageId, MessageKind,
};
use crate::scenario::{
    bundled_world, generate_traces, load_world, position_at, read_traces, AreaSpec, ClientParams,
    ClientTrace, FogNodeSpec, ScenarioError, WorldParams,
};
use crate::strategies::{
    optimal_node, select_baseline, select_random, NodeView, SelectionResult, StrategyKind,
};
use crate::vivaldi::{nearest_node, VivaldiCoordinate, VivaldiParams};

/// Bucket width for unique selections.
pub const DISCOVERY_TIMESTEP: SimTime = SimTime::from_secs(1);

/// Upper bound on the drain phase; reaching it means something never settled.
const DRAIN_LIMIT: SimTime = SimTime::from_secs(120);

/// A discovery that has not finished within this many timeouts is abandoned.
const DISCOVERY_PATIENCE: u64 = 10;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("message addressed to unknown entity {0}")]
    UnknownEntity(EntityId),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Kernel(#[from] crate::kernel::KernelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub duration: SimTime,
    pub area: AreaSpec,
    pub latency: LatencyParams,
    pub vivaldi: VivaldiParams,
    pub meridian: MeridianParams,
    pub clients: ClientParams,
    /// Keep every message header for later inspection.
    pub keep_message_log: bool,
}

impl SimConfig {
    pub fn new(strategy: StrategyKind, seed: u64, duration: SimTime) -> Self {
        SimConfig {
            strategy,
            seed,
            duration,
            area: AreaSpec::default(),
            latency: LatencyParams::default(),
            vivaldi: VivaldiParams::default(),
            meridian: MeridianParams::default(),
            clients: ClientParams::default(),
            keep_message_log: false,
        }
    }
}

/// Fog nodes and client traces for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub nodes: Vec<FogNodeSpec>,
    pub traces: Vec<ClientTrace>,
}

/// Where fog node positions come from.
#[derive(Debug, Clone, Copy)]
pub enum NodeSource<'a> {
    Bundled,
    File(&'a Path),
}

/// Where client movement comes from.
#[derive(Debug, Clone, Copy)]
pub enum TraceSource<'a> {
    Generate,
    /// Traces for at least as many clients as requested; extra ones are ignored.
    File(&'a Path),
}

impl World {
    /// Builds the world for `seed` drawing from the `slots`, `hardware`,
    /// `traces` and `startup` streams only, so every strategy sees the same one.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        seed: u64,
        client_count: usize,
        duration: SimTime,
        area: &AreaSpec,
        world: &WorldParams,
        clients: &ClientParams,
        nodes: NodeSource<'_>,
        traces: TraceSource<'_>,
    ) -> Result<World, ScenarioError> {
        let mut kernel: Kernel<()> = Kernel::new(seed);
        let mut slot_rng = kernel.rng("slots").clone();
        let mut hw_rng = kernel.rng("hardware").clone();
        let nodes = match nodes {
            NodeSource::Bundled => bundled_world(area, world, &mut slot_rng, &mut hw_rng)?,
            NodeSource::File(p) => load_world(p, area, world, &mut slot_rng, &mut hw_rng)?,
        };
        let mut trace_rng = kernel.rng("traces").clone();
        let mut startup_rng = kernel.rng("startup").clone();
        let traces = match traces {
            TraceSource::Generate => generate_traces(
                client_count,
                area,
                clients,
                duration,
                &mut trace_rng,
                &mut startup_rng,
            ),
            TraceSource::File(p) => {
                let mut all = read_traces(p, area, clients, &mut startup_rng)?;
                if all.len() < client_count {
                    return Err(ScenarioError::Invalid(format!(
                        "trace file {} has {} clients, {} requested",
                        p.display(),
                        all.len(),
                        client_count
                    )));
                }
                all.truncate(client_count);
                all
            }
        };
        Ok(World { nodes, traces })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ProbePurpose {
    Vivaldi,
    Ring,
    SearchEntry {
        discovery: u64,
    },
    SearchCandidate {
        discovery: u64,
        hop: u32,
        querier: NodeId,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Payload {
    Task {
        record: usize,
    },
    TaskReply {
        rtt_ms: f64,
        coord: VivaldiCoordinate,
    },
    DiscoveryRequest {
        discovery: u64,
        coord: VivaldiCoordinate,
    },
    DiscoveryReply {
        discovery: u64,
        chosen: NodeId,
    },
    Probe {
        purpose: ProbePurpose,
    },
    ProbeReply {
        purpose: ProbePurpose,
        rtt_ms: f64,
        coord: VivaldiCoordinate,
    },
    ProbeRequest {
        discovery: u64,
        hop: u32,
    },
    ProbeReport {
        discovery: u64,
        hop: u32,
        distance: f64,
    },
    ForwardQuery {
        discovery: u64,
        distance: f64,
    },
    Gossip {
        digest: Vec<GossipEntry>,
    },
}

impl Payload {
    fn kind(&self) -> MessageKind {
        match self {
            Payload::Task { .. } => MessageKind::Task,
            Payload::DiscoveryRequest { .. }
            | Payload::ProbeRequest { .. }
            | Payload::ForwardQuery { .. } => MessageKind::Discovery,
            Payload::Probe { .. } => MessageKind::Probe,
            Payload::Gossip { .. } => MessageKind::Gossip,
            Payload::TaskReply { .. }
            | Payload::DiscoveryReply { .. }
            | Payload::ProbeReply { .. }
            | Payload::ProbeReport { .. } => MessageKind::Response,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ev {
    ClientStart,
    TaskTimer,
    Arrive(MessageId),
    /// Sender-side timeout of a message; for tasks this is when the client
    /// notices the loss.
    Expire(MessageId),
    TaskDone,
    VivaldiTick,
    GossipTick,
    ReassessTick,
    SearchDeadline {
        discovery: u64,
        hop: u32,
    },
    DiscoveryWatchdog {
        discovery: u64,
    },
}

#[derive(Debug)]
struct InFlight {
    header: Message,
    payload: Payload,
    /// Round trip between the endpoints, sampled at send time.
    rtt_ms: f64,
    /// Outcome already decided (lost at arrival); awaiting the sender's timeout.
    settled: bool,
}

#[derive(Debug)]
struct NodeState {
    spec: FogNodeSpec,
    busy: u32,
    coord: VivaldiCoordinate,
    /// Smoothed absolute prediction error of Vivaldi samples, ms.
    error_ewma: Option<f64>,
    ticks: u64,
    meridian: Option<MeridianNode>,
}

impl NodeState {
    fn has_free_slot(&self) -> bool {
        self.busy < self.spec.slots
    }
}

#[derive(Debug, Default)]
struct ClientState {
    started: bool,
    connected: Option<NodeId>,
    last_node: Option<NodeId>,
    best_rtt: Option<f64>,
    discovering: Option<u64>,
    coord: Option<VivaldiCoordinate>,
    probes_received: u64,
    probe_replies: u64,
    tasks_lost: u64,
}

#[derive(Debug)]
struct Discovery {
    client: ClientId,
    started_at: SimTime,
    messages: u32,
    probes: u32,
    record: Option<usize>,
}

#[derive(Debug)]
struct Search {
    client: ClientId,
    current: NodeId,
    d: f64,
    hop: u32,
    visited: BTreeSet<NodeId>,
    awaiting: BTreeSet<NodeId>,
    answers: Vec<(NodeId, f64)>,
    deadline: Option<EventHandle>,
    hops: Vec<(NodeId, f64)>,
}

/// Hop trace of one Meridian discovery.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchLog {
    pub discovery: u64,
    pub client: ClientId,
    /// Node holding the query and its measured distance to the client.
    pub hops: Vec<(NodeId, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeSnapshot {
    pub node: NodeId,
    pub x_m: f64,
    pub y_m: f64,
    pub slots: u32,
    pub hardware_factor: f64,
    pub coordinate: VivaldiCoordinate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rings: Option<Vec<RingSnapshot>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClientSummary {
    pub client: ClientId,
    pub sent: u64,
    pub received: u64,
    pub lost: u64,
    pub timed_out: u64,
    pub reconnects: u64,
    pub rediscoveries: u64,
    pub probes_received: u64,
    pub probe_replies: u64,
}

/// Everything a finished run produced.
#[derive(Debug, Clone, Serialize)]
pub struct RunOutput {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub ledger: MessageLedger,
    pub discoveries: Vec<DiscoveryRecord>,
    pub tasks: Vec<TaskRecord>,
    pub searches: Vec<SearchLog>,
    pub nodes: Vec<NodeSnapshot>,
    pub clients: Vec<ClientSummary>,
    pub invalid_vivaldi_samples: u64,
    #[serde(skip)]
    pub kernel: KernelStats,
    pub end_time: SimTime,
}

impl RunOutput {
    pub fn summarize(&self, client_ratio: f64) -> ResultRow {
        let key = RunKey {
            strategy: self.strategy.to_string(),
            client_ratio,
            seed: self.seed,
        };
        summarize(
            &key,
            &self.ledger,
            &self.discoveries,
            &self.tasks,
            DISCOVERY_TIMESTEP,
        )
    }
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    k: Kernel<Ev>,
    nodes: Vec<NodeState>,
    traces: &'a [ClientTrace],
    clients: Vec<ClientState>,
    ledger: MessageLedger,
    inflight: HashMap<MessageId, InFlight>,
    next_msg: u64,
    discoveries: BTreeMap<u64, Discovery>,
    next_discovery: u64,
    searches: HashMap<u64, Search>,
    search_logs: Vec<SearchLog>,
    records: Vec<DiscoveryRecord>,
    tasks: Vec<TaskRecord>,
    all_nodes: Vec<NodeId>,
    invalid_samples: u64,
}

/// Runs one simulation to completion.
pub fn run(cfg: &SimConfig, world: &World) -> Result<RunOutput, SimError> {
    if world.nodes.is_empty() {
        return Err(SimError::Scenario(ScenarioError::Invalid(
            "world has no fog nodes".into(),
        )));
    }
    let n = world.nodes.len();
    let ring_params = cfg.meridian.resolve(n);
    let nodes = world
        .nodes
        .iter()
        .map(|spec| NodeState {
            spec: spec.clone(),
            busy: 0,
            coord: VivaldiCoordinate::origin(&cfg.vivaldi),
            error_ewma: None,
            ticks: 0,
            meridian: (cfg.strategy == StrategyKind::Meridian)
                .then(|| MeridianNode::new(spec.id, ring_params.clone())),
        })
        .collect();
    let clients = world
        .traces
        .iter()
        .map(|_| ClientState {
            coord: (cfg.strategy == StrategyKind::Vivaldi).then(|| VivaldiCoordinate::origin(&cfg.vivaldi)),
            ..ClientState::default()
        })
        .collect();
    let mut sim = Sim {
        cfg,
        k: Kernel::new(cfg.seed),
        nodes,
        traces: &world.traces,
        clients,
        ledger: MessageLedger::new(n, world.traces.len(), cfg.keep_message_log),
        inflight: HashMap::new(),
        next_msg: 0,
        discoveries: BTreeMap::new(),
        next_discovery: 0,
        searches: HashMap::new(),
        search_logs: Vec::new(),
        records: Vec::new(),
        tasks: Vec::new(),
        all_nodes: world.nodes.iter().map(|s| s.id).collect(),
        invalid_samples: 0,
    };
    sim.bootstrap()?;
    let limit = cfg.duration + DRAIN_LIMIT;
    while let Some(ev) = sim.k.next_event(limit) {
        sim.handle(ev.target, ev.payload)?;
    }
    sim.finish()
}

impl<'a> Sim<'a> {
    fn active(&self) -> bool {
        self.k.now() < self.cfg.duration
    }

    fn client_pos(&self, c: ClientId) -> (f64, f64) {
        position_at(&self.traces[c.index()], self.k.now())
    }

    fn position(&self, e: EntityId) -> (f64, f64) {
        match e {
            EntityId::Node(n) => {
                let s = &self.nodes[n.index()].spec;
                (s.x_m, s.y_m)
            }
            EntityId::Client(c) => self.client_pos(c),
        }
    }

    /// Tower through which a link is reached: the one nearest to the client
    /// end, or the sending node's own tower between nodes.
    fn access_tower(&self, src: EntityId, dst: EntityId) -> (f64, f64) {
        let anchor = match (src, dst) {
            (EntityId::Client(c), _) | (_, EntityId::Client(c)) => self.client_pos(c),
            (EntityId::Node(_), EntityId::Node(_)) => return self.position(src),
        };
        let dist = |n: &NodeState| (n.spec.x_m - anchor.0).hypot(n.spec.y_m - anchor.1);
        let nearest = self
            .nodes
            .iter()
            .min_by(|a, b| dist(a).total_cmp(&dist(b)))
            .expect("nodes exist");
        (nearest.spec.x_m, nearest.spec.y_m)
    }

    fn endpoint(&self, e: EntityId, tower: (f64, f64)) -> EndpointLoad {
        let (x, y) = self.position(e);
        let d = (x - tower.0).hypot(y - tower.1);
        match e {
            EntityId::Node(n) => {
                let s = &self.nodes[n.index()];
                EndpointLoad {
                    distance_to_tower_m: d,
                    ..EndpointLoad::fog_node(s.busy, s.spec.slots, s.spec.hardware_factor)
                }
            }
            EntityId::Client(_) => EndpointLoad::client(d),
        }
    }

    fn one_way(&self, src: EntityId, dst: EntityId) -> f64 {
        let tower = self.access_tower(src, dst);
        end_to_end_latency(
            &self.endpoint(src, tower),
            &self.endpoint(dst, tower),
            &self.cfg.latency,
        )
    }

    /// Client links are symmetric except for processing; node pairs pay each
    /// receiver's processing once.
    fn round_trip(&self, a: EntityId, b: EntityId) -> f64 {
        match (a, b) {
            (EntityId::Node(_), EntityId::Node(_)) => self.one_way(a, b) + self.one_way(b, a),
            _ => 2.0 * self.one_way(a, b),
        }
    }

    fn oracle_view(&self, c: ClientId) -> Vec<NodeView> {
        self.nodes
            .iter()
            .map(|n| NodeView {
                node: n.spec.id,
                rtt_ms: self.round_trip(c.into(), n.spec.id.into()),
                has_free_slot: n.has_free_slot(),
            })
            .collect()
    }

    fn check_entity(&self, e: EntityId) -> Result<(), SimError> {
        let ok = match e {
            EntityId::Node(n) => n.index() < self.nodes.len(),
            EntityId::Client(c) => c.index() < self.clients.len(),
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::UnknownEntity(e))
        }
    }

    fn send(
        &mut self,
        src: EntityId,
        dst: EntityId,
        payload: Payload,
        discovery: Option<u64>,
    ) -> Result<(), SimError> {
        self.check_entity(src)?;
        self.check_entity(dst)?;
        let now = self.k.now();
        let id = MessageId(self.next_msg);
        self.next_msg += 1;
        let kind = payload.kind();
        let latency = self.one_way(src, dst);
        let rtt_ms = self.round_trip(src, dst);
        self.ledger.record_send(id, src, dst, kind, now, discovery);
        if let Some(d) = discovery.and_then(|d| self.discoveries.get_mut(&d)) {
            d.messages += 1;
            if kind == MessageKind::Probe {
                d.probes += 1;
            }
        }
        let timeout = SimTime::from_ms_f64(self.cfg.area.timeout_ms);
        if rtt_ms > self.cfg.area.timeout_ms {
            self.k.schedule_in(timeout, src, Ev::Expire(id));
        } else {
            self.k
                .schedule_in(SimTime::from_ms_f64(latency), dst, Ev::Arrive(id));
        }
        self.inflight.insert(
            id,
            InFlight {
                header: Message {
                    id,
                    src,
                    dst,
                    kind,
                    sent_at: now,
                },
                payload,
                rtt_ms,
                settled: false,
            },
        );
        Ok(())
    }

    fn bootstrap(&mut self) -> Result<(), SimError> {
        for i in 0..self.traces.len() {
            let delay = self.traces[i].start_delay;
            self.k
                .schedule_in(delay, ClientId(i as u32).into(), Ev::ClientStart);
        }
        match self.cfg.strategy {
            StrategyKind::Vivaldi => {
                let period = self.cfg.vivaldi.sample_period_ms;
                for n in self.all_nodes.clone() {
                    let offset = self.k.rng("vivaldi-peer").gen_range(0..period);
                    self.k
                        .schedule_in(SimTime::from_millis(offset), n.into(), Ev::VivaldiTick);
                }
            }
            StrategyKind::Meridian => {
                let rp = self.cfg.meridian.resolve(self.nodes.len());
                for a in self.all_nodes.clone() {
                    for b in self.all_nodes.clone() {
                        if a != b {
                            self.nodes[a.index()]
                                .meridian
                                .as_mut()
                                .expect("meridian run")
                                .add_contact(b, SimTime::ZERO);
                            self.send(
                                a.into(),
                                b.into(),
                                Payload::Probe {
                                    purpose: ProbePurpose::Ring,
                                },
                                None,
                            )?;
                        }
                    }
                    let g = self
                        .k
                        .rng("gossip")
                        .gen_range(0..rp.gossip_period.as_micros().max(1));
                    self.k
                        .schedule_in(SimTime::from_micros(g), a.into(), Ev::GossipTick);
                    self.k.schedule_in(rp.reassess_period, a.into(), Ev::ReassessTick);
                }
            }
            StrategyKind::Baseline | StrategyKind::Random => {}
        }
        Ok(())
    }

    fn handle(&mut self, target: EntityId, ev: Ev) -> Result<(), SimError> {
        match (target, ev) {
            (EntityId::Client(c), Ev::ClientStart) => {
                if self.active() {
                    self.clients[c.index()].started = true;
                    self.start_discovery(c)?;
                    self.schedule_task_timer(c);
                }
                Ok(())
            }
            (EntityId::Client(c), Ev::TaskTimer) => self.task_timer(c),
            (_, Ev::Arrive(id)) => self.arrive(id),
            (_, Ev::Expire(id)) => self.expire(id),
            (EntityId::Node(n), Ev::TaskDone) => {
                let node = &mut self.nodes[n.index()];
                if node.busy == 0 {
                    return Err(SimError::Invariant(format!(
                        "{n} released a slot it did not hold"
                    )));
                }
                node.busy -= 1;
                Ok(())
            }
            (EntityId::Node(n), Ev::VivaldiTick) => self.vivaldi_tick(n),
            (EntityId::Node(n), Ev::GossipTick) => self.gossip_tick(n),
            (EntityId::Node(n), Ev::ReassessTick) => self.reassess_tick(n),
            (EntityId::Node(n), Ev::SearchDeadline { discovery, hop }) => {
                let live = self
                    .searches
                    .get(&discovery)
                    .is_some_and(|s| s.current == n && s.hop == hop);
                if live {
                    self.searches.get_mut(&discovery).expect("checked").deadline = None;
                    self.resolve_hop(discovery)?;
                }
                Ok(())
            }
            (EntityId::Client(c), Ev::DiscoveryWatchdog { discovery }) => {
                if self.clients[c.index()].discovering == Some(discovery) {
                    self.clients[c.index()].discovering = None;
                    self.searches.remove(&discovery);
                }
                Ok(())
            }
            (t, e) => Err(SimError::Invariant(format!("event {e:?} delivered to {t}"))),
        }
    }

    fn schedule_task_timer(&mut self, c: ClientId) {
        let p = &self.cfg.clients;
        let ms = self
            .k
            .rng("task-period")
            .gen_range(p.task_period_min_ms..=p.task_period_max_ms);
        self.k
            .schedule_in(SimTime::from_millis(ms), c.into(), Ev::TaskTimer);
    }

    fn task_timer(&mut self, c: ClientId) -> Result<(), SimError> {
        if !self.active() {
            return Ok(());
        }
        let state = &self.clients[c.index()];
        if state.discovering.is_none() {
            match state.connected {
                Some(node) => self.send_task(c, node)?,
                None => self.start_discovery(c)?,
            }
        }
        if self.cfg.strategy == StrategyKind::Vivaldi && self.cfg.vivaldi.client_probes {
            let peer = *self
                .all_nodes
                .choose(self.k.rng("vivaldi-peer"))
                .expect("non-empty");
            self.send(
                c.into(),
                peer.into(),
                Payload::Probe {
                    purpose: ProbePurpose::Vivaldi,
                },
                None,
            )?;
        }
        self.schedule_task_timer(c);
        Ok(())
    }

    fn send_task(&mut self, c: ClientId, node: NodeId) -> Result<(), SimError> {
        let view = self.oracle_view(c);
        let optimal = optimal_node(&view).expect("nodes exist");
        let record = self.tasks.len();
        self.tasks.push(TaskRecord {
            client: c,
            sent_at: self.k.now(),
            node,
            rtt_ms: view[node.index()].rtt_ms,
            optimal_rtt_ms: optimal.rtt_ms,
            outcome: Delivery::Delivered,
        });
        self.send(c.into(), node.into(), Payload::Task { record }, None)
    }

    fn start_discovery(&mut self, c: ClientId) -> Result<(), SimError> {
        if !self.active() || self.clients[c.index()].discovering.is_some() {
            return Ok(());
        }
        let id = self.next_discovery;
        self.next_discovery += 1;
        let now = self.k.now();
        self.discoveries.insert(
            id,
            Discovery {
                client: c,
                started_at: now,
                messages: 0,
                probes: 0,
                record: None,
            },
        );
        let entry = self.clients[c.index()]
            .connected
            .or(self.clients[c.index()].last_node);
        self.clients[c.index()].connected = None;
        match self.cfg.strategy {
            StrategyKind::Baseline => {
                let result = select_baseline(&self.oracle_view(c), now).expect("nodes exist");
                self.complete_discovery(c, id, result);
            }
            StrategyKind::Random => {
                let nodes = self.all_nodes.clone();
                let result = select_random(&nodes, self.k.rng("random-select"), now).expect("nodes exist");
                self.complete_discovery(c, id, result);
            }
            StrategyKind::Vivaldi | StrategyKind::Meridian => {
                let stream = if self.cfg.strategy == StrategyKind::Vivaldi {
                    "vivaldi-entry"
                } else {
                    "meridian-entry"
                };
                let entry = match entry {
                    Some(e) => e,
                    None => *self.all_nodes.choose(self.k.rng(stream)).expect("non-empty"),
                };
                self.clients[c.index()].discovering = Some(id);
                let patience = SimTime::from_ms_f64(self.cfg.area.timeout_ms * DISCOVERY_PATIENCE as f64);
                self.k
                    .schedule_in(patience, c.into(), Ev::DiscoveryWatchdog { discovery: id });
                let coord = self.clients[c.index()]
                    .coord
                    .unwrap_or_else(|| VivaldiCoordinate::origin(&self.cfg.vivaldi));
                self.send(
                    c.into(),
                    entry.into(),
                    Payload::DiscoveryRequest { discovery: id, coord },
                    Some(id),
                )?;
            }
        }
        Ok(())
    }

    fn complete_discovery(&mut self, c: ClientId, id: u64, result: SelectionResult) {
        let view = self.oracle_view(c);
        let optimal = optimal_node(&view).expect("nodes exist");
        let d = self.discoveries.get_mut(&id).expect("registered");
        let record = DiscoveryRecord {
            discovery: id,
            client: c,
            decided_at: result.decided_at,
            chosen: result.chosen,
            optimal: optimal.node,
            achieved_rtt_ms: view[result.chosen.index()].rtt_ms,
            optimal_rtt_ms: optimal.rtt_ms,
            probes_used: d.probes,
            messages_used: d.messages,
        };
        d.record = Some(self.records.len());
        self.records.push(record);
        let state = &mut self.clients[c.index()];
        state.discovering = None;
        state.connected = Some(result.chosen);
        state.last_node = Some(result.chosen);
        state.best_rtt = None;
    }

    fn arrive(&mut self, id: MessageId) -> Result<(), SimError> {
        let flight = self.inflight.get(&id).expect("arrivals refer to live messages");
        let (header, rtt_ms) = (flight.header, flight.rtt_ms);
        if let Payload::Task { record } = flight.payload {
            let EntityId::Node(n) = header.dst else {
                return Err(SimError::Invariant("task addressed to a client".into()));
            };
            let EntityId::Client(c) = header.src else {
                return Err(SimError::Invariant("task sent by a node".into()));
            };
            if !self.nodes[n.index()].has_free_slot() {
                self.ledger
                    .record_outcome(id, header.src, header.dst, Delivery::Lost);
                self.tasks[record].outcome = Delivery::Lost;
                self.inflight.get_mut(&id).expect("live").settled = true;
                let at = header.sent_at + SimTime::from_ms_f64(self.cfg.area.timeout_ms);
                self.k
                    .schedule(at.max(self.k.now()), header.src, Ev::Expire(id))?;
                return Ok(());
            }
            self.inflight.remove(&id);
            self.ledger
                .record_outcome(id, header.src, header.dst, Delivery::Delivered);
            self.nodes[n.index()].busy += 1;
            let service = SimTime::from_millis(self.cfg.clients.task_service_ms);
            self.k.schedule_in(service, n.into(), Ev::TaskDone);
            let coord = self.nodes[n.index()].coord;
            return self.send(n.into(), c.into(), Payload::TaskReply { rtt_ms, coord }, None);
        }
        let flight = self.inflight.remove(&id).expect("live");
        self.ledger
            .record_outcome(id, header.src, header.dst, Delivery::Delivered);
        self.receive(header, rtt_ms, flight.payload)
    }

    fn expire(&mut self, id: MessageId) -> Result<(), SimError> {
        let flight = self
            .inflight
            .remove(&id)
            .expect("expiry refers to a live message");
        let h = flight.header;
        if !flight.settled {
            self.ledger.record_outcome(id, h.src, h.dst, Delivery::TimedOut);
        }
        if let Payload::Task { record } = flight.payload {
            if !flight.settled {
                self.tasks[record].outcome = Delivery::TimedOut;
            }
            let EntityId::Client(c) = h.src else {
                return Err(SimError::Invariant("task sent by a node".into()));
            };
            let state = &mut self.clients[c.index()];
            state.tasks_lost += 1;
            self.ledger.clients[c.index()].reconnects += 1;
            if self.clients[c.index()].connected == h.dst.as_node() {
                self.start_discovery(c)?;
            }
        }
        Ok(())
    }

    /// `rtt_ms` is the round trip between the endpoints sampled when the
    /// message left; probe replies report it back.
    fn receive(&mut self, h: Message, rtt_ms: f64, payload: Payload) -> Result<(), SimError> {
        match (h.dst, payload) {
            (
                EntityId::Client(c),
                Payload::TaskReply {
                    rtt_ms: sampled,
                    coord,
                },
            ) => self.task_reply(c, h.src, sampled, coord),
            (EntityId::Client(c), Payload::Probe { purpose }) => {
                self.clients[c.index()].probes_received += 1;
                self.clients[c.index()].probe_replies += 1;
                let coord = self.clients[c.index()]
                    .coord
                    .unwrap_or_else(|| VivaldiCoordinate::origin(&self.cfg.vivaldi));
                self.send(
                    c.into(),
                    h.src,
                    Payload::ProbeReply {
                        purpose,
                        rtt_ms,
                        coord,
                    },
                    purpose.discovery(),
                )
            }
            (EntityId::Node(n), Payload::Probe { purpose }) => {
                let coord = self.nodes[n.index()].coord;
                self.send(
                    n.into(),
                    h.src,
                    Payload::ProbeReply {
                        purpose,
                        rtt_ms,
                        coord,
                    },
                    purpose.discovery(),
                )
            }
            (
                EntityId::Client(c),
                Payload::ProbeReply {
                    rtt_ms: sampled,
                    coord,
                    ..
                },
            ) => {
                if let Some(local) = self.clients[c.index()].coord.as_mut() {
                    let rng = self.k.rng("vivaldi-dir");
                    if local.update(&coord, sampled, &self.cfg.vivaldi, rng).is_err() {
                        self.invalid_samples += 1;
                    }
                }
                Ok(())
            }
            (
                EntityId::Node(n),
                Payload::ProbeReply {
                    purpose,
                    rtt_ms: sampled,
                    coord,
                },
            ) => self.node_probe_reply(n, h.src, purpose, sampled, coord),
            (EntityId::Node(n), Payload::DiscoveryRequest { discovery, coord }) => {
                let EntityId::Client(c) = h.src else {
                    return Err(SimError::Invariant("discovery request from a node".into()));
                };
                self.discovery_request(n, c, discovery, coord)
            }
            (EntityId::Client(c), Payload::DiscoveryReply { discovery, chosen }) => {
                if self.clients[c.index()].discovering == Some(discovery) {
                    let result = SelectionResult {
                        chosen,
                        probes_used: 0,
                        messages_used: 0,
                        decided_at: self.k.now(),
                    };
                    self.complete_discovery(c, discovery, result);
                }
                Ok(())
            }
            (EntityId::Node(n), Payload::ProbeRequest { discovery, hop }) => {
                let Some(client) = self.searches.get(&discovery).map(|s| s.client) else {
                    return Ok(());
                };
                let EntityId::Node(querier) = h.src else {
                    return Err(SimError::Invariant("probe request from a client".into()));
                };
                // Fully loaded nodes stay silent.
                if !self.nodes[n.index()].has_free_slot() {
                    return Ok(());
                }
                let purpose = ProbePurpose::SearchCandidate {
                    discovery,
                    hop,
                    querier,
                };
                self.send(
                    n.into(),
                    client.into(),
                    Payload::Probe { purpose },
                    Some(discovery),
                )
            }
            (
                EntityId::Node(n),
                Payload::ProbeReport {
                    discovery,
                    hop,
                    distance,
                },
            ) => {
                let Some(search) = self.searches.get_mut(&discovery) else {
                    return Ok(());
                };
                let EntityId::Node(from) = h.src else {
                    return Err(SimError::Invariant("probe report from a client".into()));
                };
                if search.current != n || search.hop != hop || !search.awaiting.remove(&from) {
                    return Ok(());
                }
                search.answers.push((from, distance));
                if search.awaiting.is_empty() {
                    if let Some(handle) = search.deadline.take() {
                        self.k.cancel(handle);
                    }
                    self.resolve_hop(discovery)?;
                }
                Ok(())
            }
            (EntityId::Node(n), Payload::ForwardQuery { discovery, distance }) => {
                if let Some(search) = self.searches.get_mut(&discovery) {
                    debug_assert_eq!(search.current, n);
                    search.d = distance;
                    self.start_hop(discovery)?;
                }
                Ok(())
            }
            (EntityId::Node(n), Payload::Gossip { digest }) => {
                let staleness = self.cfg.meridian.resolve(self.nodes.len()).staleness;
                let now = self.k.now();
                let EntityId::Node(from) = h.src else {
                    return Err(SimError::Invariant("gossip from a client".into()));
                };
                let learned = self.nodes[n.index()]
                    .meridian
                    .as_mut()
                    .expect("meridian run")
                    .merge_gossip(from, &digest, now, staleness);
                for peer in learned {
                    self.send(
                        n.into(),
                        peer.into(),
                        Payload::Probe {
                            purpose: ProbePurpose::Ring,
                        },
                        None,
                    )?;
                }
                Ok(())
            }
            (dst, p) => Err(SimError::Invariant(format!("{dst} cannot handle {p:?}"))),
        }
    }
}

impl<'a> Sim<'a> {
    fn task_reply(
        &mut self,
        c: ClientId,
        src: EntityId,
        rtt_ms: f64,
        coord: VivaldiCoordinate,
    ) -> Result<(), SimError> {
        let node = src.as_node();
        if let Some(local) = self.clients[c.index()].coord.as_mut() {
            let rng = self.k.rng("vivaldi-dir");
            if local.update(&coord, rtt_ms, &self.cfg.vivaldi, rng).is_err() {
                self.invalid_samples += 1;
            }
        }
        let area = &self.cfg.area;
        let state = &mut self.clients[c.index()];
        if state.connected != node || state.discovering.is_some() {
            return Ok(());
        }
        let degraded = rtt_ms > area.max_latency_ms
            || state
                .best_rtt
                .is_some_and(|best| rtt_ms > best + area.round_trip_threshold_ms);
        state.best_rtt = Some(state.best_rtt.map_or(rtt_ms, |b| b.min(rtt_ms)));
        if degraded && self.active() {
            self.ledger.clients[c.index()].rediscoveries += 1;
            self.start_discovery(c)?;
        }
        Ok(())
    }

    fn node_probe_reply(
        &mut self,
        n: NodeId,
        from: EntityId,
        purpose: ProbePurpose,
        rtt_ms: f64,
        coord: VivaldiCoordinate,
    ) -> Result<(), SimError> {
        match purpose {
            ProbePurpose::Vivaldi => {
                let rng = self.k.rng("vivaldi-dir");
                let node = &mut self.nodes[n.index()];
                match node.coord.update(&coord, rtt_ms, &self.cfg.vivaldi, rng) {
                    Ok(outcome) => {
                        node.error_ewma = Some(match node.error_ewma {
                            None => outcome.abs_error_ms,
                            Some(e) => 0.9 * e + 0.1 * outcome.abs_error_ms,
                        });
                    }
                    Err(_) => self.invalid_samples += 1,
                }
                Ok(())
            }
            ProbePurpose::Ring => {
                let peer = from
                    .as_node()
                    .ok_or_else(|| SimError::Invariant("ring probe answered by a client".into()))?;
                let now = self.k.now();
                let m = self.nodes[n.index()].meridian.as_mut().expect("meridian run");
                m.record_measurement(peer, rtt_ms, now)
                    .map_err(|e| SimError::Invariant(e.to_string()))?;
                Ok(())
            }
            ProbePurpose::SearchEntry { discovery } => {
                let Some(client) = from.as_client() else {
                    return Err(SimError::Invariant("entry probe answered by a node".into()));
                };
                if self.clients[client.index()].discovering != Some(discovery) {
                    return Ok(());
                }
                self.searches.insert(
                    discovery,
                    Search {
                        client,
                        current: n,
                        d: rtt_ms,
                        hop: 0,
                        visited: BTreeSet::from([n]),
                        awaiting: BTreeSet::new(),
                        answers: Vec::new(),
                        deadline: None,
                        hops: vec![(n, rtt_ms)],
                    },
                );
                self.start_hop(discovery)
            }
            ProbePurpose::SearchCandidate {
                discovery,
                hop,
                querier,
            } => self.send(
                n.into(),
                querier.into(),
                Payload::ProbeReport {
                    discovery,
                    hop,
                    distance: rtt_ms,
                },
                Some(discovery),
            ),
        }
    }

    fn discovery_request(
        &mut self,
        n: NodeId,
        c: ClientId,
        discovery: u64,
        coord: VivaldiCoordinate,
    ) -> Result<(), SimError> {
        match self.cfg.strategy {
            StrategyKind::Vivaldi => {
                let table: Vec<(NodeId, VivaldiCoordinate, bool)> = self
                    .nodes
                    .iter()
                    .map(|s| (s.spec.id, s.coord, s.has_free_slot()))
                    .collect();
                let chosen = nearest_node(&coord, &table).map_err(|e| SimError::Invariant(e.to_string()))?;
                self.send(
                    n.into(),
                    c.into(),
                    Payload::DiscoveryReply { discovery, chosen },
                    Some(discovery),
                )
            }
            StrategyKind::Meridian => {
                let purpose = ProbePurpose::SearchEntry { discovery };
                self.send(n.into(), c.into(), Payload::Probe { purpose }, Some(discovery))
            }
            other => Err(SimError::Invariant(format!(
                "{other} does not exchange discovery messages"
            ))),
        }
    }

    fn start_hop(&mut self, discovery: u64) -> Result<(), SimError> {
        let beta = self.cfg.meridian.beta;
        let search = self.searches.get(&discovery).expect("live search");
        let (x, hop) = (search.current, search.hop);
        let band = search_band(search.d, beta);
        let candidates: Vec<NodeId> = self.nodes[x.index()]
            .meridian
            .as_ref()
            .expect("meridian run")
            .candidates(band.lo, band.hi)
            .into_iter()
            .filter(|m| !search.visited.contains(m))
            .collect();
        if candidates.is_empty() {
            return self.finish_search(discovery);
        }
        for &m in &candidates {
            self.send(
                x.into(),
                m.into(),
                Payload::ProbeRequest { discovery, hop },
                Some(discovery),
            )?;
        }
        let handle = self.k.schedule_in(
            SimTime::from_ms_f64(band.deadline_ms),
            x.into(),
            Ev::SearchDeadline { discovery, hop },
        );
        let search = self.searches.get_mut(&discovery).expect("live search");
        search.awaiting = candidates.into_iter().collect();
        search.answers.clear();
        search.deadline = Some(handle);
        Ok(())
    }

    fn resolve_hop(&mut self, discovery: u64) -> Result<(), SimError> {
        let search = self.searches.get_mut(&discovery).expect("live search");
        match decide_hop(search.d, &search.answers) {
            HopDecision::Forward { to, distance } => {
                let from = search.current;
                search.visited.insert(to);
                search.hops.push((to, distance));
                search.current = to;
                search.hop += 1;
                search.awaiting.clear();
                search.answers.clear();
                self.send(
                    from.into(),
                    to.into(),
                    Payload::ForwardQuery { discovery, distance },
                    Some(discovery),
                )
            }
            HopDecision::Stop => self.finish_search(discovery),
        }
    }

    fn finish_search(&mut self, discovery: u64) -> Result<(), SimError> {
        let search = self.searches.remove(&discovery).expect("live search");
        let chosen = search.current;
        self.search_logs.push(SearchLog {
            discovery,
            client: search.client,
            hops: search.hops,
        });
        self.send(
            chosen.into(),
            search.client.into(),
            Payload::DiscoveryReply { discovery, chosen },
            Some(discovery),
        )
    }

    fn vivaldi_tick(&mut self, n: NodeId) -> Result<(), SimError> {
        if !self.active() {
            return Ok(());
        }
        let threshold = self.cfg.area.latency_threshold_ms;
        let node = &mut self.nodes[n.index()];
        node.ticks += 1;
        let eager = node.error_ewma.is_none_or(|e| e > threshold);
        let due = eager
            || node
                .ticks
                .is_multiple_of(u64::from(self.cfg.vivaldi.idle_probe_every));
        if due && self.all_nodes.len() > 1 {
            let offset = self.k.rng("vivaldi-peer").gen_range(1..self.all_nodes.len());
            let peer = NodeId(((n.index() + offset) % self.all_nodes.len()) as u32);
            self.send(
                n.into(),
                peer.into(),
                Payload::Probe {
                    purpose: ProbePurpose::Vivaldi,
                },
                None,
            )?;
        }
        let period = SimTime::from_millis(self.cfg.vivaldi.sample_period_ms);
        self.k.schedule_in(period, n.into(), Ev::VivaldiTick);
        Ok(())
    }

    fn gossip_tick(&mut self, n: NodeId) -> Result<(), SimError> {
        if !self.active() {
            return Ok(());
        }
        let now = self.k.now();
        let m = self.nodes[n.index()].meridian.as_ref().expect("meridian run");
        let peers = m.known_peers();
        let digest = m.gossip_digest(now);
        if let Some(&peer) = peers.choose(self.k.rng("gossip")) {
            self.send(n.into(), peer.into(), Payload::Gossip { digest }, None)?;
        }
        let period = self.cfg.meridian.resolve(self.nodes.len()).gossip_period;
        self.k.schedule_in(period, n.into(), Ev::GossipTick);
        Ok(())
    }

    fn reassess_tick(&mut self, n: NodeId) -> Result<(), SimError> {
        if !self.active() {
            return Ok(());
        }
        let rp = self.cfg.meridian.resolve(self.nodes.len());
        let now = self.k.now();
        let m = self.nodes[n.index()].meridian.as_mut().expect("meridian run");
        m.evict_stale(now, rp.staleness);
        m.reassess();
        for peer in m.known_peers() {
            self.send(
                n.into(),
                peer.into(),
                Payload::Probe {
                    purpose: ProbePurpose::Ring,
                },
                None,
            )?;
        }
        self.k.schedule_in(rp.reassess_period, n.into(), Ev::ReassessTick);
        Ok(())
    }

    fn finish(mut self) -> Result<RunOutput, SimError> {
        if !self.inflight.is_empty() {
            return Err(SimError::Invariant(format!(
                "{} messages still in flight after draining",
                self.inflight.len()
            )));
        }
        if !self.ledger.is_conserved() {
            let l = &self.ledger;
            return Err(SimError::Invariant(format!(
                "sent {} != delivered {} + lost {} + timed out {}",
                l.sent, l.delivered, l.lost, l.timed_out
            )));
        }
        for (i, c) in self.clients.iter().enumerate() {
            if c.probe_replies != c.probes_received {
                return Err(SimError::Invariant(format!("client-{i} left a probe unanswered")));
            }
            if self.ledger.clients[i].reconnects != c.tasks_lost {
                return Err(SimError::Invariant(format!(
                    "client-{i} reconnects do not match losses"
                )));
            }
        }
        for n in &self.nodes {
            if n.busy != 0 {
                return Err(SimError::Invariant(format!(
                    "{} still holds {} slots",
                    n.spec.id, n.busy
                )));
            }
            if let Some(m) = &n.meridian {
                m.rings()
                    .check_invariants()
                    .map_err(|e| SimError::Invariant(format!("{}: {e}", n.spec.id)))?;
            }
        }
        for d in self.discoveries.values() {
            if let Some(i) = d.record {
                self.records[i].messages_used = d.messages;
                self.records[i].probes_used = d.probes;
                debug_assert_eq!(self.records[i].client, d.client);
                debug_assert!(self.records[i].decided_at >= d.started_at);
            }
        }
        let nodes = self
            .nodes
            .iter()
            .map(|n| NodeSnapshot {
                node: n.spec.id,
                x_m: n.spec.x_m,
                y_m: n.spec.y_m,
                slots: n.spec.slots,
                hardware_factor: n.spec.hardware_factor,
                coordinate: n.coord,
                rings: n.meridian.as_ref().map(|m| m.snapshot()),
            })
            .collect();
        let clients = self
            .clients
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let l = &self.ledger.clients[i];
                ClientSummary {
                    client: ClientId(i as u32),
                    sent: l.sent,
                    received: l.received,
                    lost: l.lost,
                    timed_out: l.timed_out,
                    reconnects: l.reconnects,
                    rediscoveries: l.rediscoveries,
                    probes_received: c.probes_received,
                    probe_replies: c.probe_replies,
                }
            })
            .collect();
        Ok(RunOutput {
            strategy: self.cfg.strategy,
            seed: self.cfg.seed,
            end_time: self.k.now(),
            kernel: self.k.stats(),
            ledger: self.ledger,
            discoveries: self.records,
            tasks: self.tasks,
            searches: self.search_logs,
            nodes,
            clients,
            invalid_vivaldi_samples: self.invalid_samples,
        })
    }
}

impl ProbePurpose {
    fn discovery(self) -> Option<u64> {
        match self {
            ProbePurpose::SearchEntry { discovery } | ProbePurpose::SearchCandidate { discovery, .. } => {
                Some(discovery)
            }
            ProbePurpose::Vivaldi | ProbePurpose::Ring => None,
        }
    }
}
