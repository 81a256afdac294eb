//! Deterministic discrete-event simulation of a counter deployment.
//!
//! Time advances in ticks. During a tick the simulator first applies every
//! queued event that is due (deliveries, scheduled increments, crashes and
//! recoveries), then gives one node its turn, round robin in topology order,
//! then applies anything that became due with zero delay.
//!
//! Each node keeps a durable state and, when `flush_interval > 0`, an
//! in-memory state that is written out at most once per interval. Fetches
//! read the durable state, only durable states are sent, increments are
//! written through immediately, and a crash throws the in-memory state away.
//!
//! Randomness comes from two places. Scheduling (workload, random gossip
//! targets) uses one ChaCha stream seeded from the config. Channel decisions
//! for the n-th message on a directed link use their own stream, positioned
//! by link and message number, so they do not depend on what the rest of the
//! network did.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::error::Error;
use crate::metrics::Metrics;
use crate::payload::{MapPayload, Nat, Payload, PnPayload};
use crate::state::{HandoffState, NodeId, RetirementEvidence, Tier};

use super::config::{ChannelModel, ConfigError, GossipPolicy, IncrementSchedule, ScenarioConfig};
use super::topology::Topology;
use super::trace::{DropReason, EventKind, TraceEvent};

/// Payloads the simulator knows how to generate increments for.
pub trait SimPayload: Payload {
    /// Delta applied by one scheduled increment. `draw` is a uniform value
    /// from the scheduler stream.
    fn increment_delta(draw: u64) -> Self;
}

impl SimPayload for Nat {
    fn increment_delta(_: u64) -> Self {
        Nat::ONE
    }
}

/// Keys used by simulated map increments.
pub const MAP_KEYS: [&str; 4] = ["a", "b", "c", "d"];

impl SimPayload for MapPayload {
    fn increment_delta(draw: u64) -> Self {
        MapPayload::single(MAP_KEYS[(draw % MAP_KEYS.len() as u64) as usize], 1)
    }
}

impl SimPayload for PnPayload {
    /// Two increments for every decrement on average.
    fn increment_delta(draw: u64) -> Self {
        if draw % 3 == 2 {
            PnPayload::decrement()
        } else {
            PnPayload::increment()
        }
    }
}

/// Merge used at every delivery. Swappable so that tests can run the
/// checker against deliberately broken variants.
pub type MergeFn<P> = fn(&HandoffState<P>, &HandoffState<P>) -> Result<HandoffState<P>, Error>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("step {step}: {node}: {source}")]
    Node {
        step: u64,
        node: NodeId,
        source: Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeStatus {
    Live,
    Crashed,
    Retired,
}

/// Receives every event right after it took effect.
///
/// `changed` names the node whose durable state the event modified, if any.
pub trait Observer<P: SimPayload> {
    fn observe(&mut self, sim: &Simulation<P>, event: &TraceEvent<P>, changed: Option<usize>);
}

impl<P: SimPayload> Observer<P> for () {
    fn observe(&mut self, _: &Simulation<P>, _: &TraceEvent<P>, _: Option<usize>) {}
}

/// Records the trace.
impl<P: SimPayload> Observer<P> for Vec<TraceEvent<P>> {
    fn observe(&mut self, _: &Simulation<P>, event: &TraceEvent<P>, _: Option<usize>) {
        self.push(event.clone());
    }
}

impl<P: SimPayload, A: Observer<P>, B: Observer<P>> Observer<P> for (A, B) {
    fn observe(&mut self, sim: &Simulation<P>, event: &TraceEvent<P>, changed: Option<usize>) {
        self.0.observe(sim, event, changed);
        self.1.observe(sim, event, changed);
    }
}

impl<P: SimPayload, O: Observer<P> + ?Sized> Observer<P> for &mut O {
    fn observe(&mut self, sim: &Simulation<P>, event: &TraceEvent<P>, changed: Option<usize>) {
        (**self).observe(sim, event, changed);
    }
}

enum Action<P> {
    Deliver {
        from: usize,
        to: usize,
        msg: u64,
        state: Arc<HandoffState<P>>,
        full: Option<Arc<HandoffState<P>>>,
    },
    Incr(usize),
    Crash(usize),
    Recover(usize),
}

struct Pending<P> {
    time: u64,
    seq: u64,
    action: Action<P>,
}

impl<P> PartialEq for Pending<P> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl<P> Eq for Pending<P> {}

impl<P> PartialOrd for Pending<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// reversed: BinaryHeap pops the earliest event first
impl<P> Ord for Pending<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct Node<P> {
    id: NodeId,
    tier: Tier,
    neighbors: Vec<usize>,
    /// Smaller-tier neighbors by id; candidates for the chosen server.
    servers: Vec<usize>,
    peers: Vec<usize>,
    durable: Arc<HandoffState<P>>,
    /// Unflushed changes, if any.
    memory: Option<HandoffState<P>>,
    last_flush: u64,
    /// Higher-tier nodes heard from; answered once the state they caused is
    /// durable.
    pending_replies: BTreeSet<usize>,
    ready_replies: BTreeSet<usize>,
    server_pos: usize,
    unanswered: u32,
    status: NodeStatus,
    retire_at: Option<u64>,
    evidence: RetirementEvidence,
    increments: bool,
}

impl<P: SimPayload> Node<P> {
    fn current(&self) -> &HandoffState<P> {
        self.memory.as_ref().unwrap_or(&self.durable)
    }

    fn retiring(&self, now: u64) -> bool {
        self.retire_at.is_some_and(|at| at <= now)
    }
}

pub struct Simulation<P: SimPayload> {
    cfg: ScenarioConfig,
    topo: Topology,
    nodes: Vec<Node<P>>,
    index: HashMap<NodeId, usize>,
    links: Vec<(usize, usize)>,
    /// Directed pair to (link index, direction).
    link_of: HashMap<(usize, usize), (usize, usize)>,
    channels: Vec<ChannelModel>,
    partitions: Vec<(usize, u64, u64)>,
    link_seq: Vec<u64>,
    queue: BinaryHeap<Pending<P>>,
    seq: u64,
    rng: ChaCha8Rng,
    now: u64,
    next_msg: u64,
    issued: P,
    merge: MergeFn<P>,
    rate: Option<(f64, u64)>,
    quiescent: bool,
    last_message: Option<Arc<HandoffState<P>>>,
    metrics: Metrics,
}

impl<P: SimPayload> Simulation<P> {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        let topo = cfg.resolve()?;
        let index: HashMap<NodeId, usize> = topo
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        let adjacency = topo.adjacency();
        let tiers: Vec<Tier> = topo.nodes().iter().map(|(_, t)| *t).collect();
        let mut nodes: Vec<Node<P>> = topo
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, (id, tier))| {
                let neighbors: Vec<usize> = adjacency[id].iter().map(|n| index[n]).collect();
                let servers = neighbors.iter().copied().filter(|&j| tiers[j] < tiers[i]).collect();
                let peers = neighbors.iter().copied().filter(|&j| tiers[j] == tiers[i]).collect();
                Node {
                    id: id.clone(),
                    tier: *tier,
                    neighbors,
                    servers,
                    peers,
                    durable: Arc::new(HandoffState::init(id.clone(), *tier)),
                    memory: None,
                    last_flush: 0,
                    pending_replies: BTreeSet::new(),
                    ready_replies: BTreeSet::new(),
                    server_pos: 0,
                    unanswered: 0,
                    status: NodeStatus::Live,
                    retire_at: None,
                    evidence: RetirementEvidence::new(id.clone()),
                    increments: false,
                }
            })
            .collect();

        let mut links = Vec::new();
        let mut link_of = HashMap::new();
        let mut channels = Vec::new();
        for (k, (a, b)) in topo.links().iter().enumerate() {
            let (ia, ib) = (index[a], index[b]);
            links.push((ia, ib));
            link_of.insert((ia, ib), (k, 0));
            link_of.insert((ib, ia), (k, 1));
            channels.push(cfg.channel_for(a, b));
        }
        let partitions = cfg
            .partitions
            .iter()
            .map(|p| (link_of[&(index[&p.link[0]], index[&p.link[1]])].0, p.from, p.until))
            .collect();

        let mut sim = Simulation {
            cfg: cfg.clone(),
            nodes: Vec::new(),
            index,
            link_seq: vec![0; 2 * links.len()],
            links,
            link_of,
            channels,
            partitions,
            queue: BinaryHeap::new(),
            seq: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            now: 0,
            next_msg: 0,
            issued: P::zero(),
            merge: HandoffState::merge,
            rate: None,
            quiescent: false,
            last_message: None,
            metrics: Metrics {
                seed: cfg.seed,
                ..Metrics::default()
            },
            topo,
        };

        match &cfg.increments {
            IncrementSchedule::None => {}
            IncrementSchedule::Explicit(list) => {
                for inc in list {
                    for _ in 0..inc.count {
                        sim.push(inc.step, Action::Incr(sim.index[&inc.node]));
                    }
                }
            }
            IncrementSchedule::Random { total, tiers, until } => {
                let eligible: Vec<usize> = cfg
                    .eligible(&sim.topo, tiers.as_deref())
                    .iter()
                    .map(|n| sim.index[n])
                    .collect();
                for _ in 0..*total {
                    let node = eligible[sim.rng.random_range(0..eligible.len())];
                    let step = sim.rng.random_range(0..(*until).max(1));
                    sim.push(step, Action::Incr(node));
                }
            }
            IncrementSchedule::Rate { prob, tiers, until } => {
                for n in cfg.eligible(&sim.topo, tiers.as_deref()) {
                    nodes[sim.index[&n]].increments = true;
                }
                sim.rate = Some((*prob, *until));
            }
        }
        for c in &cfg.crashes {
            let i = sim.index[&c.node];
            sim.push(c.crash, Action::Crash(i));
            sim.push(c.recover, Action::Recover(i));
        }
        for r in &cfg.retirements {
            let node = &mut nodes[sim.index[&r.node]];
            node.retire_at = Some(node.retire_at.map_or(r.at, |at| at.min(r.at)));
        }
        sim.nodes = nodes;
        for i in 0..sim.nodes.len() {
            sim.note_durable(i);
        }
        Ok(sim)
    }

    /// Replaces the merge used at deliveries.
    pub fn with_merge(mut self, merge: MergeFn<P>) -> Self {
        self.merge = merge;
        self
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, id: &NodeId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn node_id(&self, i: usize) -> &NodeId {
        &self.nodes[i].id
    }

    pub fn tier(&self, i: usize) -> Tier {
        self.nodes[i].tier
    }

    pub fn status(&self, i: usize) -> NodeStatus {
        self.nodes[i].status
    }

    /// Durable state of node `i`.
    pub fn state(&self, i: usize) -> &HandoffState<P> {
        &self.nodes[i].durable
    }

    /// Durable states of all nodes, in topology order.
    pub fn states(&self) -> impl Iterator<Item = &HandoffState<P>> + '_ {
        self.nodes.iter().map(|n| &*n.durable)
    }

    /// In-memory state of node `i`, which may be ahead of the durable one.
    pub fn memory_state(&self, i: usize) -> &HandoffState<P> {
        self.nodes[i].current()
    }

    /// Sum of all increments applied so far.
    pub fn issued(&self) -> &P {
        &self.issued
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn is_quiescent(&self) -> bool {
        self.quiescent
    }

    /// The state carried by the most recent delivery that reached a live node.
    pub fn last_message(&self) -> Option<&HandoffState<P>> {
        self.last_message.as_deref()
    }

    /// Metrics so far, with the final-state fields filled in from the
    /// current durable states.
    pub fn metrics(&self) -> Metrics {
        let mut m = self.metrics.clone();
        for n in &self.nodes {
            let s = &n.durable;
            m.final_max_state_entries = m.final_max_state_entries.max(s.entry_count() as u64);
            if !self.cfg.skip_byte_metrics {
                m.final_max_state_bytes = m.final_max_state_bytes.max(s.encoded_len() as u64);
            }
            if n.tier == 0 {
                m.final_tier0_vals_entries = m.final_tier0_vals_entries.max(s.vals.len() as u64);
            }
        }
        m
    }

    /// Runs the configured number of ticks.
    pub fn run_main(&mut self, obs: &mut impl Observer<P>) -> Result<(), SimError> {
        while self.now < self.cfg.steps {
            self.step(obs)?;
        }
        Ok(())
    }

    /// Simulates one tick.
    pub fn step(&mut self, obs: &mut impl Observer<P>) -> Result<(), SimError> {
        self.drain_due(obs)?;
        if !self.nodes.is_empty() {
            let i = (self.now % self.nodes.len() as u64) as usize;
            self.act(i, obs)?;
        }
        self.drain_due(obs)?;
        self.now += 1;
        self.metrics.steps = self.now;
        Ok(())
    }

    /// Ends the faulty phase: in-flight messages are discarded, crashed
    /// nodes recover, unflushed state is written out, and from now on every
    /// send is delivered exactly once, immediately.
    pub fn settle(&mut self, obs: &mut impl Observer<P>) -> Result<(), SimError> {
        self.quiescent = true;
        while let Some(p) = self.queue.pop() {
            match p.action {
                Action::Deliver { from, to, msg, .. } => {
                    self.drop_msg(from, to, msg, DropReason::Cutoff, obs)
                }
                Action::Incr(_) => self.metrics.skipped_increments += 1,
                Action::Crash(_) | Action::Recover(_) => {}
            }
        }
        for i in 0..self.nodes.len() {
            if self.nodes[i].status == NodeStatus::Crashed {
                self.nodes[i].status = NodeStatus::Live;
                let node = self.nodes[i].id.clone();
                self.emit(EventKind::Recover { node }, None, obs);
            }
            if self.nodes[i].memory.is_some() {
                self.flush(i, obs);
            }
            let n = &mut self.nodes[i];
            n.pending_replies.clear();
            n.ready_replies.clear();
        }
        Ok(())
    }

    /// One full round over every link in both directions, in sorted link
    /// order. Requires [`Simulation::settle`] first. Returns whether any
    /// durable state changed or any node retired.
    pub fn gossip_round(&mut self, obs: &mut impl Observer<P>) -> Result<bool, SimError> {
        assert!(self.quiescent, "gossip_round before settle");
        self.now += 1;
        self.metrics.steps = self.now;
        let mut changed = false;
        for i in 0..self.nodes.len() {
            if self.nodes[i].status == NodeStatus::Live && self.nodes[i].retiring(self.now) {
                changed |= self.try_retire(i, obs);
            }
        }
        for k in 0..self.links.len() {
            let (a, b) = self.links[k];
            for (s, r) in [(a, b), (b, a)] {
                if self.nodes[s].status == NodeStatus::Live
                    && self.nodes[r].status == NodeStatus::Live
                {
                    changed |= self.send(s, r, obs)?;
                }
            }
        }
        Ok(changed)
    }

    fn push(&mut self, time: u64, action: Action<P>) {
        self.queue.push(Pending {
            time,
            seq: self.seq,
            action,
        });
        self.seq += 1;
    }

    fn emit(&mut self, kind: EventKind<P>, changed: Option<usize>, obs: &mut impl Observer<P>) {
        let m = &mut self.metrics;
        match &kind {
            EventKind::Incr { .. } => m.total_increments += 1,
            EventKind::Send { .. } => m.messages_sent += 1,
            EventKind::Receive { .. } => m.messages_delivered += 1,
            EventKind::Drop { .. } => m.messages_dropped += 1,
            EventKind::Crash { .. } => m.crashes += 1,
            EventKind::Recover { .. } => m.recoveries += 1,
            EventKind::Flush { .. } => m.flushes += 1,
            EventKind::Retire { .. } => m.retirements += 1,
            EventKind::Fetch { .. } => {}
        }
        let event = TraceEvent {
            step: self.now,
            kind,
        };
        obs.observe(self, &event, changed);
    }

    fn note_durable(&mut self, i: usize) {
        let n = &self.nodes[i];
        let s = &n.durable;
        let m = &mut self.metrics;
        m.max_state_entries = m.max_state_entries.max(s.entry_count() as u64);
        m.max_slots_per_node = m.max_slots_per_node.max(s.slots.len() as u64);
        if n.tier == 0 {
            m.max_tier0_vals_entries = m.max_tier0_vals_entries.max(s.vals.len() as u64);
        }
        if !self.cfg.skip_byte_metrics {
            m.max_state_bytes = m.max_state_bytes.max(s.encoded_len() as u64);
        }
    }

    fn set_durable(&mut self, i: usize, state: HandoffState<P>) {
        let n = &mut self.nodes[i];
        n.durable = Arc::new(state);
        n.memory = None;
        let pending = std::mem::take(&mut n.pending_replies);
        n.ready_replies.extend(pending);
        self.note_durable(i);
    }

    fn node_err(&self, i: usize, source: Error) -> SimError {
        SimError::Node {
            step: self.now,
            node: self.nodes[i].id.clone(),
            source,
        }
    }

    fn drain_due(&mut self, obs: &mut impl Observer<P>) -> Result<(), SimError> {
        while self.queue.peek().is_some_and(|p| p.time <= self.now) {
            let p = self.queue.pop().expect("peeked");
            self.dispatch(p.action, obs)?;
        }
        Ok(())
    }

    fn dispatch(&mut self, action: Action<P>, obs: &mut impl Observer<P>) -> Result<(), SimError> {
        match action {
            Action::Deliver {
                from,
                to,
                msg,
                state,
                full,
            } => {
                self.deliver(from, to, msg, state, full.as_deref(), obs)?;
            }
            Action::Incr(i) => self.increment(i, obs)?,
            Action::Crash(i) => {
                let n = &mut self.nodes[i];
                if n.status == NodeStatus::Live {
                    n.status = NodeStatus::Crashed;
                    n.memory = None;
                    n.pending_replies.clear();
                    n.ready_replies.clear();
                    n.unanswered = 0;
                    let node = n.id.clone();
                    self.emit(EventKind::Crash { node }, None, obs);
                }
            }
            Action::Recover(i) => {
                if self.nodes[i].status == NodeStatus::Crashed {
                    self.nodes[i].status = NodeStatus::Live;
                    let node = self.nodes[i].id.clone();
                    self.emit(EventKind::Recover { node }, None, obs);
                }
            }
        }
        Ok(())
    }

    fn increment(&mut self, i: usize, obs: &mut impl Observer<P>) -> Result<(), SimError> {
        let n = &self.nodes[i];
        if self.quiescent || n.status != NodeStatus::Live || n.retiring(self.now) {
            self.metrics.skipped_increments += 1;
            return Ok(());
        }
        let delta = P::increment_delta(self.rng.random());
        let next = n.current().mutate(&delta).map_err(|e| self.node_err(i, e))?;
        self.issued = self
            .issued
            .combine(&delta)
            .map_err(|e| self.node_err(i, e.into()))?;
        self.set_durable(i, next);
        let node = self.nodes[i].id.clone();
        self.emit(EventKind::Incr { node, delta }, Some(i), obs);
        Ok(())
    }

    /// Returns whether the receiver's durable state changed.
    fn deliver(
        &mut self,
        from: usize,
        to: usize,
        msg: u64,
        state: Arc<HandoffState<P>>,
        full: Option<&HandoffState<P>>,
        obs: &mut impl Observer<P>,
    ) -> Result<bool, SimError> {
        match self.nodes[to].status {
            NodeStatus::Crashed => {
                self.drop_msg(from, to, msg, DropReason::Crashed, obs);
                return Ok(false);
            }
            NodeStatus::Retired => {
                self.drop_msg(from, to, msg, DropReason::Retired, obs);
                return Ok(false);
            }
            NodeStatus::Live => {}
        }
        let merge = self.merge;
        let current = self.nodes[to].current();
        let merged = merge(current, &state).map_err(|e| self.node_err(to, e))?;
        if let Some(full) = full {
            let alt = merge(current, full).map_err(|e| self.node_err(to, e))?;
            if alt != merged {
                self.metrics.view_divergences += 1;
            }
        }
        let changed = merged != *current;
        let write_through = self.quiescent || self.cfg.flush_interval == 0;
        let reply = !self.quiescent
            && self.cfg.gossip == GossipPolicy::ChosenServer
            && self.nodes[from].tier > self.nodes[to].tier;
        let sender = self.nodes[from].id.clone();
        let n = &mut self.nodes[to];
        n.evidence.record(&sender, &state);
        if n.servers.get(n.server_pos) == Some(&from) {
            n.unanswered = 0;
        }
        if reply {
            n.pending_replies.insert(from);
        }
        let durable_changed = changed && write_through;
        if durable_changed {
            self.set_durable(to, merged);
        } else if changed {
            n.memory = Some(merged);
        } else if write_through || n.memory.is_none() {
            let pending = std::mem::take(&mut n.pending_replies);
            n.ready_replies.extend(pending);
        }
        self.last_message = Some(state);
        let kind = EventKind::Receive {
            from: self.nodes[from].id.clone(),
            to: self.nodes[to].id.clone(),
            msg,
            changed,
        };
        self.emit(kind, durable_changed.then_some(to), obs);
        Ok(durable_changed)
    }

    fn drop_msg(
        &mut self,
        from: usize,
        to: usize,
        msg: u64,
        reason: DropReason,
        obs: &mut impl Observer<P>,
    ) {
        let kind = EventKind::Drop {
            from: self.nodes[from].id.clone(),
            to: self.nodes[to].id.clone(),
            msg,
            reason,
        };
        self.emit(kind, None, obs);
    }

    fn flush(&mut self, i: usize, obs: &mut impl Observer<P>) {
        if let Some(state) = self.nodes[i].memory.take() {
            self.nodes[i].last_flush = self.now;
            self.set_durable(i, state);
            let node = self.nodes[i].id.clone();
            self.emit(EventKind::Flush { node }, Some(i), obs);
        }
    }

    /// Retires node `i` if its durable state allows it.
    fn try_retire(&mut self, i: usize, obs: &mut impl Observer<P>) -> bool {
        let n = &self.nodes[i];
        let cached = if n.durable.can_retire() {
            false
        } else if n.durable.can_retire_cached(&n.evidence) {
            true
        } else {
            return false;
        };
        self.nodes[i].status = NodeStatus::Retired;
        self.nodes[i].memory = None;
        let node = self.nodes[i].id.clone();
        self.emit(EventKind::Retire { node, cached }, None, obs);
        true
    }

    /// Node `i` takes its turn.
    fn act(&mut self, i: usize, obs: &mut impl Observer<P>) -> Result<(), SimError> {
        if self.nodes[i].status != NodeStatus::Live {
            return Ok(());
        }
        if let Some((prob, until)) = self.rate {
            let n = &self.nodes[i];
            if n.increments
                && self.now < until
                && !n.retiring(self.now)
                && self.rng.random::<f64>() < prob
            {
                self.increment(i, obs)?;
            }
        }
        let kind = EventKind::Fetch {
            node: self.nodes[i].id.clone(),
            value: self.nodes[i].durable.fetch().clone(),
        };
        self.emit(kind, None, obs);

        let interval = self.cfg.flush_interval;
        if interval > 0 && self.now - self.nodes[i].last_flush >= interval {
            self.flush(i, obs);
        }

        if self.nodes[i].retiring(self.now) && self.try_retire(i, obs) {
            return Ok(());
        }

        match self.cfg.gossip {
            GossipPolicy::AllNeighbors => {
                let len = self.nodes[i].neighbors.len();
                if len > 0 {
                    let j = self.nodes[i].neighbors[self.rng.random_range(0..len)];
                    self.send(i, j, obs)?;
                }
            }
            GossipPolicy::ChosenServer => {
                let k = self.cfg.switch_after;
                let n = &mut self.nodes[i];
                if !n.servers.is_empty() {
                    if n.unanswered >= k {
                        n.server_pos = (n.server_pos + 1) % n.servers.len();
                        n.unanswered = 0;
                    }
                    n.unanswered += 1;
                    let server = n.servers[n.server_pos];
                    self.send(i, server, obs)?;
                }
                for j in std::mem::take(&mut self.nodes[i].ready_replies) {
                    self.send(i, j, obs)?;
                }
                let len = self.nodes[i].peers.len();
                if len > 0 {
                    let j = self.nodes[i].peers[self.rng.random_range(0..len)];
                    self.send(i, j, obs)?;
                }
            }
        }
        Ok(())
    }

    fn channel_rng(&self, stream: usize, n: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(stream as u64 + 1);
        // 16 words per message leaves room for the handful of draws made
        rng.set_word_pos(n as u128 * 16);
        rng
    }

    /// Sends node `i`'s durable state (or its view) to `j`. Returns whether
    /// an immediate delivery changed the receiver's durable state.
    fn send(&mut self, i: usize, j: usize, obs: &mut impl Observer<P>) -> Result<bool, SimError> {
        let durable = self.nodes[i].durable.clone();
        let (state, full) = if self.cfg.use_view {
            let view = Arc::new(durable.view(&self.nodes[j].id, self.nodes[j].tier));
            (view, self.cfg.verify_view.then_some(durable))
        } else {
            (durable, None)
        };
        let msg = self.next_msg;
        self.next_msg += 1;
        let bytes = if self.cfg.skip_byte_metrics {
            0
        } else {
            state.encoded_len() as u64
        };
        let slots = state.slots.len();
        self.metrics.max_message_bytes = self.metrics.max_message_bytes.max(bytes);
        if self.nodes[i].tier < self.nodes[j].tier {
            let m = &mut self.metrics.max_msg_slots_to_higher_tier;
            *m = (*m).max(slots as u64);
        }
        let kind = EventKind::Send {
            from: self.nodes[i].id.clone(),
            to: self.nodes[j].id.clone(),
            msg,
            bytes,
            slots,
        };
        self.emit(kind, None, obs);

        if self.quiescent {
            return self.deliver(i, j, msg, state, full.as_deref(), obs);
        }
        let (link, dir) = self.link_of[&(i, j)];
        let now = self.now;
        if self
            .partitions
            .iter()
            .any(|&(k, from, until)| k == link && from <= now && now < until)
        {
            self.drop_msg(i, j, msg, DropReason::Partition, obs);
            return Ok(false);
        }
        let chan = self.channels[link];
        let stream = 2 * link + dir;
        let mut rng = self.channel_rng(stream, self.link_seq[stream]);
        self.link_seq[stream] += 1;
        if rng.random::<f64>() < chan.loss_prob {
            self.drop_msg(i, j, msg, DropReason::Loss, obs);
            return Ok(false);
        }
        let copies = if rng.random::<f64>() < chan.dup_prob {
            self.metrics.messages_duplicated += 1;
            2
        } else {
            1
        };
        for _ in 0..copies {
            let delay = rng.random_range(chan.delay[0]..=chan.delay[1]);
            self.push(
                now + delay,
                Action::Deliver {
                    from: i,
                    to: j,
                    msg,
                    state: state.clone(),
                    full: full.clone(),
                },
            );
        }
        Ok(false)
    }
}

/// Final states, trace and metrics of a run without quiescence.
#[derive(Debug, Clone)]
pub struct RunOutput<P> {
    pub states: Vec<HandoffState<P>>,
    pub trace: Vec<TraceEvent<P>>,
    pub metrics: Metrics,
}

/// Runs a scenario for its configured number of ticks, recording the trace.
pub fn run<P: SimPayload>(cfg: &ScenarioConfig) -> Result<RunOutput<P>, SimError> {
    let mut sim = Simulation::<P>::new(cfg)?;
    let mut trace = Vec::new();
    sim.run_main(&mut trace)?;
    Ok(RunOutput {
        states: sim.states().cloned().collect(),
        trace,
        metrics: sim.metrics(),
    })
}
