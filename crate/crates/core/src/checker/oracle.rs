//! Comparison against a naive version-vector counter.
//!
//! The baseline replays the same per-node increments on a
//! [`GCounterState`] per node, then gossips over the same links until
//! nothing changes. At that point every baseline replica counts every
//! increment, and so should every live handoff replica.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::gcounter::GCounterState;
use crate::sim::{EventKind, NodeStatus, Observer, SimPayload, Simulation, TraceEvent};
use crate::state::NodeId;

/// Observer counting increments per node.
#[derive(Debug, Clone, Default)]
pub struct IncrementTally(pub BTreeMap<NodeId, u64>);

impl IncrementTally {
    pub fn from_trace<P: SimPayload>(trace: &[TraceEvent<P>]) -> Self {
        let mut t = IncrementTally::default();
        for e in trace {
            t.feed(e);
        }
        t
    }

    pub fn feed<P>(&mut self, event: &TraceEvent<P>) {
        if let EventKind::Incr { node, .. } = &event.kind {
            *self.0.entry(node.clone()).or_default() += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.0.values().sum()
    }
}

impl<P: SimPayload> Observer<P> for IncrementTally {
    fn observe(&mut self, _: &Simulation<P>, event: &TraceEvent<P>, _: Option<usize>) {
        self.feed(event);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleReport {
    /// Number of increments issued.
    pub expected: u64,
    /// Baseline replicas whose fetch differs from `expected`.
    pub baseline_mismatches: Vec<NodeId>,
    /// Live handoff replicas whose fetch differs from the issued total.
    pub handoff_mismatches: Vec<NodeId>,
    /// Largest baseline map.
    pub baseline_entries: u64,
    /// Largest `vals` map at tier 0 in the handoff run.
    pub handoff_tier0_entries: u64,
}

impl OracleReport {
    pub fn agrees(&self) -> bool {
        self.baseline_mismatches.is_empty() && self.handoff_mismatches.is_empty()
    }
}

/// Runs the baseline to a fixpoint over the simulation's topology and
/// compares final fetches. Call after quiescence.
pub fn compare_oracle<P: SimPayload>(
    sim: &Simulation<P>,
    increments: &IncrementTally,
) -> OracleReport {
    let topo = sim.topology();
    let mut replicas: BTreeMap<NodeId, GCounterState> = topo
        .nodes()
        .iter()
        .map(|(id, _)| {
            let mut g = GCounterState::init(id.clone());
            for _ in 0..increments.0.get(id).copied().unwrap_or(0) {
                g = g.incr();
            }
            (id.clone(), g)
        })
        .collect();
    loop {
        let mut changed = false;
        for (a, b) in topo.links() {
            for (s, r) in [(a, b), (b, a)] {
                let next = replicas[r].merge(&replicas[s]);
                if next != replicas[r] {
                    replicas.insert(r.clone(), next);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let expected = increments.total();
    OracleReport {
        expected,
        baseline_mismatches: replicas
            .iter()
            .filter(|(_, g)| g.fetch() != expected)
            .map(|(id, _)| id.clone())
            .collect(),
        handoff_mismatches: (0..sim.len())
            .filter(|&i| sim.status(i) == NodeStatus::Live && sim.state(i).fetch() != sim.issued())
            .map(|i| sim.node_id(i).clone())
            .collect(),
        baseline_entries: replicas.values().map(|g| g.len() as u64).max().unwrap_or(0),
        handoff_tier0_entries: (0..sim.len())
            .filter(|&i| sim.tier(i) == 0)
            .map(|i| sim.state(i).vals.len() as u64)
            .max()
            .unwrap_or(0),
    }
}
