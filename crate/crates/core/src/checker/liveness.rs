//! Quiescence and garbage collection.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::sim::{NodeStatus, Observer, SimError, SimPayload, Simulation};
use crate::state::{NodeId, TokenId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quiescence {
    /// Rounds run, counting the final round that changed nothing.
    pub rounds: u64,
    pub converged: bool,
    /// Live nodes whose fetch differs from the issued total.
    pub unsettled: Vec<NodeId>,
}

impl Quiescence {
    pub fn passed(&self) -> bool {
        self.converged && self.unsettled.is_empty()
    }
}

/// Stops faults and in-flight traffic, then runs full gossip rounds until one
/// round changes nothing or `round_limit` rounds have run. Afterwards every
/// live node should fetch exactly what was issued.
pub fn run_to_quiescence<P: SimPayload>(
    sim: &mut Simulation<P>,
    obs: &mut impl Observer<P>,
    round_limit: u64,
) -> Result<Quiescence, SimError> {
    sim.settle(obs)?;
    let mut rounds = 0;
    let mut converged = false;
    while rounds < round_limit {
        rounds += 1;
        if !sim.gossip_round(obs)? {
            converged = true;
            break;
        }
    }
    let unsettled = (0..sim.len())
        .filter(|&i| sim.status(i) == NodeStatus::Live && sim.state(i).fetch() != sim.issued())
        .map(|i| sim.node_id(i).clone())
        .collect();
    Ok(Quiescence {
        rounds,
        converged,
        unsettled,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Residue {
    Slot { node: NodeId, slot: TokenId },
    Token { node: NodeId, token: TokenId },
    /// A node outside tier 0 whose version vector is not just its own zero
    /// entry.
    Vals { node: NodeId },
}

impl fmt::Display for Residue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Residue::Slot { node, slot } => write!(f, "slot {slot} left at {node}"),
            Residue::Token { node, token } => write!(f, "token {token} left at {node}"),
            Residue::Vals { node } => write!(f, "{node} still holds value in vals"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcReport {
    pub residue: Vec<Residue>,
    /// Whether the scenario declared residue acceptable.
    pub allowed: bool,
}

impl GcReport {
    pub fn passed(&self) -> bool {
        self.residue.is_empty() || self.allowed
    }
}

/// After quiescence, live nodes should hold no slots or tokens, and nodes
/// outside tier 0 should hold only their own zero entry.
pub fn check_gc<P: SimPayload>(sim: &Simulation<P>, allow_residue: bool) -> GcReport {
    let mut residue = Vec::new();
    for i in 0..sim.len() {
        if sim.status(i) == NodeStatus::Retired {
            continue;
        }
        let s = sim.state(i);
        let node = s.id.clone();
        residue.extend(s.slot_ids().map(|slot| Residue::Slot {
            node: node.clone(),
            slot,
        }));
        residue.extend(s.token_ids().map(|token| Residue::Token {
            node: node.clone(),
            token,
        }));
        if s.tier != 0 && (s.vals.len() != 1 || !s.own().is_zero()) {
            residue.push(Residue::Vals { node });
        }
    }
    GcReport {
        residue,
        allowed: allow_residue,
    }
}
