//! Tiered node graphs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::state::{NodeId, Tier};

/// Nodes with their tiers plus a set of undirected links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    nodes: Vec<(NodeId, Tier)>,
    links: BTreeSet<(NodeId, NodeId)>,
}

/// Why a topology cannot carry handoffs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopologyViolation {
    DuplicateNode(NodeId),
    SelfLink(NodeId),
    UnknownEndpoint(NodeId),
    /// The tier 0 subgraph splits into this many components.
    Tier0NotConnected { components: usize },
    /// No path along strictly decreasing tiers reaches tier 0.
    NoDescendingPath(NodeId),
    /// `node` links to smaller tier nodes `a` and `b`, which are not linked.
    SmallerNeighborsUnlinked { node: NodeId, a: NodeId, b: NodeId },
}

impl fmt::Display for TopologyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DuplicateNode(n) => write!(f, "duplicate node {n}"),
            Self::SelfLink(n) => write!(f, "self link at {n}"),
            Self::UnknownEndpoint(n) => write!(f, "link endpoint {n} is not a node"),
            Self::Tier0NotConnected { components } => {
                write!(f, "tier-0 not connected ({components} components)")
            }
            Self::NoDescendingPath(n) => write!(f, "no descending path from {n}"),
            Self::SmallerNeighborsUnlinked { node, a, b } => write!(
                f,
                "smaller-tier neighbors {a} and {b} of {node} are not linked"
            ),
        }
    }
}

fn ordered(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Topology {
    /// Builds a topology without validating it; see [`Topology::validate`].
    pub fn new(
        nodes: Vec<(NodeId, Tier)>,
        links: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Self {
        let links = links.into_iter().map(|(a, b)| ordered(a, b)).collect();
        Topology { nodes, links }
    }

    pub fn nodes(&self) -> &[(NodeId, Tier)] {
        &self.nodes
    }

    /// Links as `(a, b)` with `a < b`, sorted.
    pub fn links(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.links
    }

    pub fn tier_of(&self, id: &NodeId) -> Option<Tier> {
        self.nodes.iter().find(|(n, _)| n == id).map(|(_, t)| *t)
    }

    pub fn max_tier(&self) -> Tier {
        self.nodes.iter().map(|(_, t)| *t).max().unwrap_or(0)
    }

    pub fn is_linked(&self, a: &NodeId, b: &NodeId) -> bool {
        self.links.contains(&ordered(a.clone(), b.clone()))
    }

    /// Neighbors of every node, sorted by id.
    pub fn adjacency(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut adj: BTreeMap<NodeId, Vec<NodeId>> = self
            .nodes
            .iter()
            .map(|(n, _)| (n.clone(), Vec::new()))
            .collect();
        for (a, b) in &self.links {
            if let Some(v) = adj.get_mut(a) {
                v.push(b.clone());
            }
            if let Some(v) = adj.get_mut(b) {
                v.push(a.clone());
            }
        }
        for v in adj.values_mut() {
            v.sort();
        }
        adj
    }

    /// Checks the assumptions handoff counters need from the network:
    /// undirected links, a connected tier 0 subgraph, a strictly descending
    /// path to tier 0 from every node, and linked smaller-tier neighbors.
    /// Returns every violation found; empty means valid.
    pub fn validate(&self) -> Vec<TopologyViolation> {
        let mut out = Vec::new();
        let mut tiers: HashMap<&NodeId, Tier> = HashMap::new();
        for (n, t) in &self.nodes {
            if tiers.insert(n, *t).is_some() {
                out.push(TopologyViolation::DuplicateNode(n.clone()));
            }
        }
        for (a, b) in &self.links {
            if a == b {
                out.push(TopologyViolation::SelfLink(a.clone()));
            }
            for end in [a, b] {
                if !tiers.contains_key(end) {
                    out.push(TopologyViolation::UnknownEndpoint(end.clone()));
                }
            }
        }
        if !out.is_empty() {
            return out;
        }
        let adj = self.adjacency();
        let tier = |n: &NodeId| tiers[n];

        // tier 0 connectivity
        let tier0: Vec<&NodeId> = self
            .nodes
            .iter()
            .filter(|(_, t)| *t == 0)
            .map(|(n, _)| n)
            .collect();
        let mut seen: BTreeSet<&NodeId> = BTreeSet::new();
        let mut components = 0;
        for start in &tier0 {
            if seen.contains(start) {
                continue;
            }
            components += 1;
            let mut stack = vec![*start];
            seen.insert(start);
            while let Some(u) = stack.pop() {
                for v in &adj[u] {
                    if tier(v) == 0 && seen.insert(v) {
                        stack.push(v);
                    }
                }
            }
        }
        if components > 1 {
            out.push(TopologyViolation::Tier0NotConnected { components });
        }

        // strictly descending path to tier 0
        let mut by_tier: Vec<&(NodeId, Tier)> = self.nodes.iter().collect();
        by_tier.sort_by_key(|(_, t)| *t);
        let mut reaches: HashMap<&NodeId, bool> = HashMap::new();
        for (n, t) in by_tier {
            let ok = *t == 0
                || adj[n]
                    .iter()
                    .any(|v| tier(v) < *t && reaches.get(v).copied().unwrap_or(false));
            reaches.insert(n, ok);
        }
        for (n, _) in &self.nodes {
            if !reaches[n] {
                out.push(TopologyViolation::NoDescendingPath(n.clone()));
            }
        }

        // smaller-tier neighbors must be linked to each other
        for (n, t) in &self.nodes {
            let smaller: Vec<&NodeId> = adj[n].iter().filter(|v| tier(v) < *t).collect();
            for (i, a) in smaller.iter().enumerate() {
                for b in &smaller[i + 1..] {
                    if !self.is_linked(a, b) {
                        out.push(TopologyViolation::SmallerNeighborsUnlinked {
                            node: n.clone(),
                            a: (*a).clone(),
                            b: (*b).clone(),
                        });
                    }
                }
            }
        }
        out
    }

    /// True when every node's smaller-tier neighbors all share one tier, the
    /// condition under which sending restricted views is safe.
    pub fn uniform_server_tiers(&self) -> bool {
        let adj = self.adjacency();
        self.nodes.iter().all(|(n, t)| {
            let tiers: BTreeSet<Tier> = adj[n]
                .iter()
                .filter_map(|v| self.tier_of(v))
                .filter(|vt| vt < t)
                .collect();
            tiers.len() <= 1
        })
    }
}

/// Datacenter-style topology: a few tier 0 nodes per datacenter, tier 1
/// servers, and tier 2 end clients.
///
/// All tier 0 nodes are linked to each other. Inside a datacenter every tier 1
/// node links to the local tier 0 nodes and to the other local tier 1 nodes,
/// and every client links to all local tier 1 nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub datacenters: usize,
    #[serde(default = "default_tier0_per_dc")]
    pub tier0_per_dc: usize,
    pub tier1_per_dc: usize,
    pub clients_per_tier1: usize,
}

fn default_tier0_per_dc() -> usize {
    2
}

impl GeneratorSpec {
    pub fn build(&self) -> Result<Topology, Error> {
        let name = |s: String| NodeId::new(&s);
        let mut nodes = Vec::new();
        let mut links = Vec::new();
        let mut all_tier0 = Vec::new();
        for dc in 0..self.datacenters {
            let t0: Vec<NodeId> = (0..self.tier0_per_dc)
                .map(|k| name(format!("dc{dc}-t0-{k}")))
                .collect::<Result<_, _>>()?;
            let t1: Vec<NodeId> = (0..self.tier1_per_dc)
                .map(|k| name(format!("dc{dc}-t1-{k}")))
                .collect::<Result<_, _>>()?;
            nodes.extend(t0.iter().map(|n| (n.clone(), 0)));
            nodes.extend(t1.iter().map(|n| (n.clone(), 1)));
            for (i, s) in t1.iter().enumerate() {
                links.extend(t0.iter().map(|z| (s.clone(), z.clone())));
                links.extend(t1[i + 1..].iter().map(|o| (s.clone(), o.clone())));
            }
            for s in 0..self.tier1_per_dc {
                for c in 0..self.clients_per_tier1 {
                    let client = name(format!("dc{dc}-c{s}-{c}"))?;
                    nodes.push((client.clone(), 2));
                    links.extend(t1.iter().map(|srv| (client.clone(), srv.clone())));
                }
            }
            all_tier0.extend(t0);
        }
        for (i, a) in all_tier0.iter().enumerate() {
            links.extend(all_tier0[i + 1..].iter().map(|b| (a.clone(), b.clone())));
        }
        Ok(Topology::new(nodes, links))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> NodeId {
        NodeId::new(s).unwrap()
    }

    fn topo(nodes: &[(&str, Tier)], links: &[(&str, &str)]) -> Topology {
        Topology::new(
            nodes.iter().map(|(n, t)| (id(n), *t)).collect(),
            links.iter().map(|(a, b)| (id(a), id(b))),
        )
    }

    #[test]
    fn disconnected_tier0() {
        let t = topo(&[("A", 0), ("B", 0)], &[]);
        let v = t.validate();
        assert_eq!(v, vec![TopologyViolation::Tier0NotConnected { components: 2 }]);
        assert!(v[0].to_string().starts_with("tier-0 not connected"));
    }

    #[test]
    fn no_descending_path() {
        let t = topo(&[("Z", 0), ("X", 2), ("Y", 2)], &[("X", "Y")]);
        let v = t.validate();
        assert!(v.contains(&TopologyViolation::NoDescendingPath(id("X"))));
        assert!(v.iter().any(|x| x.to_string().starts_with("no descending path")));
    }

    #[test]
    fn smaller_neighbors_must_be_linked() {
        let t = topo(
            &[("Z", 0), ("S1", 1), ("S2", 1), ("C", 2)],
            &[("Z", "S1"), ("Z", "S2"), ("C", "S1"), ("C", "S2")],
        );
        assert_eq!(
            t.validate(),
            vec![TopologyViolation::SmallerNeighborsUnlinked {
                node: id("C"),
                a: id("S1"),
                b: id("S2")
            }]
        );
    }

    #[test]
    fn structural_errors() {
        let t = topo(&[("A", 0), ("A", 0)], &[("A", "Q")]);
        let v = t.validate();
        assert!(v.contains(&TopologyViolation::DuplicateNode(id("A"))));
        assert!(v.contains(&TopologyViolation::UnknownEndpoint(id("Q"))));
    }

    #[test]
    fn links_are_undirected() {
        let t = topo(&[("A", 0), ("B", 0)], &[("B", "A"), ("A", "B")]);
        assert_eq!(t.links().len(), 1);
        assert!(t.is_linked(&id("A"), &id("B")));
        assert!(t.is_linked(&id("B"), &id("A")));
    }

    #[test]
    fn generated_datacenter_topology_is_valid() {
        let t = GeneratorSpec {
            datacenters: 2,
            tier0_per_dc: 2,
            tier1_per_dc: 3,
            clients_per_tier1: 4,
        }
        .build()
        .unwrap();
        assert_eq!(t.nodes().len(), 2 * (2 + 3 + 3 * 4));
        assert!(t.validate().is_empty(), "{:?}", t.validate());
        assert!(t.uniform_server_tiers());
        assert_eq!(t.max_tier(), 2);
        // tier 0 is a clique across datacenters
        assert!(t.is_linked(&id("dc0-t0-1"), &id("dc1-t0-0")));
        // clients stay inside their datacenter
        assert!(!t.is_linked(&id("dc0-c0-0"), &id("dc1-t1-0")));
    }

    #[test]
    fn scaled_example_counts() {
        let t = GeneratorSpec {
            datacenters: 2,
            tier0_per_dc: 1,
            tier1_per_dc: 2,
            clients_per_tier1: 10,
        }
        .build()
        .unwrap();
        let count = |tier| t.nodes().iter().filter(|(_, x)| *x == tier).count();
        assert_eq!((count(0), count(1), count(2)), (2, 4, 40));
        assert!(t.validate().is_empty());
    }
}
