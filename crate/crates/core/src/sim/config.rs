//! Scenario files.
//!
//! A scenario is a versioned JSON document naming the topology, the channel
//! model, the workload and the fault schedule. Everything that affects a run
//! lives here, so a config plus a seed replays the same trace.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::{NodeId, Tier};

use super::topology::{GeneratorSpec, Topology, TopologyViolation};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("unsupported config version {0} (expected {CONFIG_VERSION})")]
    Version(u32),
    #[error("invalid topology: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Topology(Vec<TopologyViolation>),
    #[error("{context} refers to unknown node {id}")]
    UnknownNode { context: &'static str, id: NodeId },
    #[error("{context} refers to {a}-{b}, which is not a link")]
    UnknownLink {
        context: &'static str,
        a: NodeId,
        b: NodeId,
    },
    #[error("{name} must be in [0, 1], got {value}")]
    Probability { name: &'static str, value: f64 },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    #[default]
    Nat,
    Map,
    Pn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    pub tier: Tier,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineTopology {
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<[NodeId; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologySpec {
    Inline(InlineTopology),
    Generated(GeneratorSpec),
}

impl TopologySpec {
    pub fn build(&self) -> Result<Topology, ConfigError> {
        match self {
            TopologySpec::Inline(t) => Ok(Topology::new(
                t.nodes.iter().map(|n| (n.id.clone(), n.tier)).collect(),
                t.links.iter().map(|[a, b]| (a.clone(), b.clone())),
            )),
            TopologySpec::Generated(g) => g.build().map_err(|e| ConfigError::Invalid(e.to_string())),
        }
    }
}

/// Per-message behavior of a directed link. Each send is lost with
/// `loss_prob`; otherwise it is delivered once, or twice with `dup_prob`,
/// each copy after a delay drawn uniformly from `delay` (inclusive, ticks).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    #[serde(default)]
    pub loss_prob: f64,
    #[serde(default)]
    pub dup_prob: f64,
    #[serde(default = "default_delay")]
    pub delay: [u64; 2],
}

fn default_delay() -> [u64; 2] {
    [1, 1]
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            loss_prob: 0.0,
            dup_prob: 0.0,
            delay: default_delay(),
        }
    }
}

impl ChannelModel {
    fn validate(&self) -> Result<(), ConfigError> {
        for (name, value) in [("loss_prob", self.loss_prob), ("dup_prob", self.dup_prob)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::Probability { name, value });
            }
        }
        if self.delay[0] > self.delay[1] {
            return Err(ConfigError::Invalid(format!(
                "delay range [{}, {}] is empty",
                self.delay[0], self.delay[1]
            )));
        }
        Ok(())
    }
}

/// Channel override for one undirected link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkChannel {
    pub link: [NodeId; 2],
    #[serde(flatten)]
    pub channel: ChannelModel,
}

/// Drops every message sent over a link while `from <= step < until`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub link: [NodeId; 2],
    pub from: u64,
    pub until: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledIncrement {
    pub node: NodeId,
    pub step: u64,
    #[serde(default = "one")]
    pub count: u64,
}

fn one() -> u64 {
    1
}

/// Which nodes issue increments and when.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IncrementSchedule {
    #[default]
    None,
    Explicit(Vec<ScheduledIncrement>),
    /// `total` increments spread uniformly over nodes of the given tiers
    /// (default: the highest tier) and over steps `[0, until)`.
    Random {
        total: u64,
        #[serde(default)]
        tiers: Option<Vec<Tier>>,
        until: u64,
    },
    /// At each of its turns before `until`, an eligible node increments
    /// with probability `prob`.
    Rate {
        prob: f64,
        #[serde(default)]
        tiers: Option<Vec<Tier>>,
        until: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GossipPolicy {
    /// Each turn, send to one uniformly chosen neighbor.
    AllNeighbors,
    /// Each turn, send to the chosen smaller-tier server, answer the
    /// higher-tier nodes heard from since the last turn, and send to one
    /// random same-tier neighbor.
    #[default]
    ChosenServer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrashSpec {
    pub node: NodeId,
    pub crash: u64,
    pub recover: u64,
}

/// From step `at` on the node stops incrementing and retires as soon as its
/// state allows it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetireSpec {
    pub node: NodeId,
    pub at: u64,
}

/// Tag that accepts leftover slots or tokens at quiescence (for example after
/// a client retired while one of its slots was still outstanding).
pub const TAG_ALLOW_RESIDUE: &str = "allow-residue";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub payload: PayloadKind,
    pub topology: TopologySpec,
    #[serde(default)]
    pub channel: ChannelModel,
    #[serde(default)]
    pub link_channels: Vec<LinkChannel>,
    #[serde(default)]
    pub partitions: Vec<Partition>,
    /// Number of simulated ticks. Every tick gives one node a turn and
    /// delivers whatever is due.
    pub steps: u64,
    #[serde(default)]
    pub increments: IncrementSchedule,
    #[serde(default)]
    pub gossip: GossipPolicy,
    /// Consecutive unanswered sends after which a node moves on to its next
    /// candidate server.
    #[serde(default = "default_switch_after")]
    pub switch_after: u32,
    #[serde(default)]
    pub use_view: bool,
    /// Also merge the unrestricted state at every delivery and count the
    /// deliveries where the result differs from merging the view.
    #[serde(default)]
    pub verify_view: bool,
    /// Ticks between durable writes; 0 writes every change through.
    #[serde(default)]
    pub flush_interval: u64,
    #[serde(default)]
    pub crashes: Vec<CrashSpec>,
    #[serde(default)]
    pub retirements: Vec<RetireSpec>,
    /// Round limit for the quiescence phase; defaults to four rounds per node.
    #[serde(default)]
    pub quiescence_round_limit: Option<u64>,
    /// Skip the encoded-size bookkeeping, which dominates run time for
    /// large sweeps.
    #[serde(default)]
    pub skip_byte_metrics: bool,
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

fn default_switch_after() -> u32 {
    5
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(ConfigError::Version(cfg.version));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization is infallible")
    }

    pub fn allow_residue(&self) -> bool {
        self.tags.contains(TAG_ALLOW_RESIDUE)
    }

    pub fn round_limit(&self, nodes: usize) -> u64 {
        self.quiescence_round_limit.unwrap_or(4 * nodes as u64)
    }

    /// Builds the topology and checks that everything else in the config
    /// refers to it consistently.
    pub fn resolve(&self) -> Result<Topology, ConfigError> {
        let topo = self.topology.build()?;
        let violations = topo.validate();
        if !violations.is_empty() {
            return Err(ConfigError::Topology(violations));
        }
        let known: BTreeMap<&NodeId, Tier> = topo.nodes().iter().map(|(n, t)| (n, *t)).collect();
        let node = |context, id: &NodeId| {
            if known.contains_key(id) {
                Ok(())
            } else {
                Err(ConfigError::UnknownNode {
                    context,
                    id: id.clone(),
                })
            }
        };
        let link = |context, [a, b]: &[NodeId; 2]| {
            if topo.is_linked(a, b) {
                Ok(())
            } else {
                Err(ConfigError::UnknownLink {
                    context,
                    a: a.clone(),
                    b: b.clone(),
                })
            }
        };
        self.channel.validate()?;
        for lc in &self.link_channels {
            link("link_channels", &lc.link)?;
            lc.channel.validate()?;
        }
        for p in &self.partitions {
            link("partitions", &p.link)?;
        }
        for c in &self.crashes {
            node("crashes", &c.node)?;
            if c.recover < c.crash {
                return Err(ConfigError::Invalid(format!(
                    "{} recovers at {} before crashing at {}",
                    c.node, c.recover, c.crash
                )));
            }
        }
        for r in &self.retirements {
            node("retirements", &r.node)?;
        }
        match &self.increments {
            IncrementSchedule::None => {}
            IncrementSchedule::Explicit(list) => {
                for inc in list {
                    node("increments", &inc.node)?;
                }
            }
            IncrementSchedule::Random { tiers, .. } => {
                if self.eligible(&topo, tiers.as_deref()).is_empty() {
                    return Err(ConfigError::Invalid(
                        "random increments have no eligible node".into(),
                    ));
                }
            }
            IncrementSchedule::Rate { prob, .. } => {
                if !(0.0..=1.0).contains(prob) {
                    return Err(ConfigError::Probability {
                        name: "increments.rate.prob",
                        value: *prob,
                    });
                }
            }
        }
        if self.switch_after == 0 {
            return Err(ConfigError::Invalid("switch_after must be positive".into()));
        }
        Ok(topo)
    }

    /// Nodes whose tier is in `tiers`, or in the highest tier when `None`.
    pub fn eligible(&self, topo: &Topology, tiers: Option<&[Tier]>) -> Vec<NodeId> {
        let max = topo.max_tier();
        topo.nodes()
            .iter()
            .filter(|(_, t)| match tiers {
                Some(ts) => ts.contains(t),
                None => *t == max,
            })
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn channel_for(&self, a: &NodeId, b: &NodeId) -> ChannelModel {
        self.link_channels
            .iter()
            .find(|lc| {
                let [x, y] = &lc.link;
                (x == a && y == b) || (x == b && y == a)
            })
            .map(|lc| lc.channel)
            .unwrap_or(self.channel)
    }
}
