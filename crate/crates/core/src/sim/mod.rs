//! Network simulator for handoff counter deployments.

pub mod config;
pub mod engine;
pub mod topology;
pub mod trace;

pub use config::{
    ChannelModel, ConfigError, CrashSpec, GossipPolicy, IncrementSchedule, LinkChannel,
    Partition, PayloadKind, RetireSpec, ScenarioConfig, ScheduledIncrement, TopologySpec,
};
pub use engine::{
    run, MergeFn, NodeStatus, Observer, RunOutput, SimError, SimPayload, Simulation, MAP_KEYS,
};
pub use topology::{GeneratorSpec, Topology, TopologyViolation};
pub use trace::{read_jsonl, write_jsonl, DropReason, EventKind, TraceEvent};
