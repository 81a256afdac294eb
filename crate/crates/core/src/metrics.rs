//! Per-run counters.

use serde::{Deserialize, Serialize};

/// Counters collected during a run. Sizes count map entries
/// (`vals + slots + tokens`) unless the name says bytes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub seed: u64,
    /// Ticks simulated, including quiescence rounds.
    pub steps: u64,
    pub total_increments: u64,
    /// Scheduled increments that did not happen because the node was down,
    /// retiring, or the run had ended.
    pub skipped_increments: u64,
    /// Full gossip rounds needed to reach quiescence, if it was run.
    pub convergence_rounds: Option<u64>,
    pub messages_sent: u64,
    pub messages_delivered: u64,
    pub messages_dropped: u64,
    /// Extra copies created by the channel.
    pub messages_duplicated: u64,
    pub max_message_bytes: u64,
    pub max_state_entries: u64,
    pub final_max_state_entries: u64,
    pub max_state_bytes: u64,
    pub final_max_state_bytes: u64,
    pub max_slots_per_node: u64,
    /// Largest slot map carried by a message to a higher-tier node.
    pub max_msg_slots_to_higher_tier: u64,
    pub max_tier0_vals_entries: u64,
    pub final_tier0_vals_entries: u64,
    /// Entries in the largest naive version-vector counter state under the
    /// same schedule, when the oracle was run.
    pub baseline_entries: Option<u64>,
    pub crashes: u64,
    pub recoveries: u64,
    pub flushes: u64,
    pub retirements: u64,
    /// Deliveries where merging the view and merging the full state differ.
    pub view_divergences: u64,
    pub violations: u64,
    pub residue: u64,
}

impl Metrics {
    /// Message accounting: nothing is delivered or dropped that was not sent
    /// or duplicated.
    pub fn accounting_holds(&self) -> bool {
        self.messages_delivered + self.messages_dropped
            <= self.messages_sent + self.messages_duplicated
    }
}
