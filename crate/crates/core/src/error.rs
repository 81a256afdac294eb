use thiserror::Error;

use crate::payload::Overflow;
use crate::state::NodeId;

/// Errors raised by the counter data types.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// A replica was asked to merge a state carrying its own id. Gossip
    /// never sends to self, so this is always a caller bug.
    #[error("node {0} cannot merge a state with its own id")]
    SameIdMerge(NodeId),

    #[error(transparent)]
    Overflow(#[from] Overflow),

    #[error("logical clock overflow at node {0}")]
    ClockOverflow(NodeId),

    #[error("invalid node id {id:?}: {reason}")]
    InvalidNodeId { id: String, reason: &'static str },

    #[error("malformed state: {0}")]
    Decode(String),
}
