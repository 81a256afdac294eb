//! Handoff counters, a reference version-vector counter, a deterministic
//! network simulator and a checker for simulated runs.
//!
//! ```
//! use handoff::{HandoffState, Nat, NodeId};
//!
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let client = HandoffState::<Nat>::init(NodeId::new("c1")?, 1).incr()?;
//! let root = HandoffState::<Nat>::init(NodeId::new("z")?, 0);
//!
//! let root = root.merge(&client)?; // root opens a slot for c1
//! let client = client.merge(&root)?; // c1 answers with a token
//! let root = root.merge(&client)?; // root takes the count
//! assert_eq!(root.fetch(), &Nat(1));
//! assert_eq!(client.fetch(), &Nat(1));
//! # Ok(())
//! # }
//! ```

pub mod checker;
pub mod codec;
pub mod error;
pub mod gcounter;
pub mod metrics;
pub mod payload;
pub mod sim;
pub mod state;

pub use error::Error;
pub use gcounter::GCounterState;
pub use metrics::Metrics;
pub use payload::{MapPayload, Nat, Overflow, Payload, PnPayload};
pub use state::{ClockPair, HandoffState, NodeId, RetirementEvidence, Tier, Token, TokenId};
