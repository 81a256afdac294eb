//! Safety, liveness and garbage collection checks over simulated runs.

pub mod fetch;
pub mod harness;
pub mod invariants;
pub mod liveness;
pub mod oracle;
pub mod view;

pub use fetch::{check_fetch_criteria, FetchChecker};
pub use harness::{check_scenario, sweep, CheckOptions, Checked, SweepOutcome, SweepRow, Verdict};
pub use invariants::{
    ctv, ctv_by_tier, enabled_tokens, Invariant, InvariantChecker, Violation, ViolationLog,
};
pub use liveness::{check_gc, run_to_quiescence, GcReport, Quiescence, Residue};
pub use oracle::{compare_oracle, IncrementTally, OracleReport};
pub use view::{check_view_equivalence, ViewReport};
