//! Naive version-vector counter.
//!
//! Each node increments its own entry, fetch sums every entry and merge takes
//! the pointwise maximum. It meets the same correctness criteria as a handoff
//! counter, but every participant's id stays in the map forever, which is
//! what makes it unusable with many short-lived clients. Kept here as an
//! oracle and as the baseline for entry-count comparisons.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::state::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GCounterState {
    pub entries: BTreeMap<NodeId, u64>,
    pub id: NodeId,
}

impl GCounterState {
    pub fn init(id: NodeId) -> Self {
        GCounterState {
            entries: BTreeMap::from([(id.clone(), 0)]),
            id,
        }
    }

    pub fn incr(&self) -> Self {
        let mut next = self.clone();
        *next.entries.entry(next.id.clone()).or_insert(0) += 1;
        next
    }

    pub fn fetch(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn merge(&self, other: &Self) -> Self {
        let mut next = self.clone();
        for (k, v) in &other.entries {
            let e = next.entries.entry(k.clone()).or_insert(0);
            *e = (*e).max(*v);
        }
        next
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
