//! Correctness of the values returned by fetch.
//!
//! Two properties are checked against the trace order:
//!
//! - a fetch never returns more than the sum of all increments issued
//!   before it;
//! - a node's fetch is at least its previous fetch plus the increments the
//!   node itself issued in between.
//!
//! Both are phrased with the payload order, so they apply to any payload.

use std::collections::HashMap;

use crate::sim::{EventKind, Observer, SimPayload, Simulation, TraceEvent};
use crate::state::NodeId;

use super::invariants::{Invariant, Violation, ViolationLog};

#[derive(Debug)]
struct NodeLog<P> {
    last: P,
    last_step: Option<u64>,
    since: P,
}

/// Streams over trace events; usable directly or as an observer.
#[derive(Debug)]
pub struct FetchChecker<P> {
    issued: P,
    nodes: HashMap<NodeId, NodeLog<P>>,
    fetches: u64,
    log: ViolationLog,
}

impl<P: SimPayload> Default for FetchChecker<P> {
    fn default() -> Self {
        FetchChecker {
            issued: P::zero(),
            nodes: HashMap::new(),
            fetches: 0,
            log: ViolationLog::default(),
        }
    }
}

impl<P: SimPayload> FetchChecker<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fetches(&self) -> u64 {
        self.fetches
    }

    pub fn violations(&self) -> &ViolationLog {
        &self.log
    }

    pub fn into_violations(self) -> ViolationLog {
        self.log
    }

    pub fn feed(&mut self, event: &TraceEvent<P>) {
        match &event.kind {
            EventKind::Incr { node, delta } => {
                // overflow here means the run itself already failed
                if let Ok(total) = self.issued.combine(delta) {
                    self.issued = total;
                }
                let log = self.entry(node);
                if let Ok(since) = log.since.combine(delta) {
                    log.since = since;
                }
            }
            EventKind::Fetch { node, value } => {
                self.fetches += 1;
                if !value.leq(&self.issued) {
                    self.log.push(Violation {
                        step: event.step,
                        node: Some(node.clone()),
                        invariant: Invariant::FetchBounded,
                        detail: format!(
                            "fetch returned {value:?} but only {:?} was issued",
                            self.issued
                        ),
                    });
                }
                let log = self.entry(node);
                let floor = log.last.combine(&log.since).unwrap_or_else(|_| log.last.clone());
                let violation = (!floor.leq(value)).then(|| Violation {
                    step: event.step,
                    node: Some(node.clone()),
                    invariant: Invariant::FetchMonotone,
                    detail: match log.last_step {
                        Some(s) => format!(
                            "fetch returned {value:?}, below {:?} fetched at step {s} plus {:?} added since",
                            log.last, log.since
                        ),
                        None => format!("fetch returned {value:?}, below own increments {:?}", log.since),
                    },
                });
                log.last = value.clone();
                log.last_step = Some(event.step);
                log.since = P::zero();
                if let Some(v) = violation {
                    self.log.push(v);
                }
            }
            _ => {}
        }
    }

    fn entry(&mut self, node: &NodeId) -> &mut NodeLog<P> {
        self.nodes.entry(node.clone()).or_insert_with(|| NodeLog {
            last: P::zero(),
            last_step: None,
            since: P::zero(),
        })
    }
}

impl<P: SimPayload> Observer<P> for FetchChecker<P> {
    fn observe(&mut self, _: &Simulation<P>, event: &TraceEvent<P>, _: Option<usize>) {
        self.feed(event);
    }
}

/// Checks both fetch properties over a recorded trace.
pub fn check_fetch_criteria<P: SimPayload>(trace: &[TraceEvent<P>]) -> ViolationLog {
    let mut c = FetchChecker::new();
    for e in trace {
        c.feed(e);
    }
    c.into_violations()
}
