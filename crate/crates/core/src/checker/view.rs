//! Sending restricted views instead of full states.

use serde::{Deserialize, Serialize};

use crate::sim::{Observer, ScenarioConfig, SimError, SimPayload, Simulation, TraceEvent};
use crate::state::HandoffState;

use super::liveness::run_to_quiescence;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewReport {
    /// Every node's smaller-tier neighbors share a tier. Views are only
    /// claimed to be equivalent when this holds.
    pub applicable: bool,
    /// Both runs went through the same sequence of durable states.
    pub identical: bool,
    pub first_divergence: Option<String>,
    /// Deliveries in the view run where merging the full state would have
    /// given a different result.
    pub delivery_divergences: u64,
    pub full_max_slots_to_higher_tier: u64,
    pub view_max_slots_to_higher_tier: u64,
    pub full_max_message_bytes: u64,
    pub view_max_message_bytes: u64,
}

impl ViewReport {
    pub fn passed(&self) -> bool {
        !self.applicable || (self.identical && self.delivery_divergences == 0)
    }
}

struct Recorder<P>(Vec<(u64, usize, HandoffState<P>)>);

impl<P: SimPayload> Observer<P> for Recorder<P> {
    fn observe(&mut self, sim: &Simulation<P>, event: &TraceEvent<P>, changed: Option<usize>) {
        if let Some(i) = changed {
            self.0.push((event.step, i, sim.state(i).clone()));
        }
    }
}

struct Comparer<'a, P> {
    expected: &'a [(u64, usize, HandoffState<P>)],
    pos: usize,
    divergence: Option<String>,
}

impl<P: SimPayload> Observer<P> for Comparer<'_, P> {
    fn observe(&mut self, sim: &Simulation<P>, event: &TraceEvent<P>, changed: Option<usize>) {
        let Some(i) = changed else { return };
        if self.divergence.is_none() {
            let actual = (event.step, i, sim.state(i));
            match self.expected.get(self.pos) {
                Some((s, j, st)) if (*s, *j, st) == actual => {}
                Some((s, j, _)) => {
                    self.divergence = Some(format!(
                        "change {}: full run changed {} at step {s}, view run changed {} at step {}",
                        self.pos,
                        sim.node_id(*j),
                        sim.node_id(i),
                        event.step
                    ))
                }
                None => {
                    self.divergence = Some(format!(
                        "view run changed {} at step {} after the full run had stopped",
                        sim.node_id(i),
                        event.step
                    ))
                }
            }
        }
        self.pos += 1;
    }
}

/// Runs the scenario twice from the same seed, once sending full states and
/// once sending views (also merging the full state at each delivery for
/// comparison), each followed by quiescence, and compares the runs.
pub fn check_view_equivalence<P: SimPayload>(cfg: &ScenarioConfig) -> Result<ViewReport, SimError> {
    let mut full_cfg = cfg.clone();
    full_cfg.use_view = false;
    full_cfg.verify_view = false;
    let mut view_cfg = cfg.clone();
    view_cfg.use_view = true;
    view_cfg.verify_view = true;

    let mut full = Simulation::<P>::new(&full_cfg)?;
    let limit = cfg.round_limit(full.len());
    let mut rec = Recorder(Vec::new());
    full.run_main(&mut rec)?;
    run_to_quiescence(&mut full, &mut rec, limit)?;

    let mut view = Simulation::<P>::new(&view_cfg)?;
    let mut cmp = Comparer {
        expected: &rec.0,
        pos: 0,
        divergence: None,
    };
    view.run_main(&mut cmp)?;
    run_to_quiescence(&mut view, &mut cmp, limit)?;
    if cmp.divergence.is_none() && cmp.pos != rec.0.len() {
        cmp.divergence = Some(format!(
            "full run made {} changes, view run {}",
            rec.0.len(),
            cmp.pos
        ));
    }
    let (fm, vm) = (full.metrics(), view.metrics());
    Ok(ViewReport {
        applicable: full.topology().uniform_server_tiers(),
        identical: cmp.divergence.is_none(),
        first_divergence: cmp.divergence,
        delivery_divergences: vm.view_divergences,
        full_max_slots_to_higher_tier: fm.max_msg_slots_to_higher_tier,
        view_max_slots_to_higher_tier: vm.max_msg_slots_to_higher_tier,
        full_max_message_bytes: fm.max_message_bytes,
        view_max_message_bytes: vm.max_message_bytes,
    })
}
