//! Runs a scenario under every check and condenses the outcome.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::Metrics;
use crate::sim::{MergeFn, Observer, ScenarioConfig, SimError, SimPayload, Simulation, TraceEvent};
use crate::state::HandoffState;

use super::fetch::FetchChecker;
use super::invariants::{Invariant, InvariantChecker, Violation};
use super::liveness::{check_gc, run_to_quiescence, GcReport, Quiescence};
use super::oracle::{compare_oracle, IncrementTally, OracleReport};
use super::view::{check_view_equivalence, ViewReport};

const SCOPE: &str = "These results cover only the finite run described here; \
they are evidence about this schedule, not a proof for all executions.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckOptions {
    /// Run to quiescence after the configured steps, then check garbage
    /// collection.
    pub quiesce: bool,
    /// Compare against the naive counter (needs `quiesce`).
    pub oracle: bool,
    /// Also run the paired full-state / view comparison.
    pub view_compare: bool,
    /// Keep the full trace in the result.
    pub record_trace: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            quiesce: true,
            oracle: true,
            view_compare: false,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    pub seed: u64,
    pub checked_states: u64,
    pub checked_fetches: u64,
    /// Violation count for every safety invariant.
    pub invariants: BTreeMap<Invariant, u64>,
    pub first_violations: Vec<Violation>,
    pub quiescence: Option<Quiescence>,
    pub gc: Option<GcReport>,
    pub oracle: Option<OracleReport>,
    pub view: Option<ViewReport>,
    pub message_accounting: bool,
    pub metrics: Metrics,
    pub scope: String,
}

impl Verdict {
    pub fn violations(&self) -> u64 {
        self.invariants.values().sum()
    }
}

#[derive(Debug, Clone)]
pub struct Checked<P> {
    pub verdict: Verdict,
    /// Empty unless requested.
    pub trace: Vec<TraceEvent<P>>,
    pub states: Vec<HandoffState<P>>,
}

impl<P: SimPayload, O: Observer<P>> Observer<P> for Option<O> {
    fn observe(&mut self, sim: &Simulation<P>, event: &TraceEvent<P>, changed: Option<usize>) {
        if let Some(o) = self {
            o.observe(sim, event, changed);
        }
    }
}

/// Runs `cfg` with the invariant and fetch checkers attached, then the
/// requested end-of-run checks. `merge` replaces the merge function, which
/// is only useful for testing the checker itself.
pub fn check_scenario<P: SimPayload>(
    cfg: &ScenarioConfig,
    opts: CheckOptions,
    merge: Option<MergeFn<P>>,
) -> Result<Checked<P>, SimError> {
    let mut sim = Simulation::<P>::new(cfg)?;
    if let Some(m) = merge {
        sim = sim.with_merge(m);
    }
    let mut inv = InvariantChecker::new(&sim);
    let mut fetch = FetchChecker::<P>::new();
    let mut tally = IncrementTally::default();
    let mut trace = opts.record_trace.then(Vec::new);
    let mut quiescence = None;
    {
        let mut obs = (&mut inv, (&mut fetch, (&mut tally, &mut trace)));
        sim.run_main(&mut obs)?;
        if opts.quiesce {
            let limit = cfg.round_limit(sim.len());
            quiescence = Some(run_to_quiescence(&mut sim, &mut obs, limit)?);
        }
    }
    let gc = opts.quiesce.then(|| check_gc(&sim, cfg.allow_residue()));
    let oracle = (opts.quiesce && opts.oracle).then(|| compare_oracle(&sim, &tally));
    let view = if opts.view_compare {
        Some(check_view_equivalence::<P>(cfg)?)
    } else {
        None
    };

    let checked_states = inv.checks();
    let checked_fetches = fetch.fetches();
    let mut log = inv.into_violations();
    log.extend(fetch.into_violations());

    let mut metrics = sim.metrics();
    metrics.convergence_rounds = quiescence.as_ref().map(|q| q.rounds);
    metrics.baseline_entries = oracle.as_ref().map(|o| o.baseline_entries);
    metrics.violations = log.total();
    metrics.residue = gc.as_ref().map_or(0, |g| g.residue.len() as u64);
    if let Some(v) = &view {
        metrics.view_divergences = v.delivery_divergences;
    }
    let message_accounting = metrics.accounting_holds();

    let passed = log.is_empty()
        && message_accounting
        && quiescence.as_ref().is_none_or(Quiescence::passed)
        && gc.as_ref().is_none_or(GcReport::passed)
        && oracle.as_ref().is_none_or(OracleReport::agrees)
        && view.as_ref().is_none_or(ViewReport::passed);
    let invariants = Invariant::ALL.iter().map(|&i| (i, log.count(i))).collect();
    let verdict = Verdict {
        passed,
        seed: cfg.seed,
        checked_states,
        checked_fetches,
        invariants,
        first_violations: log.first,
        quiescence,
        gc,
        oracle,
        view,
        message_accounting,
        metrics,
        scope: SCOPE.to_string(),
    };
    Ok(Checked {
        verdict,
        trace: trace.unwrap_or_default(),
        states: sim.states().cloned().collect(),
    })
}

/// One line of a sweep summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepRow {
    pub seed: u64,
    pub passed: bool,
    pub steps: u64,
    pub violations: u64,
    pub convergence_rounds: Option<u64>,
    pub residue: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub seed: u64,
    pub result: Result<Verdict, String>,
}

impl SweepOutcome {
    pub fn row(&self) -> SweepRow {
        match &self.result {
            Ok(v) => SweepRow {
                seed: self.seed,
                passed: v.passed,
                steps: v.metrics.steps,
                violations: v.violations(),
                convergence_rounds: v.metrics.convergence_rounds,
                residue: v.metrics.residue,
                error: None,
            },
            Err(e) => SweepRow {
                seed: self.seed,
                passed: false,
                steps: 0,
                violations: 0,
                convergence_rounds: None,
                residue: 0,
                error: Some(e.clone()),
            },
        }
    }

    pub fn passed(&self) -> bool {
        self.result.as_ref().is_ok_and(|v| v.passed)
    }
}

/// Checks `cfg` once per seed, in parallel. Results come back in seed order.
pub fn sweep<P: SimPayload>(
    cfg: &ScenarioConfig,
    seeds: &[u64],
    opts: CheckOptions,
) -> Vec<SweepOutcome> {
    let opts = CheckOptions {
        record_trace: false,
        ..opts
    };
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = ScenarioConfig {
                seed,
                ..cfg.clone()
            };
            let result = check_scenario::<P>(&cfg, opts, None)
                .map(|c| c.verdict)
                .map_err(|e| e.to_string());
            SweepOutcome { seed, result }
        })
        .collect()
}
