//! Safety invariants checked after every state change.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::payload::{Overflow, Payload};
use crate::sim::{EventKind, Observer, SimPayload, Simulation, TraceEvent};
use crate::state::{HandoffState, NodeId, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Invariant {
    /// Counted value at the top tier equals everything issued.
    Conservation,
    /// `val` never exceeds the counted value up to the node's tier.
    ValBound,
    /// `below` never exceeds the counted value strictly below the node's tier.
    BelowBound,
    /// Counted value grows with the tier.
    CtvTierMonotone,
    /// Counted value never shrinks over time.
    CtvTimeMonotone,
    /// `val`, `below` and both clocks only grow at each node.
    FieldMonotone,
    Tier0Below,
    BelowWithinVal,
    /// Malformed state: missing own entry, foreign entries outside tier 0,
    /// self slots or self tokens.
    Structural,
    SlotUnique,
    TokenUnique,
    SingleAcquisition,
    /// A token vanished from some holder before its slot was filled.
    TokenBeforeAcquisition,
    /// A token was created without a matching slot at its destination.
    SlotAtTokenCreation,
    /// A token showed up at a third party before its source created it.
    CacheAfterCreation,
    /// A node retired while still holding value.
    Retirement,
    /// A fetch returned more than had been issued before it.
    FetchBounded,
    /// A fetch lost value the node had already seen or added itself.
    FetchMonotone,
}

impl Invariant {
    pub const ALL: [Invariant; 18] = [
        Invariant::Conservation,
        Invariant::ValBound,
        Invariant::BelowBound,
        Invariant::CtvTierMonotone,
        Invariant::CtvTimeMonotone,
        Invariant::FieldMonotone,
        Invariant::Tier0Below,
        Invariant::BelowWithinVal,
        Invariant::Structural,
        Invariant::SlotUnique,
        Invariant::TokenUnique,
        Invariant::SingleAcquisition,
        Invariant::TokenBeforeAcquisition,
        Invariant::SlotAtTokenCreation,
        Invariant::CacheAfterCreation,
        Invariant::Retirement,
        Invariant::FetchBounded,
        Invariant::FetchMonotone,
    ];
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub step: u64,
    pub node: Option<NodeId>,
    pub invariant: Invariant,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {}: {}", self.step, self.invariant)?;
        if let Some(n) = &self.node {
            write!(f, " at {n}")?;
        }
        write!(f, ": {}", self.detail)
    }
}

/// Violations by invariant, keeping the first few in full.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationLog {
    pub counts: BTreeMap<Invariant, u64>,
    pub first: Vec<Violation>,
}

impl ViolationLog {
    const KEEP: usize = 50;

    pub fn push(&mut self, v: Violation) {
        *self.counts.entry(v.invariant).or_default() += 1;
        if self.first.len() < Self::KEEP {
            self.first.push(v);
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn count(&self, inv: Invariant) -> u64 {
        self.counts.get(&inv).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn extend(&mut self, other: ViolationLog) {
        for (k, n) in other.counts {
            *self.counts.entry(k).or_default() += n;
        }
        let room = Self::KEEP.saturating_sub(self.first.len());
        self.first.extend(other.first.into_iter().take(room));
        self.first.sort_by_key(|v| v.step);
    }
}

/// Tokens whose destination currently holds the matching slot, keyed by id.
/// A token held by several replicas counts once.
pub fn enabled_tokens<'a, P: Payload>(
    states: &[&'a HandoffState<P>],
) -> BTreeMap<TokenId, &'a P> {
    let by_id: HashMap<&NodeId, &HandoffState<P>> = states.iter().map(|s| (&s.id, *s)).collect();
    let mut out = BTreeMap::new();
    for s in states {
        for ((src, dst), tok) in &s.tokens {
            let open = by_id
                .get(dst)
                .and_then(|d| d.slots.get(src))
                .is_some_and(|ck| *ck == tok.ck);
            if open {
                out.entry(TokenId::new(src.clone(), dst.clone(), tok.ck))
                    .or_insert(&tok.n);
            }
        }
    }
    out
}

/// Counted value per tier: entry `k` sums the own entries of all nodes at
/// tiers up to `k` and the enabled tokens whose source is at those tiers.
pub fn ctv_by_tier<P: Payload>(states: &[&HandoffState<P>]) -> Result<Vec<P>, Overflow> {
    let max = states.iter().map(|s| s.tier).max().unwrap_or(0) as usize;
    let tier_of: HashMap<&NodeId, usize> =
        states.iter().map(|s| (&s.id, s.tier as usize)).collect();
    let mut bucket = vec![P::zero(); max + 1];
    for s in states {
        let t = s.tier as usize;
        bucket[t] = bucket[t].combine(s.own())?;
    }
    for (id, n) in enabled_tokens(states) {
        let t = tier_of.get(&id.src).copied().unwrap_or(max);
        bucket[t] = bucket[t].combine(n)?;
    }
    for k in 1..bucket.len() {
        bucket[k] = bucket[k].combine(&bucket[k - 1])?;
    }
    Ok(bucket)
}

/// Counted value up to tier `k`.
pub fn ctv<P: Payload>(states: &[&HandoffState<P>], k: u32) -> Result<P, Overflow> {
    let by_tier = ctv_by_tier(states)?;
    Ok(by_tier[(k as usize).min(by_tier.len() - 1)].clone())
}

/// Observer that checks the safety invariants on the durable states after
/// every change, and keeps ledgers of slot and token lifecycles.
pub struct InvariantChecker<P> {
    prev: Vec<HandoffState<P>>,
    prev_ctv: Vec<P>,
    slots_created: HashSet<TokenId>,
    tokens_created: HashSet<TokenId>,
    acquired: HashSet<TokenId>,
    checks: u64,
    log: ViolationLog,
}

impl<P: SimPayload> InvariantChecker<P> {
    /// Must be created before the simulation takes its first step.
    pub fn new(sim: &Simulation<P>) -> Self {
        let prev: Vec<HandoffState<P>> = sim.states().cloned().collect();
        let refs: Vec<&HandoffState<P>> = prev.iter().collect();
        let prev_ctv = ctv_by_tier(&refs).expect("initial states are zero");
        InvariantChecker {
            prev,
            prev_ctv,
            slots_created: HashSet::new(),
            tokens_created: HashSet::new(),
            acquired: HashSet::new(),
            checks: 0,
            log: ViolationLog::default(),
        }
    }

    /// Number of state changes checked.
    pub fn checks(&self) -> u64 {
        self.checks
    }

    pub fn violations(&self) -> &ViolationLog {
        &self.log
    }

    pub fn into_violations(self) -> ViolationLog {
        self.log
    }

    fn fail(&mut self, step: u64, node: Option<&NodeId>, invariant: Invariant, detail: String) {
        self.log.push(Violation {
            step,
            node: node.cloned(),
            invariant,
            detail,
        });
    }

    fn check_change(&mut self, sim: &Simulation<P>, i: usize, step: u64) {
        self.checks += 1;
        let cur = sim.state(i);
        let prev = std::mem::replace(&mut self.prev[i], cur.clone());
        let id = Some(&cur.id);

        for problem in cur.invariant_violations() {
            self.fail(step, id, Invariant::Structural, problem);
        }
        if !prev.val.leq(&cur.val) {
            let d = format!("val went from {:?} to {:?}", prev.val, cur.val);
            self.fail(step, id, Invariant::FieldMonotone, d);
        }
        if !prev.below.leq(&cur.below) {
            let d = format!("below went from {:?} to {:?}", prev.below, cur.below);
            self.fail(step, id, Invariant::FieldMonotone, d);
        }
        if cur.sck < prev.sck || cur.dck < prev.dck {
            let d = format!(
                "clocks went from ({}, {}) to ({}, {})",
                prev.sck, prev.dck, cur.sck, cur.dck
            );
            self.fail(step, id, Invariant::FieldMonotone, d);
        }
        if cur.tier == 0 && !cur.below.is_zero() {
            let d = format!("tier 0 below is {:?}", cur.below);
            self.fail(step, id, Invariant::Tier0Below, d);
        }
        if !cur.below.leq(&cur.val) {
            let d = format!("below {:?} exceeds val {:?}", cur.below, cur.val);
            self.fail(step, id, Invariant::BelowWithinVal, d);
        }

        // slot ledger
        let prev_slots: BTreeSet<TokenId> = prev.slot_ids().collect();
        let cur_slots: BTreeSet<TokenId> = cur.slot_ids().collect();
        for s in cur_slots.difference(&prev_slots) {
            if !self.slots_created.insert(s.clone()) {
                self.fail(step, id, Invariant::SlotUnique, format!("slot {s} created twice"));
            }
        }
        for s in prev_slots.difference(&cur_slots) {
            if self.tokens_created.contains(s) && !self.acquired.insert(s.clone()) {
                let d = format!("token {s} acquired twice");
                self.fail(step, id, Invariant::SingleAcquisition, d);
            }
        }

        // token ledger
        let prev_tokens: BTreeSet<TokenId> = prev.token_ids().collect();
        let cur_tokens: BTreeSet<TokenId> = cur.token_ids().collect();
        for t in cur_tokens.difference(&prev_tokens) {
            if t.src == cur.id {
                if !self.tokens_created.insert(t.clone()) {
                    self.fail(step, id, Invariant::TokenUnique, format!("token {t} created twice"));
                }
                let slot_open = sim
                    .index_of(&t.dst)
                    .is_some_and(|j| sim.state(j).slots.get(&t.src) == Some(&t.clocks()));
                if !slot_open {
                    let d = format!("token {t} has no matching slot at {}", t.dst);
                    self.fail(step, id, Invariant::SlotAtTokenCreation, d);
                }
            } else if !self.tokens_created.contains(t) {
                let d = format!("token {t} cached before its source created it");
                self.fail(step, id, Invariant::CacheAfterCreation, d);
            }
        }
        for t in prev_tokens.difference(&cur_tokens) {
            if !self.acquired.contains(t) {
                let d = format!("token {t} dropped before acquisition");
                self.fail(step, id, Invariant::TokenBeforeAcquisition, d);
            }
        }

        // counted values
        let states: Vec<&HandoffState<P>> = sim.states().collect();
        let by_tier = match ctv_by_tier(&states) {
            Ok(v) => v,
            Err(e) => {
                self.fail(step, None, Invariant::Conservation, e.to_string());
                return;
            }
        };
        let top = by_tier.last().expect("at least one tier");
        if top != sim.issued() {
            let d = format!("counted {:?} but issued {:?}", top, sim.issued());
            self.fail(step, None, Invariant::Conservation, d);
        }
        for k in 1..by_tier.len() {
            if !by_tier[k - 1].leq(&by_tier[k]) {
                let d = format!("tier {} counts more than tier {k}", k - 1);
                self.fail(step, None, Invariant::CtvTierMonotone, d);
            }
        }
        for (k, (before, after)) in self.prev_ctv.clone().iter().zip(&by_tier).enumerate() {
            if !before.leq(after) {
                let d = format!("tier {k} went from {before:?} to {after:?}");
                self.fail(step, None, Invariant::CtvTimeMonotone, d);
            }
        }
        for s in &states {
            let t = s.tier as usize;
            if !s.val.leq(&by_tier[t]) {
                let d = format!("val {:?} exceeds counted {:?}", s.val, by_tier[t]);
                self.fail(step, Some(&s.id), Invariant::ValBound, d);
            }
            if t > 0 && !s.below.leq(&by_tier[t - 1]) {
                let d = format!("below {:?} exceeds counted {:?}", s.below, by_tier[t - 1]);
                self.fail(step, Some(&s.id), Invariant::BelowBound, d);
            }
        }
        self.prev_ctv = by_tier;
    }
}

impl<P: SimPayload> Observer<P> for InvariantChecker<P> {
    fn observe(&mut self, sim: &Simulation<P>, event: &TraceEvent<P>, changed: Option<usize>) {
        if let EventKind::Retire { node, cached } = &event.kind {
            if let Some(i) = sim.index_of(node) {
                let s = sim.state(i);
                if !s.own().is_zero() || (!cached && !s.tokens.is_empty()) {
                    let d = format!("retired with own {:?} and {} tokens", s.own(), s.tokens.len());
                    self.fail(event.step, Some(node), Invariant::Retirement, d);
                }
            }
        }
        if let Some(i) = changed {
            self.check_change(sim, i, event.step);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payload::Nat;

    fn id(s: &str) -> NodeId {
        NodeId::new(s).unwrap()
    }

    #[test]
    fn ctv_follows_a_handoff() {
        let mut a = HandoffState::<Nat>::init(id("A"), 1);
        for _ in 0..9 {
            a = a.incr().unwrap();
        }
        let b = HandoffState::<Nat>::init(id("B"), 0);
        let issued = Nat(9);
        let check = |a: &HandoffState<Nat>, b: &HandoffState<Nat>| {
            let v = ctv_by_tier(&[a, b]).unwrap();
            assert_eq!(v[1], issued);
            v
        };
        assert_eq!(check(&a, &b), vec![Nat(0), Nat(9)]);
        let b = b.merge(&a).unwrap(); // slot
        assert_eq!(check(&a, &b), vec![Nat(0), Nat(9)]);
        let a = a.merge(&b).unwrap(); // token, enabled
        assert_eq!(enabled_tokens(&[&a, &b]).len(), 1);
        assert_eq!(check(&a, &b), vec![Nat(0), Nat(9)]);
        let b = b.merge(&a).unwrap(); // acquired by tier 0
        assert!(enabled_tokens(&[&a, &b]).is_empty());
        assert_eq!(check(&a, &b), vec![Nat(9), Nat(9)]);
        assert_eq!(ctv(&[&a, &b], 0).unwrap(), Nat(9));
        assert_eq!(ctv(&[&a, &b], 7).unwrap(), Nat(9));
    }

    #[test]
    fn duplicated_token_counts_once() {
        let mut c = HandoffState::<Nat>::init(id("C"), 2);
        c = c.incr().unwrap();
        let s = HandoffState::<Nat>::init(id("S"), 1).merge(&c).unwrap();
        let c = c.merge(&s).unwrap();
        let t = HandoffState::<Nat>::init(id("T"), 1);
        // a same tier peer of S, which does not cache
        let z = HandoffState::<Nat>::init(id("Z"), 0).merge(&c).unwrap();
        let states = [&c, &s, &t, &z];
        assert_eq!(enabled_tokens(&states).len(), 1);
        assert_eq!(ctv_by_tier(&states).unwrap()[2], Nat(1));
    }

    #[test]
    fn invariant_names() {
        assert_eq!(Invariant::TokenBeforeAcquisition.to_string(), "token-before-acquisition");
        assert_eq!(Invariant::ALL.len(), 18);
    }
}
