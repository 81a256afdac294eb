//! The handoff counter replica.
//!
//! Every node keeps one [`HandoffState`]. Tier 0 nodes keep a small version
//! vector (`vals`) with one entry per tier 0 node; every other node keeps only
//! its own entry and periodically *hands off* that value to a smaller tier
//! node through a slot/token exchange:
//!
//! 1. the destination sees the source's non-zero value and opens a slot;
//! 2. the source sees the slot and moves its value into a matching token;
//! 3. the destination sees the token, adds its value and removes the slot;
//! 4. the source sees the slot is gone and drops the token.
//!
//! Slots and tokens are identified by `(src, dst, sck, dck)`, where `sck` and
//! `dck` are the source and destination logical clocks, so neither can be
//! created twice and a token can be acquired at most once, no matter how
//! messages are lost, duplicated or reordered.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;
use crate::payload::{self, MapPayload, Nat, Payload, PnPayload};

/// Node tier. Values flow towards tier 0.
pub type Tier = u32;

/// Globally unique node identifier.
///
/// Ids are non-empty and may not contain `|`, which separates source and
/// destination in encoded token keys.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(Arc<str>);

impl NodeId {
    pub fn new(id: &str) -> Result<Self, Error> {
        let invalid = |reason| Error::InvalidNodeId {
            id: id.to_owned(),
            reason,
        };
        if id.is_empty() {
            return Err(invalid("empty"));
        }
        if id.contains('|') {
            return Err(invalid("contains '|'"));
        }
        Ok(NodeId(Arc::from(id)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for NodeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeId::new(s)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        NodeId::new(&s).map_err(serde::de::Error::custom)
    }
}

/// Source and destination clocks identifying a slot or token between a
/// given pair of nodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClockPair {
    // declared in key order so the JSON encoding is canonical
    pub dck: u64,
    pub sck: u64,
}

impl ClockPair {
    pub fn new(sck: u64, dck: u64) -> Self {
        ClockPair { sck, dck }
    }
}

/// A value in transit from `src` to `dst`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token<P> {
    pub ck: ClockPair,
    pub n: P,
}

/// Full identity of a slot or token.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenId {
    pub src: NodeId,
    pub dst: NodeId,
    pub sck: u64,
    pub dck: u64,
}

impl TokenId {
    pub fn new(src: NodeId, dst: NodeId, ck: ClockPair) -> Self {
        TokenId {
            src,
            dst,
            sck: ck.sck,
            dck: ck.dck,
        }
    }

    pub fn clocks(&self) -> ClockPair {
        ClockPair::new(self.sck, self.dck)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.src, self.dst, self.sck, self.dck)
    }
}

/// One handoff counter replica.
///
/// Invariants maintained by every operation (see [`HandoffState::invariant_violations`]):
///  - `id ∈ dom(vals)`;
///  - `tier ≠ 0 ⟹ dom(vals) = {id}`;
///  - token keys `(s, d)` have `s ≠ d`, and no slot is keyed by `id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandoffState<P> {
    pub id: NodeId,
    pub tier: Tier,
    /// Largest value that can be safely reported given local knowledge.
    pub val: P,
    /// Lower bound of the values accounted in strictly smaller tiers.
    pub below: P,
    pub vals: BTreeMap<NodeId, P>,
    /// Source clock, advanced whenever a token is created.
    pub sck: u64,
    /// Destination clock, advanced whenever a slot is created.
    pub dck: u64,
    /// Open slots, keyed by source node.
    pub slots: BTreeMap<NodeId, ClockPair>,
    /// Tokens keyed by `(src, dst)`; own tokens and cached ones.
    pub tokens: BTreeMap<(NodeId, NodeId), Token<P>>,
}

/// Collected proof that this node's tokens are cached by third parties.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetirementEvidence {
    owner: NodeId,
    cached: BTreeSet<TokenId>,
}

impl RetirementEvidence {
    pub fn new(owner: NodeId) -> Self {
        RetirementEvidence {
            owner,
            cached: BTreeSet::new(),
        }
    }

    /// Records the owner's tokens carried by a state received from `sender`.
    /// A copy held by the token's own destination is not a cache and is
    /// ignored.
    pub fn record<P>(&mut self, sender: &NodeId, received: &HandoffState<P>) {
        for ((src, dst), tok) in &received.tokens {
            if *src == self.owner && dst != sender {
                self.cached
                    .insert(TokenId::new(src.clone(), dst.clone(), tok.ck));
            }
        }
    }

    pub fn contains(&self, id: &TokenId) -> bool {
        self.cached.contains(id)
    }

    pub fn owner(&self) -> &NodeId {
        &self.owner
    }

    pub fn len(&self) -> usize {
        self.cached.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cached.is_empty()
    }
}

impl<P: Payload> HandoffState<P> {
    /// Fresh replica for node `id` at `tier`. Must be called once per id.
    pub fn init(id: NodeId, tier: Tier) -> Self {
        let vals = BTreeMap::from([(id.clone(), P::zero())]);
        HandoffState {
            id,
            tier,
            val: P::zero(),
            below: P::zero(),
            vals,
            sck: 0,
            dck: 0,
            slots: BTreeMap::new(),
            tokens: BTreeMap::new(),
        }
    }

    pub fn fetch(&self) -> &P {
        &self.val
    }

    /// Own entry `vals(id)`.
    pub fn own(&self) -> &P {
        self.vals
            .get(&self.id)
            .expect("handoff state lost its own vals entry")
    }

    /// Applies the local inflation `x ↦ x ⊕ delta` to both `val` and the own
    /// entry. Every client-visible mutation is of this form.
    pub fn mutate(&self, delta: &P) -> Result<Self, Error> {
        let mut next = self.clone();
        next.val = next.val.combine(delta)?;
        let own = next.own().combine(delta)?;
        next.vals.insert(next.id.clone(), own);
        Ok(next)
    }

    /// Merges a state received from another node into this one.
    ///
    /// The eight transformations run in a fixed order, each seeing the
    /// previous one's output and the unmodified received state.
    pub fn merge(&self, other: &Self) -> Result<Self, Error> {
        if self.id == other.id {
            return Err(Error::SameIdMerge(self.id.clone()));
        }
        let next = self
            .clone()
            .fill_slots(other)?
            .discard_slot(other)
            .create_slot(other)?
            .merge_vectors(other)
            .aggregate(other)?
            .discard_tokens(other)
            .create_token(other)?
            .cache_tokens(other);
        Ok(next)
    }

    /// Acquires every token in `other` addressed to this node whose clocks
    /// match an open slot: the token value is added to the own entry and the
    /// slot is removed.
    pub fn fill_slots(mut self, other: &Self) -> Result<Self, Error> {
        let mut acquired = P::zero();
        for ((src, dst), tok) in &other.tokens {
            if *dst == self.id && self.slots.get(src) == Some(&tok.ck) {
                acquired = acquired.combine(&tok.n)?;
                self.slots.remove(src);
            }
        }
        if !acquired.is_zero() {
            let own = self.own().combine(&acquired)?;
            self.vals.insert(self.id.clone(), own);
        }
        Ok(self)
    }

    /// Drops the slot for `other` if `other`'s source clock shows the
    /// matching token can no longer be created.
    pub fn discard_slot(mut self, other: &Self) -> Self {
        if let Some(slot) = self.slots.get(&other.id) {
            if other.sck > slot.sck {
                self.slots.remove(&other.id);
            }
        }
        self
    }

    /// Opens a slot for a higher tier node that has something to hand off.
    pub fn create_slot(mut self, other: &Self) -> Result<Self, Error> {
        if self.tier < other.tier
            && !other.own().is_zero()
            && !self.slots.contains_key(&other.id)
        {
            let dck = self.dck;
            self.slots
                .insert(other.id.clone(), ClockPair::new(other.sck, dck));
            self.dck = dck
                .checked_add(1)
                .ok_or_else(|| Error::ClockOverflow(self.id.clone()))?;
        }
        Ok(self)
    }

    /// Pointwise join of the version vectors; tier 0 with tier 0 only.
    pub fn merge_vectors(mut self, other: &Self) -> Self {
        if self.tier == 0 && other.tier == 0 {
            for (k, v) in &other.vals {
                match self.vals.get_mut(k) {
                    Some(mine) => *mine = mine.join(v),
                    None => {
                        self.vals.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        self
    }

    /// Vertical aggregation of `below` and `val`. `below` is computed first
    /// and the new `val` reads the updated `below`.
    pub fn aggregate(mut self, other: &Self) -> Result<Self, Error> {
        let below = if self.tier == other.tier {
            self.below.join(&other.below)
        } else if self.tier > other.tier {
            self.below.join(&other.val)
        } else {
            self.below.clone()
        };
        let val = if self.tier == 0 {
            payload::sum(self.vals.values())?
        } else if self.tier == other.tier {
            let local = below.combine(self.own())?.combine(other.own())?;
            self.val.join(&other.val).join(&local)
        } else {
            self.val.join(&below.combine(self.own())?)
        };
        self.below = below;
        self.val = val;
        Ok(self)
    }

    /// Drops tokens addressed to `other` that `other` has provably acquired:
    /// either its slot for the source is newer than the token, or it has no
    /// slot for the source and its destination clock has moved past it.
    pub fn discard_tokens(mut self, other: &Self) -> Self {
        self.tokens.retain(|(src, dst), tok| {
            if *dst != other.id {
                return true;
            }
            let acquired = match other.slots.get(src) {
                Some(slot) => slot.dck > tok.ck.dck,
                None => other.dck > tok.ck.dck,
            };
            !acquired
        });
        self
    }

    /// Moves the own value into a token when `other` holds a slot for this
    /// node at the current source clock.
    pub fn create_token(mut self, other: &Self) -> Result<Self, Error> {
        if let Some(slot) = other.slots.get(&self.id) {
            if slot.sck == self.sck {
                let n = std::mem::replace(
                    self.vals.get_mut(&self.id).expect("own vals entry"),
                    P::zero(),
                );
                self.tokens.insert(
                    (self.id.clone(), other.id.clone()),
                    Token { ck: *slot, n },
                );
                self.sck = self
                    .sck
                    .checked_add(1)
                    .ok_or_else(|| Error::ClockOverflow(self.id.clone()))?;
            }
        }
        Ok(self)
    }

    /// Keeps copies of the tokens a higher tier node created for other
    /// destinations, so the handoff can complete without that node. Per
    /// `(src, dst)` the entry with the larger source clock wins.
    pub fn cache_tokens(mut self, other: &Self) -> Self {
        if self.tier < other.tier {
            for ((src, dst), tok) in &other.tokens {
                if *src != other.id || *dst == self.id {
                    continue;
                }
                let key = (src.clone(), dst.clone());
                match self.tokens.get(&key) {
                    Some(mine) if mine.ck.sck >= tok.ck.sck => {}
                    _ => {
                        self.tokens.insert(key, tok.clone());
                    }
                }
            }
        }
        self
    }

    /// The part of this state a node `dst` at `dst_tier` can use. Only valid
    /// when every node a client hands off to has the same tier.
    pub fn view(&self, dst: &NodeId, dst_tier: Tier) -> Self {
        let mut out = self.clone();
        if self.tier < dst_tier {
            out.slots.retain(|k, _| k == dst);
        } else if self.tier > dst_tier {
            out.slots.clear();
        }
        out
    }

    /// True once nothing is left to hand off: the own entry is zero and no
    /// token is held.
    pub fn can_retire(&self) -> bool {
        self.own().is_zero() && self.tokens.is_empty()
    }

    /// Relaxed retirement test: the own entry is zero and every own token has
    /// been seen cached at another node, which will finish the handoff.
    pub fn can_retire_cached(&self, evidence: &RetirementEvidence) -> bool {
        self.own().is_zero()
            && self
                .own_token_ids()
                .all(|id| evidence.contains(&id))
    }

    pub fn token_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.tokens
            .iter()
            .map(|((s, d), tok)| TokenId::new(s.clone(), d.clone(), tok.ck))
    }

    /// Tokens created by this node (as opposed to cached ones).
    pub fn own_token_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.token_ids().filter(|t| t.src == self.id)
    }

    /// Slots held here, as `(src, id, sck, dck)`.
    pub fn slot_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.slots
            .iter()
            .map(|(s, ck)| TokenId::new(s.clone(), self.id.clone(), *ck))
    }

    /// Total map entries across `vals`, `slots` and `tokens`.
    pub fn entry_count(&self) -> usize {
        self.vals.len() + self.slots.len() + self.tokens.len()
    }

    /// Structural invariant violations, empty for well-formed states.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.vals.contains_key(&self.id) {
            out.push(format!("vals lacks own entry {}", self.id));
        }
        if self.tier != 0 && self.vals.keys().any(|k| *k != self.id) {
            out.push(format!(
                "tier {} node {} has foreign vals entries",
                self.tier, self.id
            ));
        }
        if self.slots.contains_key(&self.id) {
            out.push(format!("node {} holds a slot for itself", self.id));
        }
        for (s, d) in self.tokens.keys() {
            if s == d {
                out.push(format!("token ({s}, {d}) has equal source and destination"));
            }
        }
        out
    }
}

impl HandoffState<Nat> {
    pub fn incr(&self) -> Result<Self, Error> {
        self.mutate(&Nat::ONE)
    }
}

impl HandoffState<MapPayload> {
    /// Increments the named counter.
    pub fn incr_key(&self, key: &str) -> Result<Self, Error> {
        self.mutate(&MapPayload::single(key, 1))
    }

    pub fn fetch_key(&self, key: &str) -> u64 {
        self.val.get(key)
    }
}

impl HandoffState<PnPayload> {
    pub fn incr(&self) -> Result<Self, Error> {
        self.mutate(&PnPayload::increment())
    }

    pub fn decr(&self) -> Result<Self, Error> {
        self.mutate(&PnPayload::decrement())
    }

    pub fn fetch_value(&self) -> i128 {
        self.val.value()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type S = HandoffState<Nat>;

    fn id(s: &str) -> NodeId {
        NodeId::new(s).unwrap()
    }

    fn nat_vals(entries: &[(&str, u64)]) -> BTreeMap<NodeId, Nat> {
        entries.iter().map(|(k, v)| (id(k), Nat(*v))).collect()
    }

    fn incr_n(mut s: S, n: u64) -> S {
        for _ in 0..n {
            s = s.incr().unwrap();
        }
        s
    }

    /// A at tier 1 with 9 increments handing off to B at tier 0.
    struct Trace {
        a0: S,
        b0: S,
        b1: S,
        a1: S,
        b2: S,
        a2: S,
    }

    fn handoff_trace() -> Trace {
        let a0 = incr_n(S::init(id("A"), 1), 9);
        let b0 = S::init(id("B"), 0);
        let b1 = b0.merge(&a0).unwrap();
        let a1 = a0.merge(&b1).unwrap();
        let b2 = b1.merge(&a1).unwrap();
        let a2 = a1.merge(&b2).unwrap();
        Trace { a0, b0, b1, a1, b2, a2 }
    }

    #[test]
    fn node_id_rejects_separator_and_empty() {
        assert!(NodeId::new("a|b").is_err());
        assert!(NodeId::new("").is_err());
        assert_eq!(id("dc0-t1-3").as_str(), "dc0-t1-3");
    }

    #[test]
    fn init_shape() {
        let a = S::init(id("A"), 1);
        assert_eq!(a.tier, 1);
        assert_eq!(a.val, Nat(0));
        assert_eq!(a.below, Nat(0));
        assert_eq!((a.sck, a.dck), (0, 0));
        assert_eq!(a.vals, nat_vals(&[("A", 0)]));
        assert!(a.slots.is_empty() && a.tokens.is_empty());
        assert_eq!(*a.fetch(), Nat(0));
        assert_eq!(S::init(id("B"), 0).tier, 0);
    }

    #[test]
    fn incr_moves_val_and_own_entry() {
        let a = S::init(id("A"), 1).incr().unwrap();
        assert_eq!(a.val, Nat(1));
        assert_eq!(a.vals, nat_vals(&[("A", 1)]));
        let a = incr_n(S::init(id("A"), 1), 9);
        assert_eq!(a.val, Nat(9));
        assert_eq!(*a.fetch(), Nat(9));
        assert_eq!(a.vals, nat_vals(&[("A", 9)]));
        assert_eq!(*incr_n(S::init(id("A"), 1), 3).fetch(), Nat(3));
    }

    #[test]
    fn incr_after_token_creation() {
        let t = handoff_trace();
        let a = t.a1.incr().unwrap();
        assert_eq!(a.val, Nat(10));
        assert_eq!(a.vals, nat_vals(&[("A", 1)]));
    }

    #[test]
    fn four_step_handoff() {
        let t = handoff_trace();
        assert_eq!(t.b0.val, Nat(0));

        // step 1: slot at B
        assert_eq!(t.b1.slots, BTreeMap::from([(id("A"), ClockPair::new(0, 0))]));
        assert_eq!(t.b1.dck, 1);
        assert_eq!(t.b1.val, Nat(0));

        // step 2: token at A
        assert_eq!(
            t.a1.tokens,
            BTreeMap::from([(
                (id("A"), id("B")),
                Token { ck: ClockPair::new(0, 0), n: Nat(9) }
            )])
        );
        assert_eq!(t.a1.vals, nat_vals(&[("A", 0)]));
        assert_eq!(t.a1.sck, 1);
        assert_eq!(t.a1.val, Nat(9));

        // step 3: B acquires
        assert_eq!(t.b2.vals, nat_vals(&[("B", 9)]));
        assert!(t.b2.slots.is_empty());
        assert_eq!(t.b2.val, Nat(9));

        // step 4: A drops the token
        assert!(t.a2.tokens.is_empty());
        assert_eq!(t.a2.below, Nat(9));
        assert_eq!(t.a2.val, Nat(9));
        assert_eq!(t.a2.vals, nat_vals(&[("A", 0)]));
        assert!(t.a0.invariant_violations().is_empty());
        assert!(t.a2.invariant_violations().is_empty());
    }

    #[test]
    fn duplicate_delivery_is_a_no_op() {
        let t = handoff_trace();
        assert_eq!(t.b1.merge(&t.a0).unwrap(), t.b1);
        assert_eq!(t.a1.merge(&t.b1).unwrap(), t.a1);
        assert_eq!(t.b2.merge(&t.a1).unwrap(), t.b2);
        assert_eq!(t.a2.merge(&t.b2).unwrap(), t.a2);
    }

    #[test]
    fn same_id_merge_is_rejected() {
        let a = S::init(id("A"), 1);
        assert_eq!(a.merge(&a.clone()), Err(Error::SameIdMerge(id("A"))));
    }

    #[test]
    fn fill_slots_cases() {
        let t = handoff_trace();
        let filled = t.b1.clone().fill_slots(&t.a1).unwrap();
        assert_eq!(filled.vals, nat_vals(&[("B", 9)]));
        assert!(filled.slots.is_empty());

        let no_tokens = S::init(id("J"), 1);
        assert_eq!(t.b1.clone().fill_slots(&no_tokens).unwrap(), t.b1);

        let mut wrong_clock = t.a1.clone();
        wrong_clock
            .tokens
            .get_mut(&(id("A"), id("B")))
            .unwrap()
            .ck = ClockPair::new(1, 0);
        assert_eq!(t.b1.clone().fill_slots(&wrong_clock).unwrap(), t.b1);
    }

    #[test]
    fn discard_slot_cases() {
        let mut i = S::init(id("I"), 0);
        i.slots.insert(id("J"), ClockPair::new(2, 7));
        let mut j = S::init(id("J"), 1);

        j.sck = 3;
        assert!(i.clone().discard_slot(&j).slots.is_empty());
        j.sck = 2;
        assert_eq!(i.clone().discard_slot(&j), i);
        let k = S::init(id("K"), 1);
        assert_eq!(i.clone().discard_slot(&k), i);
    }

    #[test]
    fn create_slot_cases() {
        let t = handoff_trace();
        let b = t.b0.clone().create_slot(&t.a0).unwrap();
        assert_eq!(b.slots, BTreeMap::from([(id("A"), ClockPair::new(0, 0))]));
        assert_eq!(b.dck, 1);

        let empty = S::init(id("A"), 1);
        assert_eq!(t.b0.clone().create_slot(&empty).unwrap(), t.b0);

        let peer = incr_n(S::init(id("C"), 0), 2);
        assert_eq!(t.b0.clone().create_slot(&peer).unwrap(), t.b0);

        // an existing slot is never replaced
        assert_eq!(t.b1.clone().create_slot(&t.a0).unwrap(), t.b1);
    }

    #[test]
    fn merge_vectors_cases() {
        let mut i = S::init(id("I"), 0);
        i.vals = nat_vals(&[("I", 3), ("J", 1)]);
        let mut j = S::init(id("J"), 0);
        j.vals = nat_vals(&[("I", 2), ("J", 4), ("K", 5)]);
        let merged = i.clone().merge_vectors(&j);
        assert_eq!(merged.vals, nat_vals(&[("I", 3), ("J", 4), ("K", 5)]));

        let upper = incr_n(S::init(id("U"), 1), 4);
        assert_eq!(i.clone().merge_vectors(&upper), i);
        assert_eq!(i.clone().merge_vectors(&i.clone()), i);
    }

    #[test]
    fn aggregate_cases() {
        let t = handoff_trace();
        let a = t.a1.clone().aggregate(&t.b2).unwrap();
        assert_eq!(a.below, Nat(9));
        assert_eq!(a.val, Nat(9));

        // tier 0 sums its vector regardless of the other side
        let mut z = S::init(id("Z"), 0);
        z.vals = nat_vals(&[("Z", 4), ("Y", 6)]);
        let other = incr_n(S::init(id("Q"), 2), 100);
        assert_eq!(z.aggregate(&other).unwrap().val, Nat(10));

        // equal tiers: b = max(2, 4) = 4, v = max(3, 5, 4 + 1 + 0) = 5
        let mut i = S::init(id("I"), 1);
        i.below = Nat(2);
        i.val = Nat(3);
        i.vals = nat_vals(&[("I", 1)]);
        let mut j = S::init(id("J"), 1);
        j.below = Nat(4);
        j.val = Nat(5);
        let out = i.aggregate(&j).unwrap();
        assert_eq!((out.below, out.val), (Nat(4), Nat(5)));
    }

    #[test]
    fn discard_tokens_cases() {
        let t = handoff_trace();
        assert!(t.a1.clone().discard_tokens(&t.b2).tokens.is_empty());
        assert_eq!(t.a1.clone().discard_tokens(&t.b1), t.a1);

        let mut elsewhere = t.b2.clone();
        elsewhere.id = id("K");
        elsewhere.vals = nat_vals(&[("K", 9)]);
        assert_eq!(t.a1.clone().discard_tokens(&elsewhere), t.a1);
    }

    #[test]
    fn create_token_cases() {
        let t = handoff_trace();
        let a = t.a0.clone().create_token(&t.b1).unwrap();
        assert_eq!(a.tokens.len(), 1);
        assert_eq!(a.vals, nat_vals(&[("A", 0)]));
        assert_eq!(a.sck, 1);

        // replaying B1 once sck has moved on does not mint a second token
        assert_eq!(t.a1.clone().create_token(&t.b1).unwrap(), t.a1);
        assert_eq!(t.a0.clone().create_token(&t.b0).unwrap(), t.a0);
    }

    #[test]
    fn cache_tokens_cases() {
        let mut i = S::init(id("I"), 1);
        let mut j = S::init(id("J"), 2);
        j.tokens.insert(
            (id("J"), id("K")),
            Token { ck: ClockPair::new(4, 1), n: Nat(6) },
        );
        j.tokens.insert(
            (id("X"), id("K")),
            Token { ck: ClockPair::new(0, 0), n: Nat(2) },
        );
        let cached = i.clone().cache_tokens(&j);
        assert_eq!(cached.tokens.len(), 1);
        assert_eq!(cached.tokens[&(id("J"), id("K"))].n, Nat(6));

        i.tokens.insert(
            (id("J"), id("K")),
            Token { ck: ClockPair::new(3, 0), n: Nat(5) },
        );
        let newer = i.clone().cache_tokens(&j);
        assert_eq!(
            newer.tokens[&(id("J"), id("K"))],
            Token { ck: ClockPair::new(4, 1), n: Nat(6) }
        );

        // tokens addressed to the caching node itself are not cached
        let mut to_me = S::init(id("J"), 2);
        to_me.tokens.insert(
            (id("J"), id("I")),
            Token { ck: ClockPair::new(0, 0), n: Nat(1) },
        );
        assert!(S::init(id("I"), 1).cache_tokens(&to_me).tokens.is_empty());

        let low = S::init(id("L"), 2);
        assert_eq!(low.clone().cache_tokens(&j), low);
    }

    #[test]
    fn view_cases() {
        let mut b = S::init(id("B"), 0);
        b.slots.insert(id("A"), ClockPair::new(0, 0));
        b.slots.insert(id("X"), ClockPair::new(5, 3));
        let v = b.view(&id("A"), 1);
        assert_eq!(v.slots, BTreeMap::from([(id("A"), ClockPair::new(0, 0))]));
        assert_eq!(v.vals, b.vals);

        let mut a = S::init(id("A"), 1);
        a.slots.insert(id("C"), ClockPair::new(1, 1));
        assert!(a.view(&id("B"), 0).slots.is_empty());
        assert_eq!(b.view(&id("Z"), 0), b);
    }

    #[test]
    fn retirement_predicates() {
        let t = handoff_trace();
        assert!(t.a2.can_retire());
        assert!(!t.a1.can_retire());
        assert!(S::init(id("F"), 2).can_retire());

        let mut ev = RetirementEvidence::new(id("A"));
        assert!(!t.a1.can_retire_cached(&ev));

        // a tier 1 peer of B caching A's token
        let mut cacher = S::init(id("K"), 0);
        cacher.tokens = t.a1.tokens.clone();
        ev.record(&id("K"), &cacher);
        assert_eq!(ev.len(), 1);
        assert!(t.a1.can_retire_cached(&ev));

        // the token's destination holding a copy is not evidence
        let mut from_dst = RetirementEvidence::new(id("A"));
        from_dst.record(&id("B"), &cacher);
        assert!(from_dst.is_empty());

        let busy = t.a1.incr().unwrap();
        assert!(!busy.can_retire_cached(&ev));
    }

    #[test]
    fn map_and_pn_counters() {
        let m = HandoffState::<MapPayload>::init(id("A"), 1)
            .incr_key("x")
            .unwrap()
            .incr_key("y")
            .unwrap()
            .incr_key("x")
            .unwrap();
        assert_eq!(m.fetch_key("x"), 2);
        assert_eq!(m.fetch_key("y"), 1);
        assert_eq!(m.fetch_key("z"), 0);

        let p = HandoffState::<PnPayload>::init(id("A"), 1)
            .incr()
            .unwrap()
            .decr()
            .unwrap()
            .decr()
            .unwrap();
        assert_eq!(p.fetch_value(), -1);
    }
}
