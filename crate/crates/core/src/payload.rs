//! Payload algebras carried by a handoff counter.
//!
//! A handoff counter works over any commutative monoid `(M, ⊕, 𝟎)` that is
//! also a join-semilattice `(M, ⊔, ⊑)` whose least element is `𝟎`, provided
//! `x ⊔ y ⊑ x ⊕ y` for all `x, y`. Values are moved between nodes by zeroing
//! the origin and `⊕`-adding at the destination; reports are aggregated with
//! both `⊕` and `⊔`.
//!
//! Three instances are provided:
//!  - [`Nat`]: plain counters, `(ℕ, +, 0, max, ≤)`.
//!  - [`MapPayload`]: a map of named counters, key-union with `+` / `max`.
//!  - [`PnPayload`]: a counter that can also be decremented, stored as a map
//!    restricted to the keys `p` and `n`.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `⊕` left the 64-bit range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("payload arithmetic overflowed 64 bits")]
pub struct Overflow;

/// The algebraic contract required of a handoff counter payload.
///
/// Laws (checked by [`laws::check`]):
///  - `combine` is associative and commutative with identity `zero`;
///  - `join` is associative, commutative and idempotent;
///  - `leq` is the order induced by `join`;
///  - `bottom() == zero()`;
///  - `join(x, y) ⊑ combine(x, y)`.
pub trait Payload:
    Clone + Eq + fmt::Debug + Serialize + DeserializeOwned + Send + Sync + 'static
{
    /// Identity of `⊕`.
    fn zero() -> Self;

    /// `x ⊕ y`. Fails instead of wrapping.
    fn combine(&self, other: &Self) -> Result<Self, Overflow>;

    /// `x ⊔ y`.
    fn join(&self, other: &Self) -> Self;

    /// `x ⊑ y`, i.e. `x ⊔ y = y`.
    fn leq(&self, other: &Self) -> bool {
        self.join(other) == *other
    }

    /// Least element of the semilattice. Always equal to [`Payload::zero`].
    fn bottom() -> Self {
        Self::zero()
    }

    fn is_zero(&self) -> bool {
        *self == Self::zero()
    }

    /// Number of map entries this payload occupies, for size metrics.
    fn entry_count(&self) -> usize {
        1
    }
}

/// `⊕`-fold of an iterator of payloads, starting from `𝟎`.
pub fn sum<'a, P: Payload>(items: impl IntoIterator<Item = &'a P>) -> Result<P, Overflow> {
    items
        .into_iter()
        .try_fold(P::zero(), |acc, item| acc.combine(item))
}

/// A non-negative integer counter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Nat(pub u64);

impl Nat {
    pub const ONE: Nat = Nat(1);

    pub fn get(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Nat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u64> for Nat {
    fn from(v: u64) -> Self {
        Nat(v)
    }
}

impl Payload for Nat {
    fn zero() -> Self {
        Nat(0)
    }

    fn combine(&self, other: &Self) -> Result<Self, Overflow> {
        self.0.checked_add(other.0).map(Nat).ok_or(Overflow)
    }

    fn join(&self, other: &Self) -> Self {
        Nat(self.0.max(other.0))
    }

    fn leq(&self, other: &Self) -> bool {
        self.0 <= other.0
    }

    fn is_zero(&self) -> bool {
        self.0 == 0
    }
}

/// A map from counter names to non-negative counts.
///
/// Absent keys read as zero and zero entries are never stored, so structural
/// equality coincides with semantic equality.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, u64>", into = "BTreeMap<String, u64>")]
pub struct MapPayload {
    entries: BTreeMap<String, u64>,
}

impl MapPayload {
    pub fn new() -> Self {
        Self::default()
    }

    /// `{key ↦ count}`, or the empty map when `count` is zero.
    pub fn single(key: impl Into<String>, count: u64) -> Self {
        Self::from_entries([(key.into(), count)])
    }

    /// Builds a normalized map; zero counts are dropped and repeated keys
    /// keep the last value.
    pub fn from_entries<K: Into<String>>(entries: impl IntoIterator<Item = (K, u64)>) -> Self {
        let entries = entries
            .into_iter()
            .map(|(k, v)| (k.into(), v))
            .filter(|(_, v)| *v != 0)
            .collect();
        Self { entries }
    }

    pub fn get(&self, key: &str) -> u64 {
        self.entries.get(key).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl TryFrom<BTreeMap<String, u64>> for MapPayload {
    type Error = String;

    fn try_from(entries: BTreeMap<String, u64>) -> Result<Self, Self::Error> {
        if let Some((k, _)) = entries.iter().find(|(_, v)| **v == 0) {
            return Err(format!("map payload entry {k:?} is zero; zero entries must be omitted"));
        }
        Ok(Self { entries })
    }
}

impl From<MapPayload> for BTreeMap<String, u64> {
    fn from(m: MapPayload) -> Self {
        m.entries
    }
}

impl Payload for MapPayload {
    fn zero() -> Self {
        Self::new()
    }

    fn combine(&self, other: &Self) -> Result<Self, Overflow> {
        let mut entries = self.entries.clone();
        for (k, v) in &other.entries {
            let slot = entries.entry(k.clone()).or_insert(0);
            *slot = slot.checked_add(*v).ok_or(Overflow)?;
        }
        Ok(Self { entries })
    }

    fn join(&self, other: &Self) -> Self {
        let mut entries = self.entries.clone();
        for (k, v) in &other.entries {
            let slot = entries.entry(k.clone()).or_insert(0);
            *slot = (*slot).max(*v);
        }
        Self { entries }
    }

    fn leq(&self, other: &Self) -> bool {
        self.entries.iter().all(|(k, v)| *v <= other.get(k))
    }

    fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    fn entry_count(&self) -> usize {
        self.entries.len()
    }
}

/// Reads a `{p, n}` map as `p − n`; absent keys count as zero.
pub fn pn_fetch(payload: &MapPayload) -> i128 {
    i128::from(payload.get(PnPayload::P)) - i128::from(payload.get(PnPayload::N))
}

/// Increment/decrement counter: a [`MapPayload`] over the keys `p` and `n`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "MapPayload", into = "MapPayload")]
pub struct PnPayload(MapPayload);

impl PnPayload {
    pub const P: &'static str = "p";
    pub const N: &'static str = "n";

    pub fn new(increments: u64, decrements: u64) -> Self {
        PnPayload(MapPayload::from_entries([(Self::P, increments), (Self::N, decrements)]))
    }

    pub fn increment() -> Self {
        Self::new(1, 0)
    }

    pub fn decrement() -> Self {
        Self::new(0, 1)
    }

    pub fn increments(&self) -> u64 {
        self.0.get(Self::P)
    }

    pub fn decrements(&self) -> u64 {
        self.0.get(Self::N)
    }

    /// Reported value, `p − n`.
    pub fn value(&self) -> i128 {
        pn_fetch(&self.0)
    }

    pub fn as_map(&self) -> &MapPayload {
        &self.0
    }
}

impl TryFrom<MapPayload> for PnPayload {
    type Error = String;

    fn try_from(m: MapPayload) -> Result<Self, Self::Error> {
        let stray = m
            .iter()
            .find(|(k, _)| *k != Self::P && *k != Self::N)
            .map(|(k, _)| k.to_string());
        match stray {
            Some(k) => Err(format!("pn payload has key {k:?}; only \"p\" and \"n\" are allowed")),
            None => Ok(PnPayload(m)),
        }
    }
}

impl From<PnPayload> for MapPayload {
    fn from(p: PnPayload) -> Self {
        p.0
    }
}

impl Payload for PnPayload {
    fn zero() -> Self {
        PnPayload(MapPayload::new())
    }

    fn combine(&self, other: &Self) -> Result<Self, Overflow> {
        self.0.combine(&other.0).map(PnPayload)
    }

    fn join(&self, other: &Self) -> Self {
        PnPayload(self.0.join(&other.0))
    }

    fn leq(&self, other: &Self) -> bool {
        self.0.leq(&other.0)
    }

    fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    fn entry_count(&self) -> usize {
        self.0.entry_count()
    }
}

/// Executable law sheet for [`Payload`] instances.
pub mod laws {
    use super::Payload;

    /// Checks every payload law on the triple `(a, b, c)` and returns the
    /// names of the laws that failed. Overflow counts as a failure.
    pub fn check<P: Payload>(a: &P, b: &P, c: &P) -> Vec<&'static str> {
        let mut failed = Vec::new();
        let mut expect = |ok: bool, name: &'static str| {
            if !ok {
                failed.push(name);
            }
        };
        let plus = |x: &P, y: &P| x.combine(y).ok();

        expect(
            plus(a, b).and_then(|ab| plus(&ab, c)) == plus(b, c).and_then(|bc| plus(a, &bc)),
            "combine associative",
        );
        expect(plus(a, b) == plus(b, a), "combine commutative");
        expect(plus(a, &P::zero()).as_ref() == Some(a), "combine identity");

        expect(a.join(b).join(c) == a.join(&b.join(c)), "join associative");
        expect(a.join(b) == b.join(a), "join commutative");
        expect(a.join(a) == *a, "join idempotent");

        expect(a.leq(b) == (a.join(b) == *b), "leq induced by join");
        expect(a.leq(a), "leq reflexive");
        expect(!(a.leq(b) && b.leq(a)) || a == b, "leq antisymmetric");
        expect(!(a.leq(b) && b.leq(c)) || a.leq(c), "leq transitive");

        expect(P::bottom() == P::zero(), "bottom is zero");
        expect(P::bottom().leq(a), "bottom is least");
        expect(
            plus(a, b).is_some_and(|ab| a.join(b).leq(&ab)),
            "join below combine",
        );
        failed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(entries: &[(&str, u64)]) -> MapPayload {
        MapPayload::from_entries(entries.iter().map(|(k, v)| (*k, *v)))
    }

    #[test]
    fn nat_operations() {
        assert_eq!(Nat(3).combine(&Nat(4)), Ok(Nat(7)));
        assert_eq!(Nat(3).join(&Nat(4)), Nat(4));
        assert!(Nat(3).leq(&Nat(4)));
        assert!(Nat(3).join(&Nat(4)).leq(&Nat(3).combine(&Nat(4)).unwrap()));
        assert_eq!(Nat::bottom(), Nat::zero());
    }

    #[test]
    fn nat_overflow_is_an_error() {
        assert_eq!(Nat(u64::MAX).combine(&Nat(1)), Err(Overflow));
    }

    #[test]
    fn map_combine_and_join() {
        let x = m(&[("a", 2)]);
        let y = m(&[("a", 3), ("b", 1)]);
        assert_eq!(x.combine(&y).unwrap(), m(&[("a", 5), ("b", 1)]));
        assert_eq!(x.join(&y), m(&[("a", 3), ("b", 1)]));
        assert_eq!(MapPayload::zero().combine(&y).unwrap(), y);
    }

    #[test]
    fn map_normalizes_zero_entries() {
        assert_eq!(m(&[("a", 0), ("b", 1)]), m(&[("b", 1)]));
        assert!(MapPayload::single("a", 0).is_zero());
        let err = serde_json::from_str::<MapPayload>(r#"{"a":0}"#).unwrap_err();
        assert!(err.to_string().contains("zero"));
    }

    #[test]
    fn map_leq_is_pointwise() {
        assert!(m(&[("a", 1)]).leq(&m(&[("a", 1), ("b", 2)])));
        assert!(!m(&[("a", 2)]).leq(&m(&[("a", 1), ("b", 2)])));
        assert!(!m(&[("c", 1)]).leq(&m(&[("a", 1)])));
    }

    #[test]
    fn pn_fetch_reads_difference() {
        assert_eq!(pn_fetch(&m(&[("p", 2), ("n", 1)])), 1);
        assert_eq!(pn_fetch(&MapPayload::new()), 0);
        assert_eq!(pn_fetch(&m(&[("n", 3)])), -3);
        assert_eq!(PnPayload::new(5, 7).value(), -2);
    }

    #[test]
    fn pn_rejects_foreign_keys() {
        assert!(serde_json::from_str::<PnPayload>(r#"{"p":1,"x":2}"#).is_err());
        let ok: PnPayload = serde_json::from_str(r#"{"n":2,"p":1}"#).unwrap();
        assert_eq!(ok, PnPayload::new(1, 2));
    }

    #[test]
    fn sum_folds_from_zero() {
        assert_eq!(sum([&Nat(1), &Nat(2), &Nat(3)]), Ok(Nat(6)));
        assert_eq!(sum::<Nat>([]), Ok(Nat(0)));
    }

    #[test]
    fn laws_hold_on_fixed_samples() {
        assert!(laws::check(&Nat(0), &Nat(5), &Nat(9)).is_empty());
        let (a, b, c) = (m(&[("a", 1)]), m(&[("a", 3), ("b", 1)]), m(&[]));
        assert!(laws::check(&a, &b, &c).is_empty());
        let (a, b, c) = (PnPayload::new(1, 0), PnPayload::new(0, 4), PnPayload::new(2, 2));
        assert!(laws::check(&a, &b, &c).is_empty());
    }
}
