use std::collections::{BTreeMap, HashMap};

use handoff::checker::ctv_by_tier;
use handoff::payload::laws;
use handoff::{HandoffState, MapPayload, Nat, NodeId, Payload, PnPayload, Tier};
use proptest::prelude::*;

const KEYS: [&str; 3] = ["x", "y", "z"];

fn nat() -> impl Strategy<Value = Nat> {
    (0u64..1 << 40).prop_map(Nat)
}

fn map() -> impl Strategy<Value = MapPayload> {
    prop::collection::btree_map(prop::sample::select(KEYS.to_vec()), 0u64..1000, 0..=3)
        .prop_map(MapPayload::from_entries)
}

fn pn() -> impl Strategy<Value = PnPayload> {
    (0u64..1000, 0u64..1000).prop_map(|(p, n)| PnPayload::new(p, n))
}

fn reference_map(m: &MapPayload) -> HashMap<String, u64> {
    m.iter().map(|(k, v)| (k.to_string(), v)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn nat_laws(a in nat(), b in nat(), c in nat()) {
        prop_assert_eq!(laws::check(&a, &b, &c), Vec::<&str>::new());
        prop_assert_eq!(a.combine(&b).unwrap(), Nat(a.0 + b.0));
        prop_assert_eq!(a.join(&b), Nat(a.0.max(b.0)));
        prop_assert_eq!(a.leq(&b), a.0 <= b.0);
    }

    #[test]
    fn map_laws(a in map(), b in map(), c in map()) {
        prop_assert_eq!(laws::check(&a, &b, &c), Vec::<&str>::new());
        let (ra, rb) = (reference_map(&a), reference_map(&b));
        let sum = reference_map(&a.combine(&b).unwrap());
        let join = reference_map(&a.join(&b));
        for k in KEYS {
            let x = ra.get(k).copied().unwrap_or(0);
            let y = rb.get(k).copied().unwrap_or(0);
            prop_assert_eq!(sum.get(k).copied().unwrap_or(0), x + y);
            prop_assert_eq!(join.get(k).copied().unwrap_or(0), x.max(y));
        }
        // zero entries are never stored
        prop_assert!(sum.values().all(|v| *v > 0));
        let pointwise = KEYS.iter().all(|k| ra.get(*k).copied().unwrap_or(0) <= rb.get(*k).copied().unwrap_or(0));
        prop_assert_eq!(a.leq(&b), pointwise);
    }

    #[test]
    fn pn_laws(a in pn(), b in pn(), c in pn()) {
        prop_assert_eq!(laws::check(&a, &b, &c), Vec::<&str>::new());
        let s = a.combine(&b).unwrap();
        prop_assert_eq!(s.value(), a.value() + b.value());
        prop_assert_eq!(s.increments(), a.increments() + b.increments());
        prop_assert_eq!(s.decrements(), a.decrements() + b.decrements());
    }
}

/// A small uniform-tier network: two tier 0 nodes, two tier 1 servers and
/// three tier 2 clients, each client linked to both servers.
fn network() -> (Vec<(NodeId, Tier)>, Vec<(usize, usize)>) {
    let nodes: Vec<(NodeId, Tier)> = [("Z0", 0), ("Z1", 0), ("S0", 1), ("S1", 1), ("C0", 2), ("C1", 2), ("C2", 2)]
        .iter()
        .map(|(n, t)| (NodeId::new(n).unwrap(), *t))
        .collect();
    let links = vec![
        (0, 1),
        (2, 0),
        (2, 1),
        (3, 0),
        (3, 1),
        (2, 3),
        (4, 2),
        (4, 3),
        (5, 2),
        (5, 3),
        (6, 2),
        (6, 3),
    ];
    (nodes, links)
}

#[derive(Debug, Clone)]
enum Op {
    Incr(usize),
    /// Deliver a possibly stale state over link `link` in direction `rev`.
    /// `age` counts back from the sender's latest state.
    Deliver { link: usize, rev: bool, age: usize },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        1 => (0usize..7).prop_map(Op::Incr),
        4 => (0usize..12, any::<bool>(), prop_oneof![3 => Just(0usize), 1 => 0usize..6])
            .prop_map(|(link, rev, age)| Op::Deliver { link, rev, age }),
    ]
}

struct World {
    states: Vec<HandoffState<Nat>>,
    history: Vec<Vec<HandoffState<Nat>>>,
    issued: u64,
    sampled: u64,
}

impl World {
    fn new() -> Self {
        let (nodes, _) = network();
        let states: Vec<_> = nodes
            .iter()
            .map(|(n, t)| HandoffState::<Nat>::init(n.clone(), *t))
            .collect();
        let history = states.iter().map(|s| vec![s.clone()]).collect();
        World {
            states,
            history,
            issued: 0,
            sampled: 0,
        }
    }

    fn set(&mut self, i: usize, s: HandoffState<Nat>) {
        self.history[i].push(s.clone());
        self.states[i] = s;
    }

    fn conserved(&self) -> bool {
        let refs: Vec<&HandoffState<Nat>> = self.states.iter().collect();
        ctv_by_tier(&refs).unwrap().last() == Some(&Nat(self.issued))
    }
}

/// Checks one delivery of `msg` to a replica in state `before`.
fn check_delivery(
    before: &HandoffState<Nat>,
    msg: &HandoffState<Nat>,
) -> Result<HandoffState<Nat>, TestCaseError> {
    let after = before.merge(msg).unwrap();
    // a duplicate of the same message changes nothing
    prop_assert_eq!(&after.merge(msg).unwrap(), &after);
    // val and below only grow
    prop_assert!(before.val.leq(&after.val));
    prop_assert!(before.below.leq(&after.below));
    prop_assert!(after.below.leq(&after.val));
    if after.tier == 0 {
        prop_assert_eq!(after.below, Nat(0));
        // foreign entries only change by joining another tier 0 vector
        for (k, v) in &after.vals {
            if *k == after.id {
                continue;
            }
            let old = before.vals.get(k).copied().unwrap_or(Nat(0));
            let seen = if msg.tier == 0 {
                msg.vals.get(k).copied().unwrap_or(Nat(0))
            } else {
                Nat(0)
            };
            prop_assert_eq!(*v, old.join(&seen));
        }
    } else {
        prop_assert_eq!(after.vals.keys().collect::<Vec<_>>(), vec![&after.id]);
    }
    prop_assert!(after.invariant_violations().is_empty());
    // sending only the receiver's view gives the same result
    prop_assert_eq!(&before.merge(&msg.view(&before.id, before.tier)).unwrap(), &after);
    // the encoding round-trips
    prop_assert_eq!(&HandoffState::<Nat>::decode(&after.encode()).unwrap(), &after);
    Ok(after)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn random_executions(ops in prop::collection::vec(op(), 1..80)) {
        let (_, links) = network();
        let mut w = World::new();
        for op in ops {
            match op {
                Op::Incr(i) => {
                    let next = w.states[i].incr().unwrap();
                    prop_assert_eq!(next.own().0, w.states[i].own().0 + 1);
                    w.issued += 1;
                    w.set(i, next);
                }
                Op::Deliver { link, rev, age } => {
                    let (a, b) = links[link];
                    let (from, to) = if rev { (b, a) } else { (a, b) };
                    let h = &w.history[from];
                    let msg = h[h.len() - 1 - age.min(h.len() - 1)].clone();
                    let after = check_delivery(&w.states[to], &msg)?;
                    w.sampled += 1;
                    w.set(to, after);
                }
            }
            prop_assert!(w.conserved(), "issued {} but counted otherwise", w.issued);
        }

        // fair, fresh gossip drains every handoff
        let mut rounds = 0;
        loop {
            let mut changed = false;
            for &(a, b) in &links {
                for (from, to) in [(a, b), (b, a)] {
                    let msg = w.states[from].clone();
                    let after = check_delivery(&w.states[to], &msg)?;
                    if after != w.states[to] {
                        changed = true;
                        w.set(to, after);
                    }
                }
            }
            prop_assert!(w.conserved());
            rounds += 1;
            if !changed {
                break;
            }
            prop_assert!(rounds < 50, "no quiescence after 50 rounds");
        }
        for s in &w.states {
            prop_assert_eq!(s.val, Nat(w.issued));
            prop_assert!(s.slots.is_empty() && s.tokens.is_empty(), "{s:?}");
            if s.tier != 0 {
                prop_assert_eq!(s.vals.clone(), BTreeMap::from([(s.id.clone(), Nat(0))]));
            }
        }
    }
}
