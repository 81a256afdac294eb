//! Canonical JSON encoding of replica states.
//!
//! A state is a JSON object with the fields `below, dck, id, sck, slots, tier,
//! tokens, val, vals`. Tokens are keyed by `"src|dst"`. Object keys are always
//! emitted in lexicographic order, so equal states encode to identical bytes.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;
use crate::gcounter::GCounterState;
use crate::payload::Payload;
use crate::state::{ClockPair, HandoffState, NodeId, Tier, Token};

#[derive(Serialize)]
struct WireRef<'a, P> {
    below: &'a P,
    dck: u64,
    id: &'a NodeId,
    sck: u64,
    slots: &'a BTreeMap<NodeId, ClockPair>,
    tier: Tier,
    tokens: BTreeMap<String, &'a Token<P>>,
    val: &'a P,
    vals: &'a BTreeMap<NodeId, P>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Wire<P> {
    below: P,
    dck: u64,
    id: NodeId,
    sck: u64,
    slots: BTreeMap<NodeId, ClockPair>,
    tier: Tier,
    tokens: BTreeMap<String, Token<P>>,
    val: P,
    vals: BTreeMap<NodeId, P>,
}

fn token_key(src: &NodeId, dst: &NodeId) -> String {
    format!("{src}|{dst}")
}

fn parse_token_key(key: &str) -> Result<(NodeId, NodeId), String> {
    let (src, dst) = key
        .split_once('|')
        .ok_or_else(|| format!("token key {key:?} is not of the form \"src|dst\""))?;
    let src = NodeId::new(src).map_err(|e| e.to_string())?;
    let dst = NodeId::new(dst).map_err(|e| e.to_string())?;
    Ok((src, dst))
}

impl<P: Payload> Serialize for HandoffState<P> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        WireRef {
            below: &self.below,
            dck: self.dck,
            id: &self.id,
            sck: self.sck,
            slots: &self.slots,
            tier: self.tier,
            tokens: self
                .tokens
                .iter()
                .map(|((src, dst), tok)| (token_key(src, dst), tok))
                .collect(),
            val: &self.val,
            vals: &self.vals,
        }
        .serialize(s)
    }
}

impl<'de, P: Payload> Deserialize<'de> for HandoffState<P> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let w = Wire::<P>::deserialize(d)?;
        let tokens = w
            .tokens
            .into_iter()
            .map(|(k, v)| parse_token_key(&k).map(|key| (key, v)))
            .collect::<Result<_, _>>()
            .map_err(D::Error::custom)?;
        let state = HandoffState {
            id: w.id,
            tier: w.tier,
            val: w.val,
            below: w.below,
            vals: w.vals,
            sck: w.sck,
            dck: w.dck,
            slots: w.slots,
            tokens,
        };
        let problems = state.invariant_violations();
        if !problems.is_empty() {
            return Err(D::Error::custom(problems.join("; ")));
        }
        Ok(state)
    }
}

impl<P: Payload> HandoffState<P> {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("state serialization is infallible")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, Error> {
        serde_json::from_slice(bytes).map_err(|e| Error::Decode(e.to_string()))
    }

    /// Length of [`HandoffState::encode`] without allocating the buffer.
    pub fn encoded_len(&self) -> usize {
        encoded_len(self)
    }
}

impl GCounterState {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("state serialization is infallible")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, Error> {
        let state: GCounterState =
            serde_json::from_slice(bytes).map_err(|e| Error::Decode(e.to_string()))?;
        if !state.entries.contains_key(&state.id) {
            return Err(Error::Decode(format!(
                "entries lack own id {}",
                state.id
            )));
        }
        Ok(state)
    }

    pub fn encoded_len(&self) -> usize {
        encoded_len(self)
    }
}

struct Counter(usize);

impl std::io::Write for Counter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0 += buf.len();
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn encoded_len<T: Serialize>(value: &T) -> usize {
    let mut counter = Counter(0);
    serde_json::to_writer(&mut counter, value).expect("state serialization is infallible");
    counter.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payload::{MapPayload, Nat, PnPayload};

    fn id(s: &str) -> NodeId {
        NodeId::new(s).unwrap()
    }

    fn handed_off() -> HandoffState<Nat> {
        let mut a = HandoffState::<Nat>::init(id("A"), 1);
        for _ in 0..9 {
            a = a.incr().unwrap();
        }
        let b = HandoffState::<Nat>::init(id("B"), 0).merge(&a).unwrap();
        a.merge(&b).unwrap()
    }

    #[test]
    fn round_trip_fresh_state() {
        let a = HandoffState::<Nat>::init(id("A"), 1);
        assert_eq!(HandoffState::decode(&a.encode()).unwrap(), a);
    }

    #[test]
    fn canonical_layout() {
        let a = handed_off();
        let text = String::from_utf8(a.encode()).unwrap();
        assert_eq!(
            text,
            r#"{"below":0,"dck":0,"id":"A","sck":1,"slots":{},"tier":1,"tokens":{"A|B":{"ck":{"dck":0,"sck":0},"n":9}},"val":9,"vals":{"A":0}}"#
        );
        assert_eq!(a.encoded_len(), text.len());
    }

    #[test]
    fn equal_states_encode_identically() {
        let x = handed_off();
        let y = HandoffState::<Nat>::decode(&x.encode()).unwrap();
        assert_eq!(x.encode(), y.encode());
    }

    #[test]
    fn decode_rejects_bad_input() {
        let bytes = handed_off().encode();
        let err = HandoffState::<Nat>::decode(&bytes[..bytes.len() - 5]).unwrap_err();
        assert!(matches!(err, Error::Decode(_)));

        let no_own = br#"{"below":0,"dck":0,"id":"A","sck":0,"slots":{},"tier":1,"tokens":{},"val":0,"vals":{}}"#;
        let err = HandoffState::<Nat>::decode(no_own).unwrap_err();
        assert!(err.to_string().contains("own entry"), "{err}");

        let foreign = br#"{"below":0,"dck":0,"id":"A","sck":0,"slots":{},"tier":1,"tokens":{},"val":0,"vals":{"A":0,"B":1}}"#;
        assert!(HandoffState::<Nat>::decode(foreign).is_err());

        let bad_key = br#"{"below":0,"dck":0,"id":"A","sck":0,"slots":{},"tier":1,"tokens":{"AB":{"ck":{"dck":0,"sck":0},"n":1}},"val":0,"vals":{"A":0}}"#;
        assert!(HandoffState::<Nat>::decode(bad_key)
            .unwrap_err()
            .to_string()
            .contains("src|dst"));
    }

    #[test]
    fn generic_payloads_round_trip() {
        let m = HandoffState::<MapPayload>::init(id("A"), 0)
            .incr_key("x")
            .unwrap();
        assert_eq!(HandoffState::decode(&m.encode()).unwrap(), m);
        let p = HandoffState::<PnPayload>::init(id("A"), 2).decr().unwrap();
        assert_eq!(HandoffState::decode(&p.encode()).unwrap(), p);
    }
}
