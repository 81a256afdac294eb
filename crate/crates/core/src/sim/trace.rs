//! Run traces, stored as JSON lines.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::payload::Payload;
use crate::state::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropReason {
    /// Lost by the channel.
    Loss,
    /// The link was partitioned when the message was sent.
    Partition,
    /// The receiver was down on arrival.
    Crashed,
    /// The receiver had retired.
    Retired,
    /// Still in flight when the run switched to quiescence.
    Cutoff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", bound = "P: Payload")]
pub enum EventKind<P> {
    Incr {
        node: NodeId,
        delta: P,
    },
    Fetch {
        node: NodeId,
        value: P,
    },
    Send {
        from: NodeId,
        to: NodeId,
        msg: u64,
        /// Encoded size, or 0 when byte metrics are off.
        bytes: u64,
        slots: usize,
    },
    Receive {
        from: NodeId,
        to: NodeId,
        msg: u64,
        changed: bool,
    },
    Drop {
        from: NodeId,
        to: NodeId,
        msg: u64,
        reason: DropReason,
    },
    Crash {
        node: NodeId,
    },
    Recover {
        node: NodeId,
    },
    Flush {
        node: NodeId,
    },
    Retire {
        node: NodeId,
        /// Retired on the strength of cached tokens rather than an empty
        /// token map.
        cached: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "P: Payload")]
pub struct TraceEvent<P> {
    pub step: u64,
    #[serde(flatten)]
    pub kind: EventKind<P>,
}

pub fn write_jsonl<P: Payload>(
    events: &[TraceEvent<P>],
    mut out: impl Write,
) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<P: Payload>(input: impl BufRead) -> Result<Vec<TraceEvent<P>>, String> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", n + 1))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payload::{MapPayload, Nat};

    fn id(s: &str) -> NodeId {
        NodeId::new(s).unwrap()
    }

    #[test]
    fn line_format() {
        let e = TraceEvent {
            step: 3,
            kind: EventKind::<Nat>::Drop {
                from: id("A"),
                to: id("B"),
                msg: 9,
                reason: DropReason::Loss,
            },
        };
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"step":3,"kind":"drop","from":"A","to":"B","msg":9,"reason":"loss"}"#
        );
    }

    #[test]
    fn round_trip() {
        let events = vec![
            TraceEvent {
                step: 0,
                kind: EventKind::Incr {
                    node: id("A"),
                    delta: MapPayload::single("x", 1),
                },
            },
            TraceEvent {
                step: 1,
                kind: EventKind::Fetch {
                    node: id("A"),
                    value: MapPayload::single("x", 1),
                },
            },
            TraceEvent {
                step: 1,
                kind: EventKind::Retire {
                    node: id("A"),
                    cached: true,
                },
            },
        ];
        let mut buf = Vec::new();
        write_jsonl(&events, &mut buf).unwrap();
        assert_eq!(read_jsonl::<MapPayload>(&buf[..]).unwrap(), events);
        assert!(read_jsonl::<Nat>(&b"{\"step\":1}\n"[..]).is_err());
    }
}
