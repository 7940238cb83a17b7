//! Deterministic in-process message bus with per-party transcript capture.
//!
//! The bus never inspects payloads: senders attach a [`PayloadShape`]
//! (item counts, type tags, size classes -- no bytes) and the bus records
//! that metadata on both sides of every delivery, in a strictly increasing
//! global sequence, FIFO per channel. A party's transcript is exactly its
//! protocol view; [`view_shape`] collapses it to the summary that must be a
//! function of public parameters alone for honest runs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimnetError {
    #[error("party {0} is not registered on the bus")]
    UnknownParty(Party),
}

/// Protocol roles. Banks are indexed; there is one PNS and one aggregator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Pns,
    Bank(u32),
    Aggregator,
}

impl Party {
    /// Role name without the bank index.
    pub fn role(&self) -> &'static str {
        match self {
            Party::Pns => "pns",
            Party::Bank(_) => "bank",
            Party::Aggregator => "aggregator",
        }
    }
}

impl std::fmt::Display for Party {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Party::Pns => write!(f, "pns"),
            Party::Bank(i) => write!(f, "bank{i}"),
            Party::Aggregator => write!(f, "aggregator"),
        }
    }
}

/// One homogeneous group of items inside a payload.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ShapeItem {
    /// Type tag, e.g. "ciphertext", "leaf_index", "flag_value".
    pub kind: String,
    pub count: u64,
    /// Byte-size class derived from public parameters (slot counts, bit
    /// widths), never from values.
    pub size_class: String,
}

impl ShapeItem {
    pub fn new(kind: impl Into<String>, count: u64, size_class: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            count,
            size_class: size_class.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadShape {
    pub items: Vec<ShapeItem>,
}

impl PayloadShape {
    pub fn of(items: Vec<ShapeItem>) -> Self {
        Self { items }
    }

    pub fn count_of(&self, kind: &str) -> u64 {
        self.items
            .iter()
            .filter(|i| i.kind == kind)
            .map(|i| i.count)
            .sum()
    }
}

/// Payloads must describe their own shape so the bus can log metadata
/// without reading contents.
pub trait Shaped {
    fn shape(&self) -> PayloadShape;
}

#[derive(Debug)]
pub struct Message<P> {
    pub seq: u64,
    pub from: Party,
    pub to: Party,
    pub kind: String,
    pub shape: PayloadShape,
    pub payload: P,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Sent,
    Received,
}

/// A transcript line: message metadata as seen from one side, or a local
/// event (decryptions, key-gate violations) logged for the audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TranscriptRecord {
    Message {
        seq: u64,
        direction: Direction,
        peer: Party,
        kind: String,
        shape: PayloadShape,
    },
    Event {
        seq: u64,
        kind: String,
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub party: Party,
    pub records: Vec<TranscriptRecord>,
}

/// Bus-level log line, one per message or event, for JSONL export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Msg {
        seq: u64,
        from: Party,
        to: Party,
        kind: String,
        shape: PayloadShape,
    },
    Event {
        seq: u64,
        party: Party,
        kind: String,
        detail: String,
    },
}

impl LogRecord {
    pub fn seq(&self) -> u64 {
        match self {
            LogRecord::Msg { seq, .. } | LogRecord::Event { seq, .. } => *seq,
        }
    }
}

#[derive(Debug)]
pub struct Bus<P> {
    parties: BTreeSet<Party>,
    queues: BTreeMap<(Party, Party), VecDeque<Message<P>>>,
    transcripts: BTreeMap<Party, Transcript>,
    log: Vec<LogRecord>,
    next_seq: u64,
}

impl<P: Shaped> Bus<P> {
    pub fn new(parties: impl IntoIterator<Item = Party>) -> Self {
        let parties: BTreeSet<Party> = parties.into_iter().collect();
        let transcripts = parties
            .iter()
            .map(|&p| {
                (
                    p,
                    Transcript {
                        party: p,
                        records: Vec::new(),
                    },
                )
            })
            .collect();
        Self {
            parties,
            queues: BTreeMap::new(),
            transcripts,
            log: Vec::new(),
            next_seq: 0,
        }
    }

    pub fn parties(&self) -> impl Iterator<Item = Party> + '_ {
        self.parties.iter().copied()
    }

    fn check(&self, p: Party) -> Result<(), SimnetError> {
        if self.parties.contains(&p) {
            Ok(())
        } else {
            Err(SimnetError::UnknownParty(p))
        }
    }

    /// Queue a message for delivery; metadata lands in both transcripts
    /// immediately, the payload waits in the FIFO channel for `recv`.
    pub fn send(&mut self, from: Party, to: Party, kind: &str, payload: P) -> Result<u64, SimnetError> {
        self.check(from)?;
        self.check(to)?;
        let seq = self.next_seq;
        self.next_seq += 1;
        let shape = payload.shape();
        self.log.push(LogRecord::Msg {
            seq,
            from,
            to,
            kind: kind.to_string(),
            shape: shape.clone(),
        });
        self.transcripts
            .get_mut(&from)
            .unwrap()
            .records
            .push(TranscriptRecord::Message {
                seq,
                direction: Direction::Sent,
                peer: to,
                kind: kind.to_string(),
                shape: shape.clone(),
            });
        self.transcripts
            .get_mut(&to)
            .unwrap()
            .records
            .push(TranscriptRecord::Message {
                seq,
                direction: Direction::Received,
                peer: from,
                kind: kind.to_string(),
                shape: shape.clone(),
            });
        self.queues.entry((from, to)).or_default().push_back(Message {
            seq,
            from,
            to,
            kind: kind.to_string(),
            shape,
            payload,
        });
        Ok(seq)
    }

    /// Pop the oldest undelivered message on the `(from, to)` channel.
    pub fn recv(&mut self, to: Party, from: Party) -> Option<Message<P>> {
        self.queues.get_mut(&(from, to))?.pop_front()
    }

    /// Log a local event (e.g. a decryption) into a party's transcript.
    pub fn log_event(&mut self, party: Party, kind: &str, detail: &str) -> Result<u64, SimnetError> {
        self.check(party)?;
        let seq = self.next_seq;
        self.next_seq += 1;
        self.log.push(LogRecord::Event {
            seq,
            party,
            kind: kind.to_string(),
            detail: detail.to_string(),
        });
        self.transcripts
            .get_mut(&party)
            .unwrap()
            .records
            .push(TranscriptRecord::Event {
                seq,
                kind: kind.to_string(),
                detail: detail.to_string(),
            });
        Ok(seq)
    }

    pub fn transcript(&self, party: Party) -> Option<&Transcript> {
        self.transcripts.get(&party)
    }

    pub fn transcripts(&self) -> impl Iterator<Item = &Transcript> {
        self.transcripts.values()
    }

    /// Full bus log, one JSON line per message or event, in sequence order.
    pub fn export_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.log {
            out.push_str(&serde_json::to_string(record).expect("log record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn log_records(&self) -> &[LogRecord] {
        &self.log
    }
}

/// Aggregate shape summary of a transcript: per `(direction, kind)`, the
/// message count and the item totals per `(type tag, size class)`. Contains
/// no payload bytes, no sequence numbers, no peer indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewShapeSummary {
    pub entries: BTreeMap<String, KindSummary>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindSummary {
    pub messages: u64,
    pub items: BTreeMap<String, u64>,
}

impl ViewShapeSummary {
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("summary serializes")
    }
}

/// Collapse a transcript into its shape summary. Events are local, not part
/// of the message view, and are excluded.
pub fn view_shape(transcript: &Transcript) -> ViewShapeSummary {
    let mut summary = ViewShapeSummary::default();
    for record in &transcript.records {
        let TranscriptRecord::Message {
            direction,
            kind,
            shape,
            ..
        } = record
        else {
            continue;
        };
        let dir = match direction {
            Direction::Sent => "sent",
            Direction::Received => "received",
        };
        let entry = summary.entries.entry(format!("{dir}:{kind}")).or_default();
        entry.messages += 1;
        for item in &shape.items {
            *entry
                .items
                .entry(format!("{}:{}", item.kind, item.size_class))
                .or_default() += item.count;
        }
    }
    summary
}
