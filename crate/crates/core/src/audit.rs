//! Transcript auditing: parse an exported bus log and check the leakage
//! rules the protocol promises.
//!
//! The rules are the observable consequences of the privacy argument:
//! the aggregator may only ever receive ciphertexts and leaf indices, the
//! banks only ciphertexts plus the public red-leaf schema values (flag
//! values, salts, leaf indices), the PNS only ciphertexts -- and the
//! secret key is used by the PNS alone, so every decryption event must sit
//! in the PNS transcript. Shape summaries of two runs at equal public
//! parameters must agree byte for byte.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simnet::{
    view_shape, Direction, LogRecord, Party, Transcript, TranscriptRecord, ViewShapeSummary,
};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("transcript line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub seq: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub pass: bool,
    pub violations: Vec<Violation>,
    pub messages: u64,
    pub events: u64,
    /// Ciphertext items received by the aggregator across the run.
    pub aggregator_ciphertexts_received: u64,
    /// Per-party view-shape summaries reconstructed from the log.
    pub summaries: BTreeMap<String, ViewShapeSummary>,
}

pub fn parse_jsonl(text: &str) -> Result<Vec<LogRecord>, AuditError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: LogRecord = serde_json::from_str(line).map_err(|e| AuditError::Parse {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

fn allowed_item_kinds(recipient: Party) -> &'static [&'static str] {
    match recipient {
        Party::Aggregator => &["ciphertext", "leaf_index"],
        Party::Bank(_) => &[
            "ciphertext",
            "bit_ciphertext",
            "leaf_index",
            "flag_value",
            "salt",
            "feature_id",
            "query_id",
        ],
        Party::Pns => &["ciphertext", "query_id"],
    }
}

/// Rebuild per-party transcripts from the flat bus log.
pub fn transcripts_from_log(records: &[LogRecord]) -> BTreeMap<Party, Transcript> {
    let mut transcripts: BTreeMap<Party, Transcript> = BTreeMap::new();
    let mut push = |party: Party, rec: TranscriptRecord| {
        transcripts
            .entry(party)
            .or_insert_with(|| Transcript {
                party,
                records: Vec::new(),
            })
            .records
            .push(rec);
    };
    for record in records {
        match record {
            LogRecord::Msg {
                seq,
                from,
                to,
                kind,
                shape,
            } => {
                push(
                    *from,
                    TranscriptRecord::Message {
                        seq: *seq,
                        direction: Direction::Sent,
                        peer: *to,
                        kind: kind.clone(),
                        shape: shape.clone(),
                    },
                );
                push(
                    *to,
                    TranscriptRecord::Message {
                        seq: *seq,
                        direction: Direction::Received,
                        peer: *from,
                        kind: kind.clone(),
                        shape: shape.clone(),
                    },
                );
            }
            LogRecord::Event {
                seq,
                party,
                kind,
                detail,
            } => {
                push(
                    *party,
                    TranscriptRecord::Event {
                        seq: *seq,
                        kind: kind.clone(),
                        detail: detail.clone(),
                    },
                );
            }
        }
    }
    transcripts
}

/// Apply the leakage rules to a parsed log.
pub fn audit_records(records: &[LogRecord]) -> AuditReport {
    let mut report = AuditReport::default();
    for record in records {
        match record {
            LogRecord::Msg {
                seq, to, shape, ..
            } => {
                report.messages += 1;
                let allowed = allowed_item_kinds(*to);
                for item in &shape.items {
                    if !allowed.contains(&item.kind.as_str()) {
                        report.violations.push(Violation {
                            seq: *seq,
                            reason: format!(
                                "{to} received {count} `{kind}` item(s), not allowed for role {role}",
                                count = item.count,
                                kind = item.kind,
                                role = to.role(),
                            ),
                        });
                    }
                }
                if *to == Party::Aggregator {
                    report.aggregator_ciphertexts_received += shape.count_of("ciphertext");
                }
            }
            LogRecord::Event {
                seq, party, kind, ..
            } => {
                report.events += 1;
                match kind.as_str() {
                    "decrypt" if *party != Party::Pns => {
                        report.violations.push(Violation {
                            seq: *seq,
                            reason: format!("decryption performed by {party}; only the PNS holds the key"),
                        });
                    }
                    "key_mismatch" => {
                        report.violations.push(Violation {
                            seq: *seq,
                            reason: format!("{party} attempted a decryption under the wrong key"),
                        });
                    }
                    _ => {}
                }
            }
        }
    }
    for (party, transcript) in transcripts_from_log(records) {
        report.summaries.insert(party.to_string(), view_shape(&transcript));
    }
    report.pass = report.violations.is_empty();
    report
}

/// Compare the bank and aggregator summaries of two runs; returns one line
/// per differing party. Empty means the views are shape-identical.
pub fn diff_summaries(a: &AuditReport, b: &AuditReport) -> Vec<String> {
    let mut diffs = Vec::new();
    let keys: std::collections::BTreeSet<&String> =
        a.summaries.keys().chain(b.summaries.keys()).collect();
    for key in keys {
        if key.as_str() == "pns" {
            // The PNS sees its own data by definition; the theorem's shape
            // claims are about banks and the aggregator.
            continue;
        }
        match (a.summaries.get(key), b.summaries.get(key)) {
            (Some(sa), Some(sb)) => {
                if sa.canonical_json() != sb.canonical_json() {
                    diffs.push(format!("{key}: summaries differ"));
                }
            }
            _ => diffs.push(format!("{key}: present in only one run")),
        }
    }
    diffs
}

pub fn audit_jsonl(text: &str) -> Result<AuditReport, AuditError> {
    Ok(audit_records(&parse_jsonl(text)?))
}
