//! The three party roles -- PNS, banks, aggregator -- as explicit state
//! over the simulated network, executing the training and inference
//! protocols.
//!
//! Role boundaries are structural: the secret key lives only in the PNS
//! state, banks hold their own account tables and encrypted red-leaf
//! labels, and the aggregator holds nothing persistent. Every cross-party
//! value travels through the [`crate::simnet`] bus, so the transcripts are
//! a complete record of what each party could observe.

mod inference;
mod training;

pub use inference::{bank_infer_answer, pns_infer, pns_infer_tree_labels};
pub use training::{bank_partition_by_flag, pns_prepare_training, run_get_private_labels};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{CostReport, PhaseCost};
use crate::config::RunConfig;
use crate::data::{AccountRecord, Transaction, TxRecord};
use crate::datagen::{self, DataError};
use crate::dp::DpError;
use crate::forest::{Forest, ForestError, LeafId};
use crate::he::{
    BitCiphertext, Ciphertext, HeContext, HeError, IdCodec, KeyPair, OpCounts, SecretKey,
};
use crate::pisum::{CuckooParams, EncTable, PiSumError};
use crate::simnet::{Bus, Party, PayloadShape, ShapeItem, Shaped, SimnetError};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    PiSum(#[from] PiSumError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Simnet(#[from] SimnetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no bank answers account {account}: routed to {routed:?}, broadcast fallback off")]
    NoResponse {
        account: String,
        routed: Option<u32>,
    },
    #[error("bank holds no encrypted label for leaf {0}")]
    UnknownLeafId(LeafId),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
}

/// Account-prefix routing. Longest matching prefix wins; unmatched ids fall
/// back to broadcast when enabled.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoutingTable {
    pub prefixes: BTreeMap<String, u32>,
    pub broadcast_fallback: bool,
}

impl RoutingTable {
    pub fn route(&self, account_id: &str) -> Option<u32> {
        self.prefixes
            .iter()
            .filter(|(p, _)| account_id.starts_with(p.as_str()))
            .max_by_key(|(p, _)| p.len())
            .map(|(_, &bank)| bank)
    }
}

/// Size-class tags derived from public parameters only.
fn ct_class(ct: &Ciphertext) -> String {
    format!("slots{}", ct.len())
}

fn bits_class(bits: &BitCiphertext) -> String {
    format!("w{}slots{}", bits.width(), bits.bits()[0].len())
}

/// One per-leaf training bundle: the leaf's bank-feature binding, its flag
/// value in plaintext (the banks need it to pick a flag partition; the tree
/// itself never leaves the PNS), and the two encrypted tables. Tables are
/// reference-counted so fanning one bundle out to every bank does not copy
/// megabytes of ciphertexts.
#[derive(Debug, Clone)]
pub struct TrainBundle {
    pub leaf: LeafId,
    pub bank_feature: String,
    pub flag: String,
    pub table0: std::sync::Arc<EncTable>,
    pub table1: std::sync::Arc<EncTable>,
}

#[derive(Debug, Clone)]
pub struct LeafCounts {
    pub leaf: LeafId,
    pub n0: Ciphertext,
    pub n1: Ciphertext,
}

#[derive(Debug, Clone)]
pub struct InferQuery {
    pub query_id: u64,
    pub account_bits: BitCiphertext,
    /// Candidate leaves and their flag values, pairwise distinct flags.
    pub candidates: Vec<(LeafId, String)>,
}

#[derive(Debug, Clone)]
pub struct InferAnswer {
    pub query_id: u64,
    pub chi: Ciphertext,
}

#[derive(Debug, Clone)]
pub enum Payload {
    TrainBundle(TrainBundle),
    NoisyCounts(Vec<LeafCounts>),
    AggregatedCounts(Vec<LeafCounts>),
    InferQuery(InferQuery),
    InferAnswer(InferAnswer),
}

impl Shaped for Payload {
    fn shape(&self) -> PayloadShape {
        match self {
            Payload::TrainBundle(b) => {
                let bins = (b.table0.total_bins() + b.table1.total_bins()) as u64;
                let salts = (b.table0.salts.len() + b.table1.salts.len()) as u64;
                let sample = &b.table0.bins[0];
                PayloadShape::of(vec![
                    ShapeItem::new("leaf_index", 1, "u32pair"),
                    ShapeItem::new("feature_id", 1, "str"),
                    ShapeItem::new("flag_value", 1, "str"),
                    ShapeItem::new("salt", salts, "u64"),
                    ShapeItem::new("bit_ciphertext", bins, bits_class(&sample.id)),
                    ShapeItem::new("ciphertext", bins, ct_class(&sample.count)),
                ])
            }
            Payload::NoisyCounts(list) | Payload::AggregatedCounts(list) => {
                let class = list
                    .first()
                    .map(|c| ct_class(&c.n0))
                    .unwrap_or_else(|| "slots0".to_string());
                PayloadShape::of(vec![
                    ShapeItem::new("leaf_index", list.len() as u64, "u32pair"),
                    ShapeItem::new("ciphertext", 2 * list.len() as u64, class),
                ])
            }
            Payload::InferQuery(q) => PayloadShape::of(vec![
                ShapeItem::new("query_id", 1, "u64"),
                ShapeItem::new("bit_ciphertext", 1, bits_class(&q.account_bits)),
                ShapeItem::new("leaf_index", q.candidates.len() as u64, "u32pair"),
                ShapeItem::new("flag_value", q.candidates.len() as u64, "str"),
            ]),
            Payload::InferAnswer(a) => PayloadShape::of(vec![
                ShapeItem::new("query_id", 1, "u64"),
                ShapeItem::new("ciphertext", 1, ct_class(&a.chi)),
            ]),
        }
    }
}

/// Message kind tags.
pub const KIND_TRAIN_BUNDLE: &str = "train_bundle";
pub const KIND_NOISY_COUNTS: &str = "noisy_counts";
pub const KIND_AGG_COUNTS: &str = "aggregated_counts";
pub const KIND_INFER_QUERY: &str = "infer_query";
pub const KIND_INFER_ANSWER: &str = "infer_answer";

/// PNS state: the only holder of the secret key; labeled transactions,
/// the forest with green labels, and the id codec.
#[derive(Debug)]
pub struct PnsParty {
    pub keys: KeyPair,
    pub forest: Forest,
    pub records: Vec<TxRecord>,
    pub partitions: Vec<Vec<TxRecord>>,
    pub codec: IdCodec,
}

/// Bank state: the account table, its flag partition (id codes per flag
/// value), and the encrypted red-leaf labels it ends up holding.
#[derive(Debug, Clone)]
pub struct BankParty {
    pub index: u32,
    pub accounts: Vec<AccountRecord>,
    pub flag_sets: BTreeMap<String, Vec<u64>>,
    pub labels: BTreeMap<LeafId, Ciphertext>,
}

impl BankParty {
    pub fn new(index: u32, accounts: Vec<AccountRecord>, codec: &IdCodec) -> Self {
        let flag_sets = bank_partition_by_flag(&accounts, codec);
        Self {
            index,
            accounts,
            flag_sets,
            labels: BTreeMap::new(),
        }
    }

    pub fn flag_codes(&self, flag: &str) -> &[u64] {
        self.flag_sets.get(flag).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// A completed (or in-progress) federated run with every party's state and
/// the bus that carried their traffic.
pub struct FedRun {
    pub config: RunConfig,
    pub ctx: HeContext,
    pub bus: Bus<Payload>,
    pub pns: PnsParty,
    pub banks: Vec<BankParty>,
    pub routing: RoutingTable,
    pub cuckoo: CuckooParams,
    pub(crate) train_counters: OpCounts,
    pub(crate) train_log_len: usize,
}

impl FedRun {
    pub fn parties(n_banks: u32) -> Vec<Party> {
        let mut parties = vec![Party::Pns, Party::Aggregator];
        parties.extend((0..n_banks).map(Party::Bank));
        parties
    }

    /// Decrypt at the PNS, logging the decryption event for the audit.
    /// A key mismatch is a protocol-role violation and is logged as such.
    pub(crate) fn pns_decrypt_slot(
        ctx: &HeContext,
        bus: &mut Bus<Payload>,
        sk: &SecretKey,
        ct: &Ciphertext,
        what: &str,
    ) -> Result<f64, ProtocolError> {
        match ctx.decrypt_slot(sk, ct, 0) {
            Ok(v) => {
                bus.log_event(Party::Pns, "decrypt", what)?;
                Ok(v)
            }
            Err(e @ HeError::KeyMismatch { .. }) => {
                bus.log_event(Party::Pns, "key_mismatch", what)?;
                Err(ProtocolError::ProtocolViolation(e.to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Trusted-harness introspection: decrypt one bank's stored red-leaf
    /// labels with the PNS key. Never part of the protocol message flow;
    /// tests and audits use it to compare against the plaintext oracle.
    pub fn decrypted_bank_labels(&self, bank: u32) -> Result<BTreeMap<LeafId, u8>, ProtocolError> {
        let bank = self
            .banks
            .get(bank as usize)
            .ok_or_else(|| ProtocolError::Config(format!("no bank {bank}")))?;
        let mut out = BTreeMap::new();
        for (leaf, ct) in &bank.labels {
            let v = self.ctx.decrypt_slot(&self.pns.keys.secret, ct, 0)?;
            out.insert(*leaf, u8::from(v > 0.5));
        }
        Ok(out)
    }

    /// Centralized plaintext reference over the same per-tree subsets and
    /// the banks' joined flag tables.
    pub fn oracle_labels(
        &self,
    ) -> Result<BTreeMap<LeafId, (crate::forest::LeafStats, u8)>, ProtocolError> {
        let tables: Vec<Vec<AccountRecord>> =
            self.banks.iter().map(|b| b.accounts.clone()).collect();
        let flags = datagen::flag_map(&tables);
        Ok(crate::forest::oracle::train(
            &self.pns.forest,
            &self.pns.partitions,
            &flags,
        )?)
    }

    pub(crate) fn mark_training_done(&mut self) {
        self.train_counters = self.ctx.counters();
        self.train_log_len = self.bus.log_records().len();
    }

    /// The bus log records produced during training (inference traffic
    /// follows after).
    pub fn training_log(&self) -> &[crate::simnet::LogRecord] {
        &self.bus.log_records()[..self.train_log_len]
    }

    /// Per-phase cost report; totals equal the context counters at call time.
    pub fn cost_report(&self) -> CostReport {
        let total = self.ctx.counters();
        let log = self.bus.log_records();
        let train = PhaseCost::from_log(self.train_counters, &log[..self.train_log_len]);
        let infer = PhaseCost::from_log(total.since(&self.train_counters), &log[self.train_log_len..]);
        CostReport { train, infer }
    }

    pub fn red_leaf_count(&self) -> usize {
        self.pns.forest.red_leaves().len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub tx_id: String,
    pub label: u8,
    pub confidence: f64,
    /// Fraction of trees voting anomalous; the ranking score.
    pub score: f64,
}

/// Train the federated model end to end: prepare data, build the forest,
/// label green leaves locally, and run the collaborative red-leaf labeling.
pub fn train(
    config: &RunConfig,
    txs: &[Transaction],
    bank_tables: &[Vec<AccountRecord>],
) -> Result<FedRun, ProtocolError> {
    config
        .validate()
        .map_err(|e| ProtocolError::Config(e.to_string()))?;
    if bank_tables.len() != config.data.banks as usize {
        return Err(ProtocolError::Config(format!(
            "config names {} banks but {} tables were provided",
            config.data.banks,
            bank_tables.len()
        )));
    }
    training::run_training(config, txs, bank_tables)
}

/// Run federated inference over materialized test records.
pub fn infer(run: &mut FedRun, records: &[TxRecord]) -> Result<Vec<Prediction>, ProtocolError> {
    inference::run_inference(run, records)
}
