//! Model directory layout and reload.
//!
//! The layout pins the trust boundary at rest: PNS-side files (`forest.json`,
//! `pns_key.json`, `model.json`) carry tree structure, green labels and run
//! parameters but no bank data; each bank's store (`bank<j>_labels.json`)
//! holds nothing but ciphertext blobs keyed by leaf id. The transcript and
//! cost report sit alongside for auditing.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::data::AccountRecord;
use crate::dp;
use crate::forest::{Forest, LeafId};
use crate::he::{Ciphertext, HeContext, HeParams, IdCodec, KeyPair, OpCounts};
use crate::pisum::CuckooParams;
use crate::protocol::{BankParty, FedRun, PnsParty, ProtocolError, RoutingTable};
use crate::simnet::Bus;

pub const FOREST_FILE: &str = "forest.json";
pub const METADATA_FILE: &str = "model.json";
pub const PNS_KEY_FILE: &str = "pns_key.json";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const COST_REPORT_FILE: &str = "cost_report.json";
pub const RUN_SUMMARY_FILE: &str = "run_summary.json";

pub fn bank_labels_file(bank: u32) -> String {
    format!("bank{bank}_labels.json")
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{file}: {source}")]
    Json {
        file: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Protocol(#[from] Box<ProtocolError>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub banks: u32,
    pub tau: u32,
    pub height: u32,
    pub forest_seed: u64,
    pub sigma_bits: usize,
    pub id_salt: u64,
    pub he: HeParams,
    pub cuckoo: CuckooParams,
    pub routing: RoutingTable,
    pub dp_enabled: bool,
    pub dp_epsilon: f64,
    pub dp_bound: u64,
}

/// Headline numbers of a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub tau: u32,
    pub height: u32,
    pub red_leaves: u64,
    pub green_leaves: u64,
    /// Closed-form expectation under the binary-edge drawing model, from
    /// the configured pool sizes.
    pub expected_red_leaves_binary_model: Option<f64>,
    pub dp_enabled: bool,
    /// Total privacy budget; disjoint per-tree samples compose in parallel.
    pub total_epsilon: Option<f64>,
    pub train_he: OpCounts,
    pub warnings: Vec<String>,
}

fn write_json<T: Serialize>(dir: &Path, file: &str, value: &T) -> Result<(), ModelError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| ModelError::Json {
        file: file.to_string(),
        source,
    })?;
    fs::write(dir.join(file), text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(dir: &Path, file: &str) -> Result<T, ModelError> {
    let text = fs::read_to_string(dir.join(file))?;
    serde_json::from_str(&text).map_err(|source| ModelError::Json {
        file: file.to_string(),
        source,
    })
}

pub fn run_summary(run: &FedRun, warnings: Vec<String>) -> RunSummary {
    let config = &run.config;
    let (green, red) = run.pns.forest.classify_leaves();
    let pool_s = config.data.pns_features.len() as u64;
    let pool_b = config.data.bank_features.len() as u64;
    let expected = crate::analysis::expected_red_leaves(pool_s, pool_b, config.height, config.tau).ok();
    RunSummary {
        seed: config.seed,
        tau: config.tau,
        height: config.height,
        red_leaves: red.len() as u64,
        green_leaves: green.len() as u64,
        expected_red_leaves_binary_model: expected,
        dp_enabled: config.dp_enabled,
        total_epsilon: config
            .dp_enabled
            .then(|| dp::budget_report(config.tau, config.dp_epsilon, true)),
        train_he: run.cost_report().train.he,
        warnings,
    }
}

/// Persist a trained run: model files, per-bank label stores, transcript
/// and cost report.
pub fn write_model(dir: &Path, run: &FedRun, warnings: Vec<String>) -> Result<(), ModelError> {
    fs::create_dir_all(dir)?;
    let config = &run.config;
    fs::write(dir.join(FOREST_FILE), run.pns.forest.to_json())?;
    let metadata = ModelMetadata {
        banks: config.data.banks,
        tau: config.tau,
        height: config.height,
        forest_seed: config.forest_seed(),
        sigma_bits: run.pns.codec.width(),
        id_salt: run.pns.codec.salt(),
        he: config.he.clone(),
        cuckoo: run.cuckoo,
        routing: run.routing.clone(),
        dp_enabled: config.dp_enabled,
        dp_epsilon: config.dp_epsilon,
        dp_bound: config.dp_bound,
    };
    write_json(dir, METADATA_FILE, &metadata)?;
    write_json(dir, PNS_KEY_FILE, &run.pns.keys)?;
    for bank in &run.banks {
        write_json(dir, &bank_labels_file(bank.index), &bank.labels)?;
    }
    fs::write(dir.join(TRANSCRIPT_FILE), run.bus.export_jsonl())?;
    write_json(dir, COST_REPORT_FILE, &run.cost_report())?;
    write_json(dir, RUN_SUMMARY_FILE, &run_summary(run, warnings))?;
    Ok(())
}

/// Reload a model directory into a runnable state for inference. The banks
/// bring their own account tables (bank-side state never stored with the
/// model); labels come from their stores.
pub fn load_for_inference(
    dir: &Path,
    config: &RunConfig,
    bank_tables: &[Vec<AccountRecord>],
) -> Result<FedRun, ModelError> {
    let metadata: ModelMetadata = read_json(dir, METADATA_FILE)?;
    let forest_text = fs::read_to_string(dir.join(FOREST_FILE))?;
    let forest = Forest::from_json(&forest_text).map_err(|source| ModelError::Json {
        file: FOREST_FILE.to_string(),
        source,
    })?;
    let keys: KeyPair = read_json(dir, PNS_KEY_FILE)?;
    let ctx = HeContext::new(metadata.he.clone())
        .map_err(|e| ModelError::Protocol(Box::new(ProtocolError::He(e))))?;
    let codec = IdCodec::from_parts(metadata.id_salt, metadata.sigma_bits)
        .map_err(|e| ModelError::Protocol(Box::new(ProtocolError::He(e))))?;
    let mut banks = Vec::with_capacity(bank_tables.len());
    for (j, table) in bank_tables.iter().enumerate() {
        let mut bank = BankParty::new(j as u32, table.clone(), &codec);
        bank.labels = read_json::<BTreeMap<LeafId, Ciphertext>>(dir, &bank_labels_file(j as u32))?;
        banks.push(bank);
    }
    let bus = Bus::new(FedRun::parties(bank_tables.len() as u32));
    Ok(FedRun {
        config: config.clone(),
        ctx,
        bus,
        pns: PnsParty {
            keys,
            forest,
            records: Vec::new(),
            partitions: Vec::new(),
            codec,
        },
        banks,
        routing: metadata.routing.clone(),
        cuckoo: metadata.cuckoo,
        train_counters: OpCounts::default(),
        train_log_len: 0,
    })
}
