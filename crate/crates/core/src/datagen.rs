//! Seeded synthetic data: bank account tables and PNS transactions with a
//! planted anomaly signal, plus PNS-local feature materialization.
//!
//! The planted rule ties the label to a bank flag *and* a PNS condition
//! (suspicious flag on the ordering account combined with a high amount),
//! so red leaves carry genuine signal that no single party could learn
//! alone. Generation is a pure function of the seed and the config.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AccountField, AccountRecord, FeatureMap, FeatureValue, Transaction, TxRecord};
use crate::forest::FeatureSpec;
use crate::seedstream;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid data config: {0}")]
    InvalidConfig(String),
    #[error("malformed csv at line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Feature ids the generator knows how to materialize.
pub const FEATURE_AMOUNT: &str = "amount";
pub const FEATURE_CURRENCY: &str = "currency";
pub const FEATURE_HOUR: &str = "hour";
pub const FEATURE_PAIR_FREQ: &str = "pair_freq";
pub const FEATURE_OUT_DEGREE: &str = "out_degree";
pub const FEATURE_ORDERING_FLAG: &str = "ordering_account_flag";
pub const FEATURE_BENEFICIARY_FLAG: &str = "beneficiary_account_flag";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub banks: u32,
    pub accounts_per_bank: u32,
    pub transactions: u32,
    pub test_transactions: u32,
    pub anomaly_rate: f64,
    /// Flag domain with sampling weights; the last entries may be rare.
    pub flag_domain: Vec<String>,
    pub flag_weights: Vec<f64>,
    /// Flag treated as suspicious by the planted rule.
    pub suspicious_flag: String,
    /// Amount threshold of the planted rule.
    pub amount_threshold: f64,
    /// P(label = 1) when the planted rule fires.
    pub rule_strength: f64,
    pub currencies: Vec<String>,
    pub amount_max: f64,
    /// PNS feature ids enabled for tree building.
    pub pns_features: Vec<String>,
    /// Bank feature ids enabled for tree building; may be empty, in which
    /// case every leaf is green and training is purely local.
    pub bank_features: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            banks: 3,
            accounts_per_bank: 200,
            transactions: 500,
            test_transactions: 200,
            anomaly_rate: 0.05,
            flag_domain: vec!["00".into(), "01".into(), "99".into()],
            flag_weights: vec![0.6, 0.2, 0.2],
            suspicious_flag: "99".into(),
            amount_threshold: 750_000.0,
            rule_strength: 0.8,
            currencies: vec!["USD".into(), "EUR".into(), "GBP".into()],
            amount_max: 1_000_000.0,
            pns_features: vec![
                FEATURE_AMOUNT.into(),
                FEATURE_CURRENCY.into(),
                FEATURE_HOUR.into(),
                FEATURE_PAIR_FREQ.into(),
                FEATURE_OUT_DEGREE.into(),
            ],
            bank_features: vec![FEATURE_ORDERING_FLAG.into(), FEATURE_BENEFICIARY_FLAG.into()],
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.banks == 0 || self.accounts_per_bank == 0 {
            return Err(DataError::InvalidConfig("need at least one bank and one account".into()));
        }
        if !(0.0..=1.0).contains(&self.anomaly_rate) {
            return Err(DataError::InvalidConfig(format!(
                "anomaly_rate must be in [0, 1], got {}",
                self.anomaly_rate
            )));
        }
        if self.flag_domain.is_empty() || self.flag_domain.len() != self.flag_weights.len() {
            return Err(DataError::InvalidConfig(
                "flag_domain and flag_weights must be non-empty and equal length".into(),
            ));
        }
        if self.flag_weights.iter().any(|w| *w < 0.0) || self.flag_weights.iter().sum::<f64>() <= 0.0 {
            return Err(DataError::InvalidConfig("flag_weights must be non-negative and sum > 0".into()));
        }
        if !self.flag_domain.contains(&self.suspicious_flag) {
            return Err(DataError::InvalidConfig(format!(
                "suspicious flag {} not in the flag domain",
                self.suspicious_flag
            )));
        }
        if self.currencies.is_empty() {
            return Err(DataError::InvalidConfig("need at least one currency".into()));
        }
        if !(0.0..=1.0).contains(&self.rule_strength) {
            return Err(DataError::InvalidConfig("rule_strength must be in [0, 1]".into()));
        }
        if self.amount_max <= 0.0 || self.amount_threshold < 0.0 {
            return Err(DataError::InvalidConfig("amount bounds must be positive".into()));
        }
        if self.pns_features.is_empty() {
            return Err(DataError::InvalidConfig("need at least one PNS feature".into()));
        }
        for f in &self.pns_features {
            if ![
                FEATURE_AMOUNT,
                FEATURE_CURRENCY,
                FEATURE_HOUR,
                FEATURE_PAIR_FREQ,
                FEATURE_OUT_DEGREE,
            ]
            .contains(&f.as_str())
            {
                return Err(DataError::InvalidConfig(format!("unknown PNS feature {f}")));
            }
        }
        for f in &self.bank_features {
            if ![FEATURE_ORDERING_FLAG, FEATURE_BENEFICIARY_FLAG].contains(&f.as_str()) {
                return Err(DataError::InvalidConfig(format!("unknown bank feature {f}")));
            }
        }
        Ok(())
    }
}

/// Routing prefix for a bank's account ids.
pub fn bank_prefix(bank: u32) -> String {
    format!("B{bank:02}")
}

/// Generate one account table per bank. Ids are unique and carry the bank's
/// routing prefix; flags follow the configured distribution.
pub fn gen_accounts(seed: u64, cfg: &DataConfig) -> Vec<Vec<AccountRecord>> {
    let total: f64 = cfg.flag_weights.iter().sum();
    let mut tables = Vec::with_capacity(cfg.banks as usize);
    for bank in 0..cfg.banks {
        let mut rng = seedstream::rng(seed, "accounts", u64::from(bank));
        let prefix = bank_prefix(bank);
        let mut table = Vec::with_capacity(cfg.accounts_per_bank as usize);
        for i in 0..cfg.accounts_per_bank {
            let mut pick = rng.gen_range(0.0..total);
            let mut flag = cfg.flag_domain.last().unwrap().clone();
            for (f, w) in cfg.flag_domain.iter().zip(&cfg.flag_weights) {
                if pick < *w {
                    flag = f.clone();
                    break;
                }
                pick -= w;
            }
            table.push(AccountRecord {
                account_id: format!("{prefix}{i:06}"),
                flag,
            });
        }
        tables.push(table);
    }
    tables
}

/// Joined account-to-flag map over all bank tables (trusted reference and
/// generation helper; the federated path never sees this).
pub fn flag_map(tables: &[Vec<AccountRecord>]) -> BTreeMap<String, String> {
    tables
        .iter()
        .flatten()
        .map(|a| (a.account_id.clone(), a.flag.clone()))
        .collect()
}

fn gen_transactions_inner(
    rng: &mut impl Rng,
    count: u32,
    id_prefix: &str,
    tables: &[Vec<AccountRecord>],
    cfg: &DataConfig,
) -> Vec<Transaction> {
    let all: Vec<&AccountRecord> = tables.iter().flatten().collect();
    let flags = flag_map(tables);
    // Probability the planted rule fires for a uniform draw.
    let p_flag = all
        .iter()
        .filter(|a| a.flag == cfg.suspicious_flag)
        .count() as f64
        / all.len() as f64;
    let p_amount = 1.0 - (cfg.amount_threshold / cfg.amount_max).clamp(0.0, 1.0);
    let p_rule = p_flag * p_amount;
    // Split the target rate between rule-positives (strength) and a base
    // rate off the rule so the overall positive fraction lands near target.
    let p_high = cfg.rule_strength;
    let p_low = if p_rule >= 1.0 {
        0.0
    } else {
        ((cfg.anomaly_rate - p_rule * p_high) / (1.0 - p_rule)).clamp(0.0, 1.0)
    };
    let mut out = Vec::with_capacity(count as usize);
    for i in 0..count {
        let ordering = all[rng.gen_range(0..all.len())];
        let beneficiary = all[rng.gen_range(0..all.len())];
        let amount = rng.gen_range(0.0..cfg.amount_max);
        let currency = cfg.currencies[rng.gen_range(0..cfg.currencies.len())].clone();
        let hour = rng.gen_range(0..24) as u8;
        let rule_fires =
            flags[&ordering.account_id] == cfg.suspicious_flag && amount >= cfg.amount_threshold;
        let p1 = match cfg.anomaly_rate {
            r if r <= 0.0 => 0.0,
            r if r >= 1.0 => 1.0,
            _ => {
                if rule_fires {
                    p_high
                } else {
                    p_low
                }
            }
        };
        let label = u8::from(rng.gen_range(0.0..1.0) < p1);
        out.push(Transaction {
            tx_id: format!("{id_prefix}{i:07}"),
            ordering_account: ordering.account_id.clone(),
            beneficiary_account: beneficiary.account_id.clone(),
            amount,
            currency,
            hour,
            label: Some(label),
        });
    }
    out
}

/// Generate the labeled training table.
pub fn gen_transactions(seed: u64, tables: &[Vec<AccountRecord>], cfg: &DataConfig) -> Vec<Transaction> {
    let mut rng = seedstream::rng(seed, "transactions", 0);
    gen_transactions_inner(&mut rng, cfg.transactions, "tx", tables, cfg)
}

/// Generate the held-out table (same planted process, independent stream).
pub fn gen_test_transactions(
    seed: u64,
    tables: &[Vec<AccountRecord>],
    cfg: &DataConfig,
) -> Vec<Transaction> {
    let mut rng = seedstream::rng(seed, "test-transactions", 0);
    gen_transactions_inner(&mut rng, cfg.test_transactions, "tt", tables, cfg)
}

/// Materialize PNS features for every transaction: the raw columns plus the
/// augmented sender-receiver pair frequency and ordering-account out-degree,
/// all computed from the transaction table alone.
pub fn derive_features(txs: &[Transaction], enabled: &[String]) -> Vec<TxRecord> {
    let mut pair_freq: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    let mut out_degree: BTreeMap<&str, u64> = BTreeMap::new();
    for tx in txs {
        *pair_freq
            .entry((tx.ordering_account.as_str(), tx.beneficiary_account.as_str()))
            .or_default() += 1;
        *out_degree.entry(tx.ordering_account.as_str()).or_default() += 1;
    }
    txs.iter()
        .map(|tx| {
            let mut features = FeatureMap::new();
            for f in enabled {
                match f.as_str() {
                    FEATURE_AMOUNT => {
                        features.insert(f.clone(), FeatureValue::Num(tx.amount));
                    }
                    FEATURE_CURRENCY => {
                        features.insert(f.clone(), FeatureValue::Cat(tx.currency.clone()));
                    }
                    FEATURE_HOUR => {
                        features.insert(f.clone(), FeatureValue::Num(f64::from(tx.hour)));
                    }
                    FEATURE_PAIR_FREQ => {
                        let n = pair_freq
                            [&(tx.ordering_account.as_str(), tx.beneficiary_account.as_str())];
                        features.insert(f.clone(), FeatureValue::Num(n as f64));
                    }
                    FEATURE_OUT_DEGREE => {
                        let n = out_degree[&tx.ordering_account.as_str()];
                        features.insert(f.clone(), FeatureValue::Num(n as f64));
                    }
                    _ => {}
                }
            }
            TxRecord {
                tx: tx.clone(),
                features,
            }
        })
        .collect()
}

/// PNS feature specs implied by the config, for tree building.
pub fn pns_feature_specs(cfg: &DataConfig) -> Vec<FeatureSpec> {
    let currencies: Vec<&str> = cfg.currencies.iter().map(String::as_str).collect();
    cfg.pns_features
        .iter()
        .map(|f| match f.as_str() {
            FEATURE_AMOUNT => FeatureSpec::pns_numeric(f, 0.0, cfg.amount_max),
            FEATURE_CURRENCY => FeatureSpec::pns_categorical(f, &currencies),
            FEATURE_HOUR => FeatureSpec::pns_numeric(f, 0.0, 24.0),
            FEATURE_PAIR_FREQ => FeatureSpec::pns_numeric(f, 0.0, 64.0),
            FEATURE_OUT_DEGREE => FeatureSpec::pns_numeric(f, 0.0, 256.0),
            other => unreachable!("validated feature id {other}"),
        })
        .collect()
}

/// Bank feature specs: the enabled account flags over the configured domain.
pub fn bank_feature_specs(cfg: &DataConfig) -> Vec<FeatureSpec> {
    let domain: Vec<&str> = cfg.flag_domain.iter().map(String::as_str).collect();
    cfg.bank_features
        .iter()
        .map(|f| match f.as_str() {
            FEATURE_ORDERING_FLAG => {
                FeatureSpec::bank_flag(FEATURE_ORDERING_FLAG, AccountField::Ordering, &domain)
            }
            FEATURE_BENEFICIARY_FLAG => FeatureSpec::bank_flag(
                FEATURE_BENEFICIARY_FLAG,
                AccountField::Beneficiary,
                &domain,
            ),
            other => unreachable!("validated bank feature id {other}"),
        })
        .collect()
}

/// Shuffle minority-class records up (or down) toward `ratio` times their
/// original count; `ratio <= 1` is a no-op. Duplicates are appended, then
/// the caller partitions.
pub fn oversample_minority(records: &[TxRecord], ratio: f64, rng: &mut impl Rng) -> Vec<TxRecord> {
    if ratio <= 1.0 {
        return records.to_vec();
    }
    let minority: Vec<&TxRecord> = records.iter().filter(|r| r.label() == Some(1)).collect();
    if minority.is_empty() {
        return records.to_vec();
    }
    let extra = ((ratio - 1.0) * minority.len() as f64).round() as usize;
    let mut out = records.to_vec();
    for _ in 0..extra {
        out.push((*minority.choose(rng).unwrap()).clone());
    }
    out
}

// --- CSV interfaces -------------------------------------------------------
//
// transactions.csv: tx_id,ordering_account,beneficiary_account,amount,
// currency,hour,label  (label column left empty for unlabeled rows)
// accounts_bank<j>.csv: account_id,flag
// No field ever contains a comma, so no quoting is needed.

pub const TX_HEADER: &str = "tx_id,ordering_account,beneficiary_account,amount,currency,hour,label";
pub const ACCOUNT_HEADER: &str = "account_id,flag";

pub fn transactions_to_csv(txs: &[Transaction]) -> String {
    let mut out = String::from(TX_HEADER);
    out.push('\n');
    for tx in txs {
        let label = tx.label.map(|l| l.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            tx.tx_id, tx.ordering_account, tx.beneficiary_account, tx.amount, tx.currency, tx.hour, label
        ));
    }
    out
}

pub fn transactions_from_csv(text: &str) -> Result<Vec<Transaction>, DataError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == TX_HEADER => {}
        _ => {
            return Err(DataError::MalformedCsv {
                line: 1,
                reason: format!("expected header {TX_HEADER}"),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(DataError::MalformedCsv {
                line: idx + 1,
                reason: format!("expected 7 fields, got {}", fields.len()),
            });
        }
        let parse_err = |reason: &str| DataError::MalformedCsv {
            line: idx + 1,
            reason: reason.to_string(),
        };
        out.push(Transaction {
            tx_id: fields[0].to_string(),
            ordering_account: fields[1].to_string(),
            beneficiary_account: fields[2].to_string(),
            amount: fields[3].parse().map_err(|_| parse_err("bad amount"))?,
            currency: fields[4].to_string(),
            hour: fields[5].parse().map_err(|_| parse_err("bad hour"))?,
            label: match fields[6] {
                "" => None,
                "0" => Some(0),
                "1" => Some(1),
                _ => return Err(parse_err("label must be 0, 1 or empty")),
            },
        });
    }
    Ok(out)
}

pub fn accounts_to_csv(table: &[AccountRecord]) -> String {
    let mut out = String::from(ACCOUNT_HEADER);
    out.push('\n');
    for a in table {
        out.push_str(&format!("{},{}\n", a.account_id, a.flag));
    }
    out
}

pub fn accounts_from_csv(text: &str) -> Result<Vec<AccountRecord>, DataError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == ACCOUNT_HEADER => {}
        _ => {
            return Err(DataError::MalformedCsv {
                line: 1,
                reason: format!("expected header {ACCOUNT_HEADER}"),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(DataError::MalformedCsv {
                line: idx + 1,
                reason: format!("expected 2 fields, got {}", fields.len()),
            });
        }
        out.push(AccountRecord {
            account_id: fields[0].to_string(),
            flag: fields[1].to_string(),
        });
    }
    Ok(out)
}
