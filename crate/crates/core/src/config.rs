//! Run configuration: a flat `key = value` text format with dotted keys.
//!
//! Every tunable of a run lives here -- data generation, forest shape, HE
//! parameters, cuckoo sizing, DP, routing. Unknown keys are rejected so a
//! typo cannot silently fall back to a default. Lines starting with `#`
//! are comments.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::DataConfig;
use crate::dp::DpConfig;
use crate::he::HeParams;
use crate::pisum::CuckooParams;
use crate::seedstream;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoutingConfig {
    /// Account-id prefix to bank index; empty means derive from the bank
    /// count using the generator's prefixes.
    pub prefix_map: BTreeMap<String, u32>,
    pub broadcast_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub tau: u32,
    pub height: u32,
    pub forest_seed: Option<u64>,
    pub sigma_bits: usize,
    pub he: HeParams,
    pub cuckoo: CuckooParams,
    pub dp_enabled: bool,
    pub dp_epsilon: f64,
    pub dp_bound: u64,
    pub dp_seed: Option<u64>,
    pub oversample_ratio: f64,
    pub routing: RoutingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            tau: 6,
            height: 4,
            forest_seed: None,
            sigma_bits: 16,
            he: HeParams::default(),
            cuckoo: CuckooParams::default(),
            dp_enabled: false,
            dp_epsilon: 1.0,
            dp_bound: 5,
            dp_seed: None,
            oversample_ratio: 1.0,
            routing: RoutingConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn forest_seed(&self) -> u64 {
        self.forest_seed
            .unwrap_or_else(|| seedstream::derive(self.seed, "forest", 0))
    }

    pub fn dp(&self) -> DpConfig {
        DpConfig {
            enabled: self.dp_enabled,
            epsilon: self.dp_epsilon,
            bound: self.dp_bound,
            seed: self
                .dp_seed
                .unwrap_or_else(|| seedstream::derive(self.seed, "dp", 0)),
        }
    }

    /// Prefix map: explicit, or the generator's per-bank prefixes.
    pub fn prefix_map(&self) -> BTreeMap<String, u32> {
        if !self.routing.prefix_map.is_empty() {
            return self.routing.prefix_map.clone();
        }
        (0..self.data.banks)
            .map(|j| (crate::datagen::bank_prefix(j), j))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.data
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.he
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.dp()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.tau == 0 {
            return Err(ConfigError::Invalid("forest.tau must be >= 1".into()));
        }
        if self.height == 0 {
            return Err(ConfigError::Invalid("forest.height must be >= 1".into()));
        }
        if !(2..=63).contains(&self.sigma_bits) {
            return Err(ConfigError::Invalid(format!(
                "he.sigma_bits must be in 2..=63, got {}",
                self.sigma_bits
            )));
        }
        if self.cuckoo.hashes == 0 {
            return Err(ConfigError::Invalid("cuckoo.hashes must be >= 1".into()));
        }
        if self.oversample_ratio < 1.0 {
            return Err(ConfigError::Invalid(
                "train.oversample_ratio must be >= 1".into(),
            ));
        }
        for bank in self.routing.prefix_map.values() {
            if *bank >= self.data.banks {
                return Err(ConfigError::Invalid(format!(
                    "routing.prefix_map points at bank {bank}, but only {} banks exist",
                    self.data.banks
                )));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax { line });
            };
            let key = key.trim();
            let value = value.trim();
            cfg.set(line, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |reason: &str| ConfigError::BadValue {
            line,
            key: key.to_string(),
            reason: reason.to_string(),
        };
        macro_rules! parse {
            ($ty:ty) => {
                value.parse::<$ty>().map_err(|e| bad(&e.to_string()))?
            };
        }
        let list = || -> Vec<String> {
            value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        };
        match key {
            "seed" => self.seed = parse!(u64),
            "data.banks" | "banks" => self.data.banks = parse!(u32),
            "data.accounts_per_bank" => self.data.accounts_per_bank = parse!(u32),
            "data.transactions" => self.data.transactions = parse!(u32),
            "data.test_transactions" => self.data.test_transactions = parse!(u32),
            "data.anomaly_rate" => self.data.anomaly_rate = parse!(f64),
            "data.flag_domain" => self.data.flag_domain = list(),
            "data.flag_weights" => {
                self.data.flag_weights = list()
                    .iter()
                    .map(|s| s.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| bad(&e.to_string()))?
            }
            "data.suspicious_flag" => self.data.suspicious_flag = value.to_string(),
            "data.amount_threshold" => self.data.amount_threshold = parse!(f64),
            "data.rule_strength" => self.data.rule_strength = parse!(f64),
            "data.currencies" => self.data.currencies = list(),
            "data.amount_max" => self.data.amount_max = parse!(f64),
            "data.pns_features" => self.data.pns_features = list(),
            "data.bank_features" => {
                self.data.bank_features = if value == "none" { Vec::new() } else { list() }
            }
            "forest.tau" => self.tau = parse!(u32),
            "forest.height" => self.height = parse!(u32),
            "forest.seed" => self.forest_seed = Some(parse!(u64)),
            "he.sigma_bits" => self.sigma_bits = parse!(usize),
            "he.slot_count" => self.he.slot_count = parse!(usize),
            "he.depth_budget" => self.he.depth_budget = parse!(u32),
            "he.fractional_precision" => self.he.fractional_precision = parse!(u32),
            "he.compare_depth_cost" => self.he.compare_depth_cost = parse!(u32),
            "he.security_tag" => self.he.security_tag = value.to_string(),
            "cuckoo.num_bins" => self.cuckoo.num_bins = parse!(usize),
            "cuckoo.hashes" => self.cuckoo.hashes = parse!(usize),
            "cuckoo.max_evictions" => self.cuckoo.max_evictions = parse!(usize),
            "dp.enabled" => self.dp_enabled = parse_bool(value).ok_or_else(|| bad("expected true/false/on/off"))?,
            "dp.epsilon" => self.dp_epsilon = parse!(f64),
            "dp.bound" => self.dp_bound = parse!(u64),
            "dp.seed" => self.dp_seed = Some(parse!(u64)),
            "train.oversample_ratio" => self.oversample_ratio = parse!(f64),
            "routing.broadcast_fallback" => {
                self.routing.broadcast_fallback =
                    parse_bool(value).ok_or_else(|| bad("expected true/false/on/off"))?
            }
            "routing.prefix_map" => {
                if value == "auto" {
                    self.routing.prefix_map.clear();
                } else {
                    let mut map = BTreeMap::new();
                    for part in list() {
                        let Some((prefix, bank)) = part.split_once(':') else {
                            return Err(bad("expected PREFIX:BANK pairs"));
                        };
                        map.insert(
                            prefix.trim().to_string(),
                            bank.trim().parse::<u32>().map_err(|e| bad(&e.to_string()))?,
                        );
                    }
                    self.routing.prefix_map = map;
                }
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Render the full resolved configuration back to the text format.
    pub fn render(&self) -> String {
        let join = |items: &[String]| items.join(",");
        let weights: Vec<String> = self.data.flag_weights.iter().map(f64::to_string).collect();
        let prefixes: Vec<String> = self
            .prefix_map()
            .iter()
            .map(|(p, b)| format!("{p}:{b}"))
            .collect();
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("seed", self.seed.to_string());
        push("data.banks", self.data.banks.to_string());
        push("data.accounts_per_bank", self.data.accounts_per_bank.to_string());
        push("data.transactions", self.data.transactions.to_string());
        push("data.test_transactions", self.data.test_transactions.to_string());
        push("data.anomaly_rate", self.data.anomaly_rate.to_string());
        push("data.flag_domain", join(&self.data.flag_domain));
        push("data.flag_weights", weights.join(","));
        push("data.suspicious_flag", self.data.suspicious_flag.clone());
        push("data.amount_threshold", self.data.amount_threshold.to_string());
        push("data.rule_strength", self.data.rule_strength.to_string());
        push("data.currencies", join(&self.data.currencies));
        push("data.amount_max", self.data.amount_max.to_string());
        push("data.pns_features", join(&self.data.pns_features));
        push(
            "data.bank_features",
            if self.data.bank_features.is_empty() {
                "none".to_string()
            } else {
                join(&self.data.bank_features)
            },
        );
        push("forest.tau", self.tau.to_string());
        push("forest.height", self.height.to_string());
        push("forest.seed", self.forest_seed().to_string());
        push("he.sigma_bits", self.sigma_bits.to_string());
        push("he.slot_count", self.he.slot_count.to_string());
        push("he.depth_budget", self.he.depth_budget.to_string());
        push("he.fractional_precision", self.he.fractional_precision.to_string());
        push("he.compare_depth_cost", self.he.compare_depth_cost.to_string());
        push("he.security_tag", self.he.security_tag.clone());
        push("cuckoo.num_bins", self.cuckoo.num_bins.to_string());
        push("cuckoo.hashes", self.cuckoo.hashes.to_string());
        push("cuckoo.max_evictions", self.cuckoo.max_evictions.to_string());
        push("dp.enabled", self.dp_enabled.to_string());
        push("dp.epsilon", self.dp_epsilon.to_string());
        push("dp.bound", self.dp_bound.to_string());
        push("dp.seed", self.dp().seed.to_string());
        push("train.oversample_ratio", self.oversample_ratio.to_string());
        push("routing.prefix_map", prefixes.join(","));
        push("routing.broadcast_fallback", self.routing.broadcast_fallback.to_string());
        out
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "on" | "1" | "yes" => Some(true),
        "false" | "off" | "0" | "no" => Some(false),
        _ => None,
    }
}
