//! Domain rows shared by the parties: PNS transactions and bank account
//! records, plus the feature-value representation used by tree tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// A PNS transaction row. The label is present on training data only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: String,
    pub ordering_account: String,
    pub beneficiary_account: String,
    pub amount: f64,
    pub currency: String,
    pub hour: u8,
    pub label: Option<u8>,
}

/// Which transaction field an account-keyed bank feature binds to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccountField {
    Ordering,
    Beneficiary,
}

impl Transaction {
    pub fn account(&self, field: AccountField) -> &str {
        match field {
            AccountField::Ordering => &self.ordering_account,
            AccountField::Beneficiary => &self.beneficiary_account,
        }
    }
}

/// A bank-side account row: identifier plus its flag value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountRecord {
    pub account_id: String,
    pub flag: String,
}

/// A feature value as seen by a tree test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureValue {
    Cat(String),
    Num(f64),
}

/// Materialized PNS feature values keyed by feature id.
pub type FeatureMap = BTreeMap<String, FeatureValue>;

/// A transaction together with its materialized PNS features (original
/// columns plus locally derived ones). Bank flags are never present here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxRecord {
    pub tx: Transaction,
    pub features: FeatureMap,
}

impl TxRecord {
    pub fn label(&self) -> Option<u8> {
        self.tx.label
    }
}
