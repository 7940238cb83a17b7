//! Random decision trees and forests.
//!
//! Tree structures are drawn from feature pools alone and never look at any
//! dataset: a node with no bank-feature ancestor draws uniformly from the
//! combined PNS+bank condition pool, nodes below a bank feature draw from
//! the PNS pool only, numeric split thresholds are drawn uniformly from the
//! feature range, and categorical nodes get one edge per domain value. A
//! leaf whose root path uses only PNS features is *green* (labelable locally
//! by the PNS); a leaf whose path crosses a bank feature is *red* and its
//! label must be computed collaboratively.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AccountField, FeatureMap, FeatureValue, TxRecord};
use crate::seedstream;

#[derive(Debug, Error, PartialEq)]
pub enum ForestError {
    #[error("feature pool is empty at a required draw")]
    EmptyFeaturePool,
    #[error("a forest needs at least one tree")]
    MinOneTree,
    #[error("invalid feature spec: {0}")]
    InvalidFeature(String),
    #[error("malformed transaction: feature {feature_id}: {reason}")]
    MalformedTransaction { feature_id: String, reason: String },
    #[error("path crosses more than one bank feature")]
    NestedBankFeature,
    #[error("majority vote over an empty label set")]
    EmptyVote,
    #[error("account {0} is not present in any bank table")]
    UnknownAccount(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureOwner {
    Pns,
    Bank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureKind {
    Categorical { domain: Vec<String> },
    Numeric { lo: f64, hi: f64 },
}

/// One feature of either party. Bank features carry the transaction field
/// their account identifiers come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub id: String,
    pub owner: FeatureOwner,
    pub kind: FeatureKind,
    pub account_field: Option<AccountField>,
}

impl FeatureSpec {
    pub fn pns_categorical(id: &str, domain: &[&str]) -> Self {
        Self {
            id: id.to_string(),
            owner: FeatureOwner::Pns,
            kind: FeatureKind::Categorical {
                domain: domain.iter().map(|s| s.to_string()).collect(),
            },
            account_field: None,
        }
    }

    pub fn pns_numeric(id: &str, lo: f64, hi: f64) -> Self {
        Self {
            id: id.to_string(),
            owner: FeatureOwner::Pns,
            kind: FeatureKind::Numeric { lo, hi },
            account_field: None,
        }
    }

    pub fn bank_flag(id: &str, field: AccountField, domain: &[&str]) -> Self {
        Self {
            id: id.to_string(),
            owner: FeatureOwner::Bank,
            kind: FeatureKind::Categorical {
                domain: domain.iter().map(|s| s.to_string()).collect(),
            },
            account_field: Some(field),
        }
    }
}

/// Validate a feature schema: unique ids, non-empty categorical domains,
/// proper numeric ranges, bank features categorical and field-bound.
pub fn validate_features(pns: &[FeatureSpec], bank: &[FeatureSpec]) -> Result<(), ForestError> {
    let mut seen = std::collections::BTreeSet::new();
    for spec in pns.iter().chain(bank) {
        if !seen.insert(spec.id.clone()) {
            return Err(ForestError::InvalidFeature(format!(
                "duplicate feature id {}",
                spec.id
            )));
        }
        match &spec.kind {
            FeatureKind::Categorical { domain } => {
                if domain.is_empty() {
                    return Err(ForestError::InvalidFeature(format!(
                        "{}: empty categorical domain",
                        spec.id
                    )));
                }
            }
            FeatureKind::Numeric { lo, hi } => {
                if lo.is_nan() || hi.is_nan() || lo >= hi {
                    return Err(ForestError::InvalidFeature(format!(
                        "{}: numeric range [{lo}, {hi}) is empty",
                        spec.id
                    )));
                }
            }
        }
    }
    for spec in pns {
        if spec.owner != FeatureOwner::Pns || spec.account_field.is_some() {
            return Err(ForestError::InvalidFeature(format!(
                "{}: listed as PNS but not PNS-owned",
                spec.id
            )));
        }
    }
    for spec in bank {
        if spec.owner != FeatureOwner::Bank {
            return Err(ForestError::InvalidFeature(format!(
                "{}: listed as bank but not bank-owned",
                spec.id
            )));
        }
        if spec.account_field.is_none() {
            return Err(ForestError::InvalidFeature(format!(
                "{}: bank feature without an account field binding",
                spec.id
            )));
        }
        if !matches!(spec.kind, FeatureKind::Categorical { .. }) {
            return Err(ForestError::InvalidFeature(format!(
                "{}: bank features must be categorical flags",
                spec.id
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Predicate {
    Equals(String),
    LessThan(f64),
    AtLeast(f64),
}

/// An edge test. The edges leaving one node partition the feature's domain:
/// exactly one of them passes for any in-domain value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub feature_id: String,
    pub predicate: Predicate,
}

impl TestSpec {
    /// Whether `value` passes this test; `None` on a type mismatch.
    pub fn passes(&self, value: &FeatureValue) -> Option<bool> {
        match (&self.predicate, value) {
            (Predicate::Equals(v), FeatureValue::Cat(c)) => Some(v == c),
            (Predicate::LessThan(t), FeatureValue::Num(x)) => Some(x < t),
            (Predicate::AtLeast(t), FeatureValue::Num(x)) => Some(x >= t),
            _ => None,
        }
    }
}

/// Leaf identity, stable across serialization: tree index plus the leaf's
/// position in that tree. Serializes as the compact string `t<tree>l<leaf>`
/// so it can key JSON maps (the bank-side label stores).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LeafId {
    pub tree: u32,
    pub leaf: u32,
}

impl std::fmt::Display for LeafId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "t{}l{}", self.tree, self.leaf)
    }
}

impl std::str::FromStr for LeafId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rest = s.strip_prefix('t').ok_or_else(|| format!("bad leaf id {s}"))?;
        let (tree, leaf) = rest.split_once('l').ok_or_else(|| format!("bad leaf id {s}"))?;
        Ok(LeafId {
            tree: tree.parse().map_err(|_| format!("bad leaf id {s}"))?,
            leaf: leaf.parse().map_err(|_| format!("bad leaf id {s}"))?,
        })
    }
}

impl Serialize for LeafId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LeafId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeafKind {
    Green,
    Red,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub id: LeafId,
    pub kind: LeafKind,
    /// All edge tests on the root path, in path order.
    pub tests: Vec<TestSpec>,
    /// Red leaves: the bank feature on the path.
    pub bank_feature: Option<String>,
    /// Red leaves: the transaction field that bank feature reads.
    pub bank_field: Option<AccountField>,
    /// Red leaves: the flag value of the bank edge taken.
    pub bank_flag: Option<String>,
    /// Plaintext label. Inline for green leaves once trained; red-leaf
    /// labels live encrypted at the banks and stay `None` here.
    pub label: Option<u8>,
}

impl Leaf {
    /// Path tests excluding the bank-feature test (all of them for green).
    pub fn pns_tests(&self) -> impl Iterator<Item = &TestSpec> {
        let bank = self.bank_feature.clone();
        self.tests
            .iter()
            .filter(move |t| Some(&t.feature_id) != bank.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub test: TestSpec,
    pub child: Node,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Internal {
        feature_id: String,
        /// `Some` iff this node tests a bank feature.
        bank_field: Option<AccountField>,
        edges: Vec<Edge>,
    },
    Leaf(Leaf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub index: u32,
    pub height: u32,
    pub root: Node,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub seed: u64,
    pub tau: u32,
    pub height: u32,
    pub trees: Vec<Tree>,
}

/// Label counts at a leaf.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafStats {
    pub n0: u64,
    pub n1: u64,
}

/// Plaintext leaf-label rule: benign (0) unless label-1 strictly dominates.
pub fn green_label(stats: &LeafStats) -> u8 {
    if stats.n0 >= stats.n1 {
        0
    } else {
        1
    }
}

/// Majority vote over per-tree labels. Ties resolve to label 0 at
/// confidence 0.5; confidence is the majority fraction.
pub fn majority_vote(labels: &[u8]) -> Result<(u8, f64), ForestError> {
    if labels.is_empty() {
        return Err(ForestError::EmptyVote);
    }
    let ones = labels.iter().filter(|&&l| l == 1).count();
    let zeros = labels.len() - ones;
    let tau = labels.len() as f64;
    if ones > zeros {
        Ok((1, ones as f64 / tau))
    } else {
        Ok((0, zeros as f64 / tau))
    }
}

struct Builder<'a> {
    pns: &'a [FeatureSpec],
    bank: &'a [FeatureSpec],
    height: u32,
    tree_index: u32,
    next_leaf: u32,
}

impl<'a> Builder<'a> {
    fn build(&mut self, rng: &mut impl Rng) -> Result<Node, ForestError> {
        self.node(rng, 0, false, Vec::new())
    }

    fn node(
        &mut self,
        rng: &mut impl Rng,
        depth: u32,
        bank_seen: bool,
        tests: Vec<TestSpec>,
    ) -> Result<Node, ForestError> {
        if depth == self.height {
            return Ok(Node::Leaf(self.leaf(bank_seen, tests)));
        }
        let pool_len = if bank_seen {
            self.pns.len()
        } else {
            self.pns.len() + self.bank.len()
        };
        if pool_len == 0 {
            return Err(ForestError::EmptyFeaturePool);
        }
        let pick = rng.gen_range(0..pool_len);
        let spec = if pick < self.pns.len() {
            &self.pns[pick]
        } else {
            &self.bank[pick - self.pns.len()]
        };
        let is_bank = spec.owner == FeatureOwner::Bank;
        let edge_tests: Vec<TestSpec> = match &spec.kind {
            FeatureKind::Categorical { domain } => domain
                .iter()
                .map(|v| TestSpec {
                    feature_id: spec.id.clone(),
                    predicate: Predicate::Equals(v.clone()),
                })
                .collect(),
            FeatureKind::Numeric { lo, hi } => {
                let t = rng.gen_range(*lo..*hi);
                vec![
                    TestSpec {
                        feature_id: spec.id.clone(),
                        predicate: Predicate::LessThan(t),
                    },
                    TestSpec {
                        feature_id: spec.id.clone(),
                        predicate: Predicate::AtLeast(t),
                    },
                ]
            }
        };
        let mut edges = Vec::with_capacity(edge_tests.len());
        for test in edge_tests {
            let mut child_tests = tests.clone();
            child_tests.push(test.clone());
            let child = self.node(rng, depth + 1, bank_seen || is_bank, child_tests)?;
            edges.push(Edge { test, child });
        }
        Ok(Node::Internal {
            feature_id: spec.id.clone(),
            bank_field: spec.account_field,
            edges,
        })
    }

    fn leaf(&mut self, bank_seen: bool, tests: Vec<TestSpec>) -> Leaf {
        let id = LeafId {
            tree: self.tree_index,
            leaf: self.next_leaf,
        };
        self.next_leaf += 1;
        let bank_test = tests.iter().find(|t| {
            self.bank.iter().any(|b| b.id == t.feature_id)
        });
        let (bank_feature, bank_field, bank_flag) = match bank_test {
            Some(t) => {
                let spec = self.bank.iter().find(|b| b.id == t.feature_id).unwrap();
                let flag = match &t.predicate {
                    Predicate::Equals(v) => v.clone(),
                    _ => unreachable!("bank features are categorical"),
                };
                (Some(t.feature_id.clone()), spec.account_field, Some(flag))
            }
            None => (None, None, None),
        };
        Leaf {
            id,
            kind: if bank_seen { LeafKind::Red } else { LeafKind::Green },
            tests,
            bank_feature,
            bank_field,
            bank_flag,
            label: None,
        }
    }
}

/// Build one random decision tree of the given height.
pub fn build_tree(
    rng: &mut impl Rng,
    pns: &[FeatureSpec],
    bank: &[FeatureSpec],
    height: u32,
    tree_index: u32,
) -> Result<Tree, ForestError> {
    validate_features(pns, bank)?;
    if height == 0 || pns.is_empty() {
        return Err(ForestError::EmptyFeaturePool);
    }
    let mut builder = Builder {
        pns,
        bank,
        height,
        tree_index,
        next_leaf: 0,
    };
    Ok(Tree {
        index: tree_index,
        height,
        root: builder.build(rng)?,
    })
}

/// Build `tau` trees from independent seed-derived streams. The structure
/// is a function of `(seed, features, tau, height)` and of nothing else.
pub fn build_forest(
    seed: u64,
    tau: u32,
    height: u32,
    pns: &[FeatureSpec],
    bank: &[FeatureSpec],
) -> Result<Forest, ForestError> {
    if tau == 0 {
        return Err(ForestError::MinOneTree);
    }
    let mut trees = Vec::with_capacity(tau as usize);
    for i in 0..tau {
        let mut rng = seedstream::rng(seed, "tree", u64::from(i));
        trees.push(build_tree(&mut rng, pns, bank, height, i)?);
    }
    Ok(Forest {
        seed,
        tau,
        height,
        trees,
    })
}

impl Node {
    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a Leaf>) {
        match self {
            Node::Leaf(l) => out.push(l),
            Node::Internal { edges, .. } => {
                for e in edges {
                    e.child.collect_leaves(out);
                }
            }
        }
    }

    fn for_each_leaf_mut(&mut self, f: &mut impl FnMut(&mut Leaf)) {
        match self {
            Node::Leaf(l) => f(l),
            Node::Internal { edges, .. } => {
                for e in edges {
                    e.child.for_each_leaf_mut(f);
                }
            }
        }
    }
}

impl Tree {
    pub fn leaves(&self) -> Vec<&Leaf> {
        let mut out = Vec::new();
        self.root.collect_leaves(&mut out);
        out
    }
}

impl Forest {
    pub fn leaves(&self) -> Vec<&Leaf> {
        let mut out = Vec::new();
        for t in &self.trees {
            t.root.collect_leaves(&mut out);
        }
        out
    }

    pub fn for_each_leaf_mut(&mut self, mut f: impl FnMut(&mut Leaf)) {
        for t in &mut self.trees {
            t.root.for_each_leaf_mut(&mut f);
        }
    }

    /// Partition all leaf ids into (green, red).
    pub fn classify_leaves(&self) -> (Vec<LeafId>, Vec<LeafId>) {
        let mut green = Vec::new();
        let mut red = Vec::new();
        for leaf in self.leaves() {
            match leaf.kind {
                LeafKind::Green => green.push(leaf.id),
                LeafKind::Red => red.push(leaf.id),
            }
        }
        (green, red)
    }

    pub fn red_leaves(&self) -> Vec<&Leaf> {
        self.leaves()
            .into_iter()
            .filter(|l| l.kind == LeafKind::Red)
            .collect()
    }

    pub fn leaf_map(&self) -> BTreeMap<LeafId, &Leaf> {
        self.leaves().into_iter().map(|l| (l.id, l)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("forest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Outcome of filtering a transaction through one tree on PNS features.
#[derive(Debug)]
pub enum FilterOutcome<'a> {
    /// The traversal reached a leaf without touching a bank feature.
    Leaf(&'a Leaf),
    /// The traversal hit a bank-feature node it cannot evaluate.
    Blocked {
        feature_id: &'a str,
        bank_field: AccountField,
        node: &'a Node,
    },
}

fn passing_edge<'a>(
    feature_id: &str,
    edges: &'a [Edge],
    features: &FeatureMap,
) -> Result<&'a Edge, ForestError> {
    let value = features
        .get(feature_id)
        .ok_or_else(|| ForestError::MalformedTransaction {
            feature_id: feature_id.to_string(),
            reason: "missing feature value".to_string(),
        })?;
    for edge in edges {
        match edge.test.passes(value) {
            Some(true) => return Ok(edge),
            Some(false) => continue,
            None => {
                return Err(ForestError::MalformedTransaction {
                    feature_id: feature_id.to_string(),
                    reason: "feature value has the wrong type".to_string(),
                })
            }
        }
    }
    Err(ForestError::MalformedTransaction {
        feature_id: feature_id.to_string(),
        reason: "value outside the feature domain".to_string(),
    })
}

/// Deterministic traversal on PNS features, stopping at the first
/// bank-feature node.
pub fn filter<'a>(tree: &'a Tree, features: &FeatureMap) -> Result<FilterOutcome<'a>, ForestError> {
    let mut node = &tree.root;
    loop {
        match node {
            Node::Leaf(l) => return Ok(FilterOutcome::Leaf(l)),
            Node::Internal {
                feature_id,
                bank_field,
                edges,
            } => {
                if let Some(field) = bank_field {
                    return Ok(FilterOutcome::Blocked {
                        feature_id,
                        bank_field: *field,
                        node,
                    });
                }
                node = &passing_edge(feature_id, edges, features)?.child;
            }
        }
    }
}

fn traverse_pns<'a>(node: &'a Node, features: &FeatureMap) -> Result<&'a Leaf, ForestError> {
    match node {
        Node::Leaf(l) => Ok(l),
        Node::Internal {
            feature_id,
            bank_field,
            edges,
        } => {
            if bank_field.is_some() {
                return Err(ForestError::NestedBankFeature);
            }
            traverse_pns(&passing_edge(feature_id, edges, features)?.child, features)
        }
    }
}

/// Candidate leaves for a transaction blocked at a bank node: one leaf per
/// flag edge, each the unique leaf the transaction reaches below that edge.
/// Flag values are pairwise distinct by the edge-partition invariant.
pub fn candidate_leaves<'a>(
    blocked_node: &'a Node,
    features: &FeatureMap,
) -> Result<Vec<(&'a str, &'a Leaf)>, ForestError> {
    let Node::Internal { edges, bank_field, .. } = blocked_node else {
        return Err(ForestError::NestedBankFeature);
    };
    if bank_field.is_none() {
        return Err(ForestError::NestedBankFeature);
    }
    let mut out = Vec::with_capacity(edges.len());
    for edge in edges {
        let Predicate::Equals(flag) = &edge.test.predicate else {
            return Err(ForestError::InvalidFeature(
                "bank edge with a non-equality test".to_string(),
            ));
        };
        out.push((flag.as_str(), traverse_pns(&edge.child, features)?));
    }
    Ok(out)
}

/// Label-`label` transactions satisfying every test on the leaf's path
/// except the bank-feature test.
pub fn candidate_transactions<'a>(
    leaf: &Leaf,
    records: &'a [TxRecord],
    label: u8,
) -> Vec<&'a TxRecord> {
    records
        .iter()
        .filter(|r| r.label() == Some(label))
        .filter(|r| {
            leaf.pns_tests().all(|t| {
                r.features
                    .get(&t.feature_id)
                    .and_then(|v| t.passes(v))
                    .unwrap_or(false)
            })
        })
        .collect()
}

/// Distinct accounts appearing under `field` in the candidate transactions,
/// with multiplicities. Sorted by account id for determinism.
pub fn candidate_accounts(field: AccountField, txs: &[&TxRecord]) -> Vec<(String, u64)> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for rec in txs {
        *counts.entry(rec.tx.account(field).to_string()).or_insert(0) += 1;
    }
    counts.into_iter().collect()
}

/// Trusted-reference labeling and traversal over joined plaintext data.
/// Test/audit use only: nothing in the federated path calls into here.
pub mod oracle {
    use super::*;

    /// Traverse with full knowledge: bank nodes are resolved by looking the
    /// account's flag up in the joined table.
    pub fn traverse_joined<'a>(
        tree: &'a Tree,
        rec: &TxRecord,
        flag_of: &BTreeMap<String, String>,
    ) -> Result<&'a Leaf, ForestError> {
        let mut node = &tree.root;
        loop {
            match node {
                Node::Leaf(l) => return Ok(l),
                Node::Internal {
                    feature_id,
                    bank_field,
                    edges,
                } => {
                    let next = match bank_field {
                        None => &passing_edge(feature_id, edges, &rec.features)?.child,
                        Some(field) => {
                            let account = rec.tx.account(*field);
                            let flag = flag_of
                                .get(account)
                                .ok_or_else(|| ForestError::UnknownAccount(account.to_string()))?;
                            let value = FeatureValue::Cat(flag.clone());
                            let edge = edges
                                .iter()
                                .find(|e| e.test.passes(&value) == Some(true))
                                .ok_or_else(|| ForestError::MalformedTransaction {
                                    feature_id: feature_id.clone(),
                                    reason: format!("flag {flag} outside the feature domain"),
                                })?;
                            &edge.child
                        }
                    };
                    node = next;
                }
            }
        }
    }

    /// Centralized labeling: every leaf gets its stats and label from the
    /// plaintext rule over the joined per-tree training subsets.
    pub fn train(
        forest: &Forest,
        partitions: &[Vec<TxRecord>],
        flag_of: &BTreeMap<String, String>,
    ) -> Result<BTreeMap<LeafId, (LeafStats, u8)>, ForestError> {
        let mut stats: BTreeMap<LeafId, LeafStats> = forest
            .leaves()
            .iter()
            .map(|l| (l.id, LeafStats::default()))
            .collect();
        for (tree, subset) in forest.trees.iter().zip(partitions) {
            for rec in subset {
                let leaf = traverse_joined(tree, rec, flag_of)?;
                let entry = stats.get_mut(&leaf.id).expect("leaf id from this forest");
                match rec.label() {
                    Some(0) => entry.n0 += 1,
                    Some(1) => entry.n1 += 1,
                    _ => {
                        return Err(ForestError::MalformedTransaction {
                            feature_id: "label".to_string(),
                            reason: "training transaction without a 0/1 label".to_string(),
                        })
                    }
                }
            }
        }
        Ok(stats
            .into_iter()
            .map(|(id, s)| (id, (s, green_label(&s))))
            .collect())
    }
}

#[cfg(test)]
mod tests;
