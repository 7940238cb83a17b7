//! Bounded-sensitivity differential privacy.
//!
//! Capping per-account transaction multiplicity at `bound` makes `bound`
//! the global sensitivity of any leaf count, so each bank can protect its
//! contribution with continuous Laplace noise of scale `bound / epsilon`.
//! Training each tree on a disjoint transaction sample lets the whole
//! forest share a single epsilon by parallel composition.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AccountField, Transaction};
use crate::forest::LeafId;
use crate::he::{Ciphertext, HeContext, HeError};
use crate::seedstream;

#[derive(Debug, Error, PartialEq)]
pub enum DpError {
    #[error("invalid DP config: {0}")]
    InvalidConfig(String),
    #[error("cannot partition into zero subsets")]
    ZeroPartitions,
    #[error(transparent)]
    He(#[from] HeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub enabled: bool,
    pub epsilon: f64,
    pub bound: u64,
    pub seed: u64,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            epsilon: 1.0,
            bound: 5,
            seed: 0,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<(), DpError> {
        if self.enabled && (self.epsilon.is_nan() || self.epsilon <= 0.0) {
            return Err(DpError::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.bound == 0 {
            return Err(DpError::InvalidConfig("bound must be >= 1".into()));
        }
        Ok(())
    }

    pub fn noise_scale(&self) -> f64 {
        self.bound as f64 / self.epsilon
    }
}

/// Cap per-account multiplicity: any account appearing in more than `bound`
/// transactions (under either account field) keeps a uniform sample of
/// `bound` of them. Capping one field can disturb the other, so passes
/// repeat until both hold. Returns the retained indices in original order.
pub fn cap_indices(txs: &[Transaction], bound: u64, rng: &mut impl Rng) -> Vec<usize> {
    let mut kept: Vec<usize> = (0..txs.len()).collect();
    loop {
        let mut changed = false;
        for field in [AccountField::Ordering, AccountField::Beneficiary] {
            let mut by_account: std::collections::BTreeMap<&str, Vec<usize>> =
                std::collections::BTreeMap::new();
            for &i in &kept {
                by_account
                    .entry(txs[i].account(field))
                    .or_default()
                    .push(i);
            }
            let mut drop: std::collections::BTreeSet<usize> = std::collections::BTreeSet::new();
            for (_, mut indices) in by_account {
                if indices.len() as u64 > bound {
                    indices.shuffle(rng);
                    for &i in &indices[bound as usize..] {
                        drop.insert(i);
                    }
                }
            }
            if !drop.is_empty() {
                changed = true;
                kept.retain(|i| !drop.contains(i));
            }
        }
        if !changed {
            return kept;
        }
    }
}

/// Capped copy of the transaction table.
pub fn cap_transactions(txs: &[Transaction], bound: u64, rng: &mut impl Rng) -> Vec<Transaction> {
    cap_indices(txs, bound, rng)
        .into_iter()
        .map(|i| txs[i].clone())
        .collect()
}

/// Check the capping invariant on a transaction table.
pub fn max_account_multiplicity(txs: &[Transaction]) -> u64 {
    let mut counts: std::collections::HashMap<(&str, u8), u64> = std::collections::HashMap::new();
    for tx in txs {
        *counts.entry((tx.ordering_account.as_str(), 0)).or_insert(0) += 1;
        *counts
            .entry((tx.beneficiary_account.as_str(), 1))
            .or_insert(0) += 1;
    }
    counts.values().copied().max().unwrap_or(0)
}

/// One continuous Laplace(0, scale) draw via inverse CDF.
pub fn laplace_sample(rng: &mut impl RngCore, scale: f64) -> f64 {
    // u uniform in (-1/2, 1/2]; x = -scale * sgn(u) * ln(1 - 2|u|).
    let u: f64 = rand::Rng::gen_range(rng, -0.5..0.5);
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Closed-form Laplace(0, scale) CDF, used as the test oracle.
pub fn laplace_cdf(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / scale).exp()
    } else {
        1.0 - 0.5 * (-x / scale).exp()
    }
}

/// Dedicated noise stream for one `(bank, leaf, label)` cell, so draws are
/// independent of evaluation order.
pub fn noise_rng(cfg: &DpConfig, bank: u32, leaf: LeafId, label: u8) -> ChaCha12Rng {
    let cell = (u64::from(bank) << 40)
        ^ (u64::from(leaf.tree) << 20)
        ^ (u64::from(leaf.leaf) << 2)
        ^ u64::from(label);
    seedstream::rng(cfg.seed, "dp-noise", cell)
}

/// Homomorphically add one fresh Laplace sample (slot 0) to a count.
/// Disabled configs pass the ciphertext through untouched.
pub fn add_dp_noise(
    ctx: &HeContext,
    ct: &Ciphertext,
    cfg: &DpConfig,
    rng: &mut impl RngCore,
) -> Result<Ciphertext, DpError> {
    if !cfg.enabled {
        return Ok(ct.clone());
    }
    let noise = laplace_sample(rng, cfg.noise_scale());
    Ok(ctx.add_plain(ct, &[noise])?)
}

/// Split items into `tau` pairwise-disjoint subsets of near-equal size
/// (sizes differ by at most one) covering the whole input.
pub fn partition_disjoint<T: Clone>(
    items: &[T],
    tau: u32,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<T>>, DpError> {
    if tau == 0 {
        return Err(DpError::ZeroPartitions);
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(rng);
    let tau = tau as usize;
    let base = items.len() / tau;
    let extra = items.len() % tau;
    let mut out = Vec::with_capacity(tau);
    let mut cursor = 0;
    for part in 0..tau {
        let size = base + usize::from(part < extra);
        let subset = order[cursor..cursor + size]
            .iter()
            .map(|&i| items[i].clone())
            .collect();
        cursor += size;
        out.push(subset);
    }
    Ok(out)
}

/// Total privacy budget for a forest of `tau` trees at per-tree `epsilon`:
/// disjoint training subsets compose in parallel, otherwise sequentially.
pub fn budget_report(tau: u32, epsilon: f64, disjoint: bool) -> f64 {
    if disjoint {
        epsilon
    } else {
        f64::from(tau) * epsilon
    }
}
