//! Private intersection-sum over cuckoo-hashed encrypted tables.
//!
//! The PNS inserts its per-leaf candidate accounts `(id code, count)` into a
//! cuckoo table with `num_bins * hashes` bins, pads every remaining bin with
//! a dummy, and encrypts the table element-wise. A bank then probes the
//! candidate bins of each of its own (flag-filtered) accounts, runs a
//! private equality test against the stored id, and accumulates
//! `PET * count` under encryption. Padding makes the table shape a pure
//! function of the public parameters, and dummies can never match a real
//! account because their codes live in a reserved range.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::he::{BitCiphertext, Ciphertext, HeContext, HeError, IdCodec, PublicKey};

#[derive(Debug, Error, PartialEq)]
pub enum PiSumError {
    #[error("cuckoo table full after {attempts} salt retries ({entries} entries, {bins} bins)")]
    TableFull {
        attempts: u32,
        entries: usize,
        bins: usize,
    },
    #[error("duplicate id code {0} among table entries")]
    DuplicateIdCode(u64),
    #[error("id code {code} does not fit the table's {width}-bit real-code range")]
    CodeOutOfRange { code: u64, width: usize },
    #[error(transparent)]
    He(#[from] HeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CuckooParams {
    /// Bins per hash function; the table has `num_bins * hashes` bins.
    pub num_bins: usize,
    /// Number of hash functions.
    pub hashes: usize,
    /// Eviction-chain bound per insertion.
    pub max_evictions: usize,
}

impl Default for CuckooParams {
    fn default() -> Self {
        Self {
            num_bins: 0, // 0 = derive from expected entries
            hashes: 3,
            max_evictions: 500,
        }
    }
}

impl CuckooParams {
    /// Resolve `num_bins = 0` to the default sizing rule: twice the expected
    /// entry count per hash, keeping the per-hash load factor at or below
    /// one half.
    pub fn resolved(&self, expected_entries: usize) -> CuckooParams {
        let num_bins = if self.num_bins > 0 {
            self.num_bins
        } else {
            2 * expected_entries.max(2)
        };
        CuckooParams {
            num_bins,
            hashes: self.hashes,
            max_evictions: self.max_evictions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CuckooEntry {
    pub id_code: u64,
    pub count: u64,
    pub dummy: bool,
}

/// A built (not yet padded) cuckoo table. Every real entry sits in one of
/// the candidate bins derived from its id code and the table salts.
#[derive(Debug, Clone, PartialEq)]
pub struct CuckooTable {
    bins: Vec<Option<CuckooEntry>>,
    salts: Vec<u64>,
    params: CuckooParams,
}

fn mix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 33)).wrapping_mul(0xff51_afd7_ed55_8ccd);
    x = (x ^ (x >> 33)).wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^ (x >> 33)
}

pub fn bin_index(salt: u64, id_code: u64, total_bins: usize) -> usize {
    (mix64(salt ^ mix64(id_code)) % total_bins as u64) as usize
}

fn candidate_bins_with(salts: &[u64], id_code: u64, total_bins: usize) -> Vec<usize> {
    let mut bins: Vec<usize> = salts
        .iter()
        .map(|&s| bin_index(s, id_code, total_bins))
        .collect();
    // Distinct salts can land on the same bin; a probe set must visit each
    // bin once so a matching entry is never counted twice.
    bins.sort_unstable();
    bins.dedup();
    bins
}

impl CuckooTable {
    pub fn total_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn salts(&self) -> &[u64] {
        &self.salts
    }

    pub fn params(&self) -> CuckooParams {
        self.params
    }

    pub fn get(&self, bin: usize) -> Option<&CuckooEntry> {
        self.bins[bin].as_ref()
    }

    /// Deduplicated candidate bins for an id code.
    pub fn candidate_bins(&self, id_code: u64) -> Vec<usize> {
        candidate_bins_with(&self.salts, id_code, self.total_bins())
    }

    /// Probe the candidate bins for a real entry with this code.
    pub fn lookup(&self, id_code: u64) -> Option<&CuckooEntry> {
        self.candidate_bins(id_code)
            .into_iter()
            .filter_map(|b| self.bins[b].as_ref())
            .find(|e| !e.dummy && e.id_code == id_code)
    }
}

fn try_build(
    entries: &[(u64, u64)],
    params: CuckooParams,
    salts: Vec<u64>,
    rng: &mut impl Rng,
) -> Option<CuckooTable> {
    let total = params.num_bins * params.hashes;
    let mut bins: Vec<Option<CuckooEntry>> = vec![None; total];
    for &(id_code, count) in entries {
        let mut item = CuckooEntry {
            id_code,
            count,
            dummy: false,
        };
        let mut placed = false;
        for _ in 0..=params.max_evictions {
            let cands = candidate_bins_with(&salts, item.id_code, total);
            if let Some(&free) = cands.iter().find(|&&b| bins[b].is_none()) {
                bins[free] = Some(item);
                placed = true;
                break;
            }
            // All candidates occupied: evict a random one and re-seat it.
            let victim_bin = cands[rng.gen_range(0..cands.len())];
            let evicted = bins[victim_bin].take().expect("occupied candidate");
            bins[victim_bin] = Some(item);
            item = evicted;
        }
        if !placed {
            return None;
        }
    }
    Some(CuckooTable {
        bins,
        salts,
        params,
    })
}

/// Insert `(id code, count)` pairs, retrying with fresh salts up to three
/// times before reporting the table full. Ids must be distinct.
pub fn build_cuckoo(
    entries: &[(u64, u64)],
    params: CuckooParams,
    rng: &mut impl Rng,
) -> Result<CuckooTable, PiSumError> {
    let mut seen = std::collections::HashSet::with_capacity(entries.len());
    for &(code, _) in entries {
        if !seen.insert(code) {
            return Err(PiSumError::DuplicateIdCode(code));
        }
    }
    let total = params.num_bins * params.hashes;
    if total < entries.len() {
        return Err(PiSumError::TableFull {
            attempts: 0,
            entries: entries.len(),
            bins: total,
        });
    }
    const SALT_RETRIES: u32 = 3;
    for attempt in 1..=SALT_RETRIES {
        let salts: Vec<u64> = (0..params.hashes).map(|_| rng.next_u64()).collect();
        if let Some(table) = try_build(entries, params, salts, rng) {
            return Ok(table);
        }
        let _ = attempt;
    }
    Err(PiSumError::TableFull {
        attempts: SALT_RETRIES,
        entries: entries.len(),
        bins: total,
    })
}

/// One encrypted bin: the bit-encoded id and its count.
#[derive(Debug, Clone)]
pub struct EncEntry {
    pub id: BitCiphertext,
    pub count: Ciphertext,
}

/// An element-wise encryption of a padded cuckoo table. Dimensions depend
/// only on `(num_bins, hashes, sigma)`, never on the real entries.
#[derive(Debug, Clone)]
pub struct EncTable {
    pub bins: Vec<EncEntry>,
    pub salts: Vec<u64>,
    pub params: CuckooParams,
    pub sigma: usize,
}

impl EncTable {
    pub fn total_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn candidate_bins(&self, id_code: u64) -> Vec<usize> {
        candidate_bins_with(&self.salts, id_code, self.total_bins())
    }
}

/// Pad every empty bin with a zero-count dummy from the reserved code range
/// and encrypt the whole table element-wise.
pub fn pad_and_encrypt(
    table: &CuckooTable,
    codec: &IdCodec,
    ctx: &HeContext,
    pk: &PublicKey,
    rng: &mut impl RngCore,
) -> Result<EncTable, PiSumError> {
    let sigma = codec.width();
    let mut bins = Vec::with_capacity(table.total_bins());
    for bin in &table.bins {
        let entry = match bin {
            Some(e) => {
                if e.id_code >= codec.dummy_base() {
                    return Err(PiSumError::CodeOutOfRange {
                        code: e.id_code,
                        width: sigma,
                    });
                }
                *e
            }
            None => CuckooEntry {
                id_code: codec.dummy_code(rng),
                count: 0,
                dummy: true,
            },
        };
        bins.push(EncEntry {
            id: ctx.encrypt_bits(pk, entry.id_code, sigma)?,
            count: ctx.encrypt(pk, &[entry.count as f64])?,
        });
    }
    Ok(EncTable {
        bins,
        salts: table.salts.clone(),
        params: table.params,
        sigma,
    })
}

/// Bank-side core of the protocol: for each own account code, probe its
/// candidate bins in both tables and accumulate `PET(id, code) * count`.
/// The two outputs decrypt to the label-0 and label-1 intersection sums.
/// The number of HE operations depends only on the bank's account set and
/// the table dimensions, never on how many entries actually match.
pub fn bank_intersection_sum(
    ctx: &HeContext,
    pk: &PublicKey,
    tables: (&EncTable, &EncTable),
    bank_codes: &[u64],
) -> Result<(Ciphertext, Ciphertext), PiSumError> {
    let sum0 = one_table_sum(ctx, pk, tables.0, bank_codes)?;
    let sum1 = one_table_sum(ctx, pk, tables.1, bank_codes)?;
    Ok((sum0, sum1))
}

fn one_table_sum(
    ctx: &HeContext,
    pk: &PublicKey,
    table: &EncTable,
    bank_codes: &[u64],
) -> Result<Ciphertext, PiSumError> {
    let mut acc = ctx.encrypt_zero(pk)?;
    for &code in bank_codes {
        for bin in table.candidate_bins(code) {
            let entry = &table.bins[bin];
            let mask = ctx.pet(&entry.id, code, table.sigma)?;
            let term = ctx.mul(&mask, &entry.count)?;
            acc = ctx.add(&acc, &term)?;
        }
    }
    Ok(acc)
}
