//! Training orchestration: local preparation at the PNS, green-leaf
//! labeling, and the collaborative red-leaf labeling round.
//!
//! Red-leaf labeling per round:
//!   1. PNS builds, pads and encrypts two cuckoo tables per red leaf and
//!      sends the bundle (with the leaf's flag value in plaintext) to every
//!      bank.
//!   2. Each bank runs the intersection-sum against its flag partition,
//!      noises both counts, and sends the full list to the aggregator.
//!   3. The aggregator sums across banks under encryption and returns the
//!      aggregated count pairs to every bank.
//!   4. Every bank compares the counts under encryption and stores the
//!      encrypted label per leaf. The PNS receives nothing.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::data::{AccountRecord, Transaction, TxRecord};
use crate::datagen;
use crate::dp::{self, DpConfig};
use crate::forest::{self, FilterOutcome, LeafId, LeafStats};
use crate::he::{HeContext, IdCodec, PublicKey};
use crate::pisum::{self, CuckooParams};
use crate::seedstream;
use crate::simnet::{Bus, Party};

use super::{
    BankParty, FedRun, LeafCounts, Payload, PnsParty, ProtocolError, RoutingTable, TrainBundle,
    KIND_AGG_COUNTS, KIND_NOISY_COUNTS, KIND_TRAIN_BUNDLE,
};

/// Partition a bank's accounts by flag value, as id codes ready for the
/// encrypted probes.
pub fn bank_partition_by_flag(
    accounts: &[AccountRecord],
    codec: &IdCodec,
) -> BTreeMap<String, Vec<u64>> {
    let mut map: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for a in accounts {
        map.entry(a.flag.clone())
            .or_default()
            .push(codec.encode(&a.account_id));
    }
    map
}

/// Build the per-red-leaf bundles: candidate transactions and accounts per
/// label, cuckoo-hashed, padded and encrypted. One bundle per red leaf;
/// table shapes depend only on `(num_bins, hashes, sigma)`.
pub fn pns_prepare_training(
    ctx: &HeContext,
    pk: &PublicKey,
    pns: &PnsParty,
    cuckoo: CuckooParams,
    seed: u64,
) -> Result<Vec<TrainBundle>, ProtocolError> {
    let red: Vec<&forest::Leaf> = pns.forest.red_leaves();
    let bundles: Vec<Result<TrainBundle, ProtocolError>> = red
        .par_iter()
        .map(|leaf| {
            let field = leaf
                .bank_field
                .ok_or_else(|| ProtocolError::ProtocolViolation(format!(
                    "red leaf {} without a bank-field binding",
                    leaf.id
                )))?;
            let subset = &pns.partitions[leaf.id.tree as usize];
            let mut tables = Vec::with_capacity(2);
            for label in 0..2u8 {
                let cands = forest::candidate_transactions(leaf, subset, label);
                let accounts = forest::candidate_accounts(field, &cands);
                let entries: Vec<(u64, u64)> = accounts
                    .iter()
                    .map(|(id, c)| (pns.codec.encode(id), *c))
                    .collect();
                let stream = (u64::from(leaf.id.tree) << 34)
                    ^ (u64::from(leaf.id.leaf) << 2)
                    ^ u64::from(label);
                let mut rng = seedstream::rng(seed, "cuckoo", stream);
                let table = pisum::build_cuckoo(&entries, cuckoo, &mut rng)?;
                tables.push(pisum::pad_and_encrypt(&table, &pns.codec, ctx, pk, &mut rng)?);
            }
            let table1 = std::sync::Arc::new(tables.pop().expect("two tables"));
            let table0 = std::sync::Arc::new(tables.pop().expect("two tables"));
            Ok(TrainBundle {
                leaf: leaf.id,
                bank_feature: leaf.bank_feature.clone().expect("red leaf"),
                flag: leaf.bank_flag.clone().expect("red leaf"),
                table0,
                table1,
            })
        })
        .collect();
    bundles.into_iter().collect()
}

/// The collaborative labeling round. On return every bank holds one
/// encrypted label per red leaf.
pub fn run_get_private_labels(
    ctx: &HeContext,
    bus: &mut Bus<Payload>,
    pk: &PublicKey,
    bundles: Vec<TrainBundle>,
    banks: &mut [BankParty],
    dp_cfg: &DpConfig,
) -> Result<(), ProtocolError> {
    // An all-green forest needs no collaboration at all: no bundles, no
    // bank or aggregator messages.
    if bundles.is_empty() {
        return Ok(());
    }
    let n_leaves = bundles.len();

    // Step 1: PNS fans the bundles out to every bank.
    for bundle in bundles {
        for bank in banks.iter() {
            bus.send(
                Party::Pns,
                Party::Bank(bank.index),
                KIND_TRAIN_BUNDLE,
                Payload::TrainBundle(bundle.clone()),
            )?;
        }
    }

    // Step 2: each bank computes noisy encrypted counts per leaf and sends
    // the whole list to the aggregator.
    for bank in banks.iter() {
        let mut inbox = Vec::with_capacity(n_leaves);
        while let Some(msg) = bus.recv(Party::Bank(bank.index), Party::Pns) {
            let Payload::TrainBundle(b) = msg.payload else {
                return Err(ProtocolError::ProtocolViolation(
                    "bank expected a training bundle".to_string(),
                ));
            };
            inbox.push(b);
        }
        let counts: Vec<Result<LeafCounts, ProtocolError>> = inbox
            .par_iter()
            .map(|bundle| {
                let codes = bank.flag_codes(&bundle.flag);
                let (raw0, raw1) = pisum::bank_intersection_sum(
                    ctx,
                    pk,
                    (&bundle.table0, &bundle.table1),
                    codes,
                )?;
                let mut rng0 = dp::noise_rng(dp_cfg, bank.index, bundle.leaf, 0);
                let n0 = dp::add_dp_noise(ctx, &raw0, dp_cfg, &mut rng0)?;
                let mut rng1 = dp::noise_rng(dp_cfg, bank.index, bundle.leaf, 1);
                let n1 = dp::add_dp_noise(ctx, &raw1, dp_cfg, &mut rng1)?;
                Ok(LeafCounts {
                    leaf: bundle.leaf,
                    n0,
                    n1,
                })
            })
            .collect();
        let counts: Vec<LeafCounts> = counts.into_iter().collect::<Result<_, _>>()?;
        bus.send(
            Party::Bank(bank.index),
            Party::Aggregator,
            KIND_NOISY_COUNTS,
            Payload::NoisyCounts(counts),
        )?;
    }

    // Step 3: the aggregator sums across banks under encryption.
    let mut aggregated: Option<Vec<LeafCounts>> = None;
    for bank in banks.iter() {
        let msg = bus
            .recv(Party::Aggregator, Party::Bank(bank.index))
            .ok_or_else(|| {
                ProtocolError::ProtocolViolation(format!("no counts from bank {}", bank.index))
            })?;
        let Payload::NoisyCounts(list) = msg.payload else {
            return Err(ProtocolError::ProtocolViolation(
                "aggregator expected noisy counts".to_string(),
            ));
        };
        aggregated = Some(match aggregated {
            None => list,
            Some(acc) => {
                if acc.len() != list.len() {
                    return Err(ProtocolError::ProtocolViolation(
                        "banks disagree on the red-leaf list".to_string(),
                    ));
                }
                acc.iter()
                    .zip(&list)
                    .map(|(a, b)| {
                        if a.leaf != b.leaf {
                            return Err(ProtocolError::ProtocolViolation(
                                "banks disagree on the red-leaf order".to_string(),
                            ));
                        }
                        Ok(LeafCounts {
                            leaf: a.leaf,
                            n0: ctx.add(&a.n0, &b.n0)?,
                            n1: ctx.add(&a.n1, &b.n1)?,
                        })
                    })
                    .collect::<Result<_, ProtocolError>>()?
            }
        });
    }
    let aggregated = aggregated.unwrap_or_default();

    // Every bank gets the aggregated list and derives the labels on its
    // own; one copy would suffice, the redundancy keeps the banks
    // symmetric.
    for bank in banks.iter() {
        bus.send(
            Party::Aggregator,
            Party::Bank(bank.index),
            KIND_AGG_COUNTS,
            Payload::AggregatedCounts(aggregated.clone()),
        )?;
    }

    // Step 4: every bank compares under encryption and stores its labels.
    for bank in banks.iter_mut() {
        let msg = bus
            .recv(Party::Bank(bank.index), Party::Aggregator)
            .ok_or_else(|| {
                ProtocolError::ProtocolViolation("bank missing aggregated counts".to_string())
            })?;
        let Payload::AggregatedCounts(list) = msg.payload else {
            return Err(ProtocolError::ProtocolViolation(
                "bank expected aggregated counts".to_string(),
            ));
        };
        for counts in &list {
            // Label 1 iff the label-1 count strictly exceeds the label-0
            // count, matching the plaintext rule including its tie.
            let label_ct = ctx.compare(&counts.n1, &counts.n0)?;
            bank.labels.insert(counts.leaf, label_ct);
        }
    }
    Ok(())
}

fn label_green_leaves(pns: &mut PnsParty) -> Result<(), ProtocolError> {
    let mut stats: BTreeMap<LeafId, LeafStats> = BTreeMap::new();
    for (tree, subset) in pns.forest.trees.iter().zip(&pns.partitions) {
        for rec in subset {
            if let FilterOutcome::Leaf(leaf) = forest::filter(tree, &rec.features)? {
                let s = stats.entry(leaf.id).or_default();
                match rec.label() {
                    Some(0) => s.n0 += 1,
                    Some(1) => s.n1 += 1,
                    _ => {
                        return Err(ProtocolError::ProtocolViolation(
                            "unlabeled training transaction".to_string(),
                        ))
                    }
                }
            }
        }
    }
    pns.forest.for_each_leaf_mut(|leaf| {
        if leaf.kind == forest::LeafKind::Green {
            let s = stats.get(&leaf.id).copied().unwrap_or_default();
            leaf.label = Some(forest::green_label(&s));
        }
    });
    Ok(())
}

/// Default table sizing when `cuckoo.num_bins` is zero: twice the largest
/// per-leaf entry count a table can hold, which is bounded both by the
/// per-tree subset size and by the number of distinct accounts the PNS
/// transactions reference. The derived dimension leaks only the scale of
/// the PNS's own unique-account count (the table is linear in it); runs
/// that must be shape-identical across datasets pin `cuckoo.num_bins`
/// explicitly.
fn auto_cuckoo(config: &RunConfig, raw_tx_count: usize, prepared: &[TxRecord]) -> CuckooParams {
    if config.cuckoo.num_bins > 0 {
        return config.cuckoo;
    }
    let worst_prepared = (raw_tx_count as f64 * config.oversample_ratio).ceil() as usize;
    let per_tree = worst_prepared.div_ceil(config.tau as usize);
    let unique_accounts = prepared
        .iter()
        .flat_map(|r| [r.tx.ordering_account.as_str(), r.tx.beneficiary_account.as_str()])
        .collect::<std::collections::HashSet<_>>()
        .len();
    config.cuckoo.resolved(per_tree.min(unique_accounts.max(1)))
}

pub(super) fn run_training(
    config: &RunConfig,
    txs: &[Transaction],
    bank_tables: &[Vec<AccountRecord>],
) -> Result<FedRun, ProtocolError> {
    let ctx = HeContext::new(config.he.clone())?;
    let mut key_rng = seedstream::rng(config.seed, "keys", 0);
    let keys = ctx.keygen(&mut key_rng);

    // Shared id codec: a salt making the sigma-bit code injective over the
    // union of account ids seen by any party. Agreeing on it is a
    // simulation-level setup step standing in for equality tests on full
    // account numbers.
    let universe: Vec<&str> = bank_tables
        .iter()
        .flatten()
        .map(|a| a.account_id.as_str())
        .chain(
            txs.iter()
                .flat_map(|t| [t.ordering_account.as_str(), t.beneficiary_account.as_str()]),
        )
        .collect();
    let codec = IdCodec::with_injective_salt(config.sigma_bits, universe, config.seed)?;

    // PNS-local preparation: features, capping (with DP), oversampling,
    // disjoint per-tree partitioning.
    let mut records = datagen::derive_features(txs, &config.data.pns_features);
    let dp_cfg = config.dp();
    if dp_cfg.enabled {
        let mut cap_rng = seedstream::rng(dp_cfg.seed, "cap", 0);
        let kept = dp::cap_indices(txs, dp_cfg.bound, &mut cap_rng);
        records = kept.into_iter().map(|i| records[i].clone()).collect();
    }
    if config.oversample_ratio > 1.0 {
        let mut os_rng = seedstream::rng(config.seed, "oversample", 0);
        records = datagen::oversample_minority(&records, config.oversample_ratio, &mut os_rng);
    }
    let mut part_rng = seedstream::rng(config.seed, "partition", 0);
    let partitions = dp::partition_disjoint(&records, config.tau, &mut part_rng)?;

    let pns_specs = datagen::pns_feature_specs(&config.data);
    let bank_specs = datagen::bank_feature_specs(&config.data);
    let forest = forest::build_forest(
        config.forest_seed(),
        config.tau,
        config.height,
        &pns_specs,
        &bank_specs,
    )?;

    let mut pns = PnsParty {
        keys,
        forest,
        records,
        partitions,
        codec,
    };
    label_green_leaves(&mut pns)?;

    let mut banks: Vec<BankParty> = bank_tables
        .iter()
        .enumerate()
        .map(|(j, table)| BankParty::new(j as u32, table.clone(), &pns.codec))
        .collect();

    let mut bus = Bus::new(FedRun::parties(config.data.banks));
    let cuckoo = auto_cuckoo(config, txs.len(), &pns.records);
    let bundles = pns_prepare_training(&ctx, &pns.keys.public, &pns, cuckoo, config.seed)?;
    run_get_private_labels(&ctx, &mut bus, &pns.keys.public, bundles, &mut banks, &dp_cfg)?;

    let routing = RoutingTable {
        prefixes: config.prefix_map(),
        broadcast_fallback: config.routing.broadcast_fallback,
    };
    let mut run = FedRun {
        config: config.clone(),
        ctx,
        bus,
        pns,
        banks,
        routing,
        cuckoo,
        train_counters: crate::he::OpCounts::default(),
        train_log_len: 0,
    };
    run.mark_training_done();
    Ok(run)
}
