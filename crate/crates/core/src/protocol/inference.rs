//! Inference orchestration: local traversal for green paths, an encrypted
//! candidate-leaf query to the routed bank (or all banks) for red paths,
//! and a majority vote over the per-tree labels.

use crate::data::TxRecord;
use crate::forest::{self, FilterOutcome, LeafId};
use crate::he::{BitCiphertext, Ciphertext, HeContext, PublicKey};
use crate::simnet::Party;

use super::{
    BankParty, FedRun, InferAnswer, InferQuery, Payload, Prediction, ProtocolError,
    KIND_INFER_ANSWER, KIND_INFER_QUERY,
};

/// Bank-side answer to one blocked-path query: for each candidate leaf,
/// sum the equality tests of the encrypted account against the bank's
/// accounts with that leaf's flag, multiply by the stored encrypted label,
/// and add everything up. Exactly one candidate can match (flags are
/// pairwise distinct and the account has one flag), so the result decrypts
/// to the matched leaf's label, or to 0 when the bank does not hold the
/// account.
pub fn bank_infer_answer(
    ctx: &HeContext,
    pk: &PublicKey,
    bank: &BankParty,
    account_bits: &BitCiphertext,
    candidates: &[(LeafId, String)],
) -> Result<Ciphertext, ProtocolError> {
    let mut chi = ctx.encrypt_zero(pk)?;
    for (leaf, flag) in candidates {
        let label_ct = bank
            .labels
            .get(leaf)
            .ok_or(ProtocolError::UnknownLeafId(*leaf))?;
        let mut hits = ctx.encrypt_zero(pk)?;
        for &code in bank.flag_codes(flag) {
            let pet = ctx.pet(account_bits, code, account_bits.width())?;
            hits = ctx.add(&hits, &pet)?;
        }
        let term = ctx.mul(&hits, label_ct)?;
        chi = ctx.add(&chi, &term)?;
    }
    Ok(chi)
}

/// Banks a blocked query goes to: the routed bank by account prefix, or
/// every bank under broadcast fallback.
fn targets(run: &FedRun, account: &str) -> Result<Vec<u32>, ProtocolError> {
    let routed = run.routing.route(account);
    match routed {
        Some(bank) if (bank as usize) < run.banks.len() => Ok(vec![bank]),
        _ if run.routing.broadcast_fallback => Ok((0..run.banks.len() as u32).collect()),
        _ => Err(ProtocolError::NoResponse {
            account: account.to_string(),
            routed,
        }),
    }
}

/// Label one transaction through every tree; green paths resolve locally,
/// red paths through the banks. Returns the per-tree labels.
pub fn pns_infer_tree_labels(
    run: &mut FedRun,
    rec: &TxRecord,
    next_query_id: &mut u64,
) -> Result<Vec<u8>, ProtocolError> {
    let tau = run.pns.forest.trees.len();
    let mut labels = Vec::with_capacity(tau);
    for tree_idx in 0..tau {
        let tree = &run.pns.forest.trees[tree_idx];
        match forest::filter(tree, &rec.features)? {
            FilterOutcome::Leaf(leaf) => {
                let label = leaf.label.ok_or_else(|| {
                    ProtocolError::ProtocolViolation(format!(
                        "green leaf {} has no trained label",
                        leaf.id
                    ))
                })?;
                labels.push(label);
            }
            FilterOutcome::Blocked {
                bank_field, node, ..
            } => {
                let candidates: Vec<(LeafId, String)> = forest::candidate_leaves(node, &rec.features)?
                    .into_iter()
                    .map(|(flag, leaf)| (leaf.id, flag.to_string()))
                    .collect();
                let account = rec.tx.account(bank_field).to_string();
                let banks = targets(run, &account)?;
                let query_id = *next_query_id;
                *next_query_id += 1;
                let bits = run.ctx.encrypt_bits(
                    &run.pns.keys.public,
                    run.pns.codec.encode(&account),
                    run.pns.codec.width(),
                )?;
                for &j in &banks {
                    run.bus.send(
                        Party::Pns,
                        Party::Bank(j),
                        KIND_INFER_QUERY,
                        Payload::InferQuery(InferQuery {
                            query_id,
                            account_bits: bits.clone(),
                            candidates: candidates.clone(),
                        }),
                    )?;
                }
                // Each queried bank answers; non-holders contribute an
                // encryption of zero, so the sum is the matched label.
                let mut response: Option<Ciphertext> = None;
                for &j in &banks {
                    let msg = run
                        .bus
                        .recv(Party::Bank(j), Party::Pns)
                        .ok_or_else(|| {
                            ProtocolError::ProtocolViolation(format!("bank {j} lost a query"))
                        })?;
                    let Payload::InferQuery(query) = msg.payload else {
                        return Err(ProtocolError::ProtocolViolation(
                            "bank expected an inference query".to_string(),
                        ));
                    };
                    let chi = bank_infer_answer(
                        &run.ctx,
                        &run.pns.keys.public,
                        &run.banks[j as usize],
                        &query.account_bits,
                        &query.candidates,
                    )?;
                    run.bus.send(
                        Party::Bank(j),
                        Party::Pns,
                        KIND_INFER_ANSWER,
                        Payload::InferAnswer(InferAnswer {
                            query_id: query.query_id,
                            chi,
                        }),
                    )?;
                    let answer = run
                        .bus
                        .recv(Party::Pns, Party::Bank(j))
                        .ok_or_else(|| {
                            ProtocolError::ProtocolViolation(format!("bank {j} sent no answer"))
                        })?;
                    let Payload::InferAnswer(a) = answer.payload else {
                        return Err(ProtocolError::ProtocolViolation(
                            "pns expected an inference answer".to_string(),
                        ));
                    };
                    if a.query_id != query_id {
                        return Err(ProtocolError::ProtocolViolation(
                            "answer does not match the outstanding query".to_string(),
                        ));
                    }
                    response = Some(match response {
                        None => a.chi,
                        Some(acc) => run.ctx.add(&acc, &a.chi)?,
                    });
                }
                let chi = response.expect("at least one target bank");
                let value = FedRun::pns_decrypt_slot(
                    &run.ctx,
                    &mut run.bus,
                    &run.pns.keys.secret,
                    &chi,
                    "tree_label",
                )?;
                labels.push(u8::from(value > 0.5));
            }
        }
    }
    Ok(labels)
}

/// Majority-vote prediction for one transaction.
pub fn pns_infer(
    run: &mut FedRun,
    rec: &TxRecord,
    next_query_id: &mut u64,
) -> Result<(u8, f64, f64), ProtocolError> {
    let labels = pns_infer_tree_labels(run, rec, next_query_id)?;
    let (label, confidence) = forest::majority_vote(&labels)?;
    let score = labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len() as f64;
    Ok((label, confidence, score))
}

pub(super) fn run_inference(
    run: &mut FedRun,
    records: &[TxRecord],
) -> Result<Vec<Prediction>, ProtocolError> {
    let mut next_query_id = 0u64;
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let (label, confidence, score) = pns_infer(run, rec, &mut next_query_id)?;
        out.push(Prediction {
            tx_id: rec.tx.tx_id.clone(),
            label,
            confidence,
            score,
        });
    }
    Ok(out)
}
