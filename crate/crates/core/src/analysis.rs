//! Closed-form and Monte Carlo red-leaf expectations, HE-operation cost
//! reporting, and classification metrics.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::AccountField;
use crate::forest::{self, FeatureSpec, LeafKind};
use crate::he::OpCounts;
use crate::seedstream;
use crate::simnet::LogRecord;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("condition pools are empty")]
    DomainError,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Expected number of red leaves in a forest of `tau` binary trees of
/// height `h` drawn from `c_s` PNS conditions and `c_b` bank conditions:
/// `tau * 2^h * (1 - (c_s / (c_s + c_b))^h)`.
pub fn expected_red_leaves(c_s: u64, c_b: u64, h: u32, tau: u32) -> Result<f64, AnalysisError> {
    if c_s + c_b == 0 {
        return Err(AnalysisError::DomainError);
    }
    if h == 0 || tau == 0 {
        return Err(AnalysisError::InvalidArgument(
            "height and tree count must be >= 1".into(),
        ));
    }
    let ratio = c_s as f64 / (c_s + c_b) as f64;
    Ok(f64::from(tau) * (2f64).powi(h as i32) * (1.0 - ratio.powi(h as i32)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: u64,
}

/// Empirical red-leaf count per tree, over trees sampled with the real
/// builder on synthetic pools of binary conditions (`c_s` numeric PNS
/// features, `c_b` two-valued bank flags).
pub fn monte_carlo_red_leaves(
    seed: u64,
    c_s: u64,
    c_b: u64,
    h: u32,
    trials: u64,
) -> Result<McEstimate, AnalysisError> {
    if c_s == 0 {
        // The builder needs a PNS pool to draw from below bank nodes.
        return Err(AnalysisError::InvalidArgument(
            "monte carlo needs c_s >= 1".into(),
        ));
    }
    if h == 0 || trials == 0 {
        return Err(AnalysisError::InvalidArgument(
            "height and trials must be >= 1".into(),
        ));
    }
    let pns: Vec<FeatureSpec> = (0..c_s)
        .map(|i| FeatureSpec::pns_numeric(&format!("s{i}"), 0.0, 1.0))
        .collect();
    let bank: Vec<FeatureSpec> = (0..c_b)
        .map(|i| {
            FeatureSpec::bank_flag(&format!("b{i}"), AccountField::Ordering, &["0", "1"])
        })
        .collect();
    let counts: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = seedstream::rng(seed, "mc-red-leaves", trial);
            let tree = forest::build_tree(&mut rng, &pns, &bank, h, 0)
                .expect("synthetic pools are valid");
            tree.leaves()
                .iter()
                .filter(|l| l.kind == LeafKind::Red)
                .count() as f64
        })
        .collect();
    let n = trials as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
    Ok(McEstimate {
        mean,
        stderr: (var / n).sqrt(),
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub average_precision: f64,
}

/// Threshold metrics from predicted labels plus ranking average precision
/// from anomaly scores (higher = more anomalous). Ties in score rank in
/// input order.
pub fn evaluate(labels: &[u8], scores: &[f64], truth: &[u8]) -> Result<Metrics, AnalysisError> {
    if labels.len() != truth.len() || scores.len() != truth.len() || truth.is_empty() {
        return Err(AnalysisError::InvalidArgument(
            "labels, scores and truth must be equal-length and non-empty".into(),
        ));
    }
    let mut tp = 0u64;
    let mut tn = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (&p, &t) in labels.iter().zip(truth) {
        match (p, t) {
            (1, 1) => tp += 1,
            (0, 0) => tn += 1,
            (1, 0) => fp += 1,
            _ => fn_ += 1,
        }
    }
    let n = truth.len() as f64;
    let accuracy = (tp + tn) as f64 / n;
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };

    let positives = truth.iter().filter(|&&t| t == 1).count();
    let average_precision = if positives == 0 {
        0.0
    } else {
        let mut order: Vec<usize> = (0..truth.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
        let mut hits = 0u64;
        let mut ap = 0.0;
        for (rank, &i) in order.iter().enumerate() {
            if truth[i] == 1 {
                hits += 1;
                ap += hits as f64 / (rank + 1) as f64;
            }
        }
        ap / positives as f64
    };

    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
        average_precision,
    })
}

/// Per-phase homomorphic work and traffic, assembled from counter snapshots
/// and the bus log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseCost {
    pub he: OpCounts,
    pub messages: u64,
    /// Ciphertext items per directed party pair ("pns->bank0").
    pub ciphertexts_sent: BTreeMap<String, u64>,
    /// Bit-encoded ciphertext groups per directed party pair.
    pub bit_ciphertexts_sent: BTreeMap<String, u64>,
}

impl PhaseCost {
    pub fn from_log(he: OpCounts, log: &[LogRecord]) -> Self {
        let mut messages = 0;
        let mut ciphertexts_sent: BTreeMap<String, u64> = BTreeMap::new();
        let mut bit_ciphertexts_sent: BTreeMap<String, u64> = BTreeMap::new();
        for record in log {
            let LogRecord::Msg { from, to, shape, .. } = record else {
                continue;
            };
            messages += 1;
            let pair = format!("{from}->{to}");
            let cts = shape.count_of("ciphertext");
            if cts > 0 {
                *ciphertexts_sent.entry(pair.clone()).or_default() += cts;
            }
            let bits = shape.count_of("bit_ciphertext");
            if bits > 0 {
                *bit_ciphertexts_sent.entry(pair).or_default() += bits;
            }
        }
        Self {
            he,
            messages,
            ciphertexts_sent,
            bit_ciphertexts_sent,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub train: PhaseCost,
    pub infer: PhaseCost,
}

impl CostReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cost report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_matches_the_hand_computed_values() {
        // 12 * 2^6 * (1 - 10^6 / 12^6); rounds to the well-known ~511.
        let v = expected_red_leaves(10, 2, 6, 12).unwrap();
        assert!((v - 510.798353909465).abs() < 1e-9);
        assert_eq!(v.round(), 511.0);

        // No bank conditions: no red leaves, ever.
        assert_eq!(expected_red_leaves(10, 0, 6, 12).unwrap(), 0.0);

        // Base case: one level, equal pools -> 2 * c_b / (c_s + c_b) = 1.
        assert!((expected_red_leaves(1, 1, 1, 1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_rejects_empty_pools() {
        assert_eq!(expected_red_leaves(0, 0, 6, 12).unwrap_err(), AnalysisError::DomainError);
    }

    #[test]
    fn monte_carlo_tracks_the_closed_form() {
        let est = monte_carlo_red_leaves(3, 10, 2, 6, 2_000).unwrap();
        let expected = expected_red_leaves(10, 2, 6, 1).unwrap();
        assert!(
            (est.mean - expected).abs() < 3.0 * est.stderr.max(0.05),
            "mc {} vs closed form {expected} (se {})",
            est.mean,
            est.stderr
        );
    }

    #[test]
    fn monte_carlo_with_no_bank_conditions_is_exactly_zero() {
        let est = monte_carlo_red_leaves(4, 5, 0, 4, 200).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn monte_carlo_height_one_matches_the_base_case() {
        let est = monte_carlo_red_leaves(5, 3, 2, 1, 4_000).unwrap();
        let expected = 2.0 * 2.0 / 5.0;
        assert!((est.mean - expected).abs() < 3.0 * est.stderr.max(0.02));
    }

    #[test]
    fn monte_carlo_within_three_stderr_across_parameter_grid() {
        for (c_s, c_b, h) in [(4u64, 1u64, 3u32), (8, 4, 5), (15, 5, 8), (1, 1, 2)] {
            let est = monte_carlo_red_leaves(6, c_s, c_b, h, 1_500).unwrap();
            let expected = expected_red_leaves(c_s, c_b, h, 1).unwrap();
            assert!(
                (est.mean - expected).abs() < 3.0 * est.stderr.max(0.05),
                "({c_s},{c_b},{h}): {} vs {expected}",
                est.mean
            );
        }
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let truth = [1u8, 0, 1, 0, 0];
        let labels = truth;
        let scores = [0.9, 0.1, 0.8, 0.2, 0.0];
        let m = evaluate(&labels, &scores, &truth).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.f1, 1.0);
        assert_eq!(m.average_precision, 1.0);
    }

    #[test]
    fn all_negative_predictor_at_five_percent_positives() {
        let mut truth = vec![0u8; 100];
        for t in truth.iter_mut().take(5) {
            *t = 1;
        }
        let labels = vec![0u8; 100];
        let scores = vec![0.0; 100];
        let m = evaluate(&labels, &scores, &truth).unwrap();
        assert_eq!(m.accuracy, 0.95);
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.f1, 0.0);
    }

    #[test]
    fn metrics_agree_with_an_independent_confusion_recount() {
        let mut rng = seedstream::rng(7, "metrics", 0);
        use rand::Rng;
        let n = 500;
        let truth: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.2))).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<u8> = scores.iter().map(|&s| u8::from(s > 0.5)).collect();
        let m = evaluate(&labels, &scores, &truth).unwrap();

        // Brute-force recount, written independently of evaluate().
        let mut table = [[0u64; 2]; 2];
        for i in 0..n {
            table[labels[i] as usize][truth[i] as usize] += 1;
        }
        let (tp, fp, fn_, tn) = (table[1][1], table[1][0], table[0][1], table[0][0]);
        assert_eq!(m.accuracy, (tp + tn) as f64 / n as f64);
        assert_eq!(m.precision, tp as f64 / (tp + fp) as f64);
        assert_eq!(m.recall, tp as f64 / (tp + fn_) as f64);
        let p = m.precision;
        let r = m.recall;
        assert!((m.f1 - 2.0 * p * r / (p + r)).abs() < 1e-12);
    }

    #[test]
    fn average_precision_orders_by_score() {
        // Two positives ranked first and third: AP = (1/1 + 2/3) / 2.
        let truth = [1u8, 0, 1, 0];
        let scores = [0.9, 0.8, 0.7, 0.1];
        let labels = [1u8, 1, 1, 0];
        let m = evaluate(&labels, &scores, &truth).unwrap();
        assert!((m.average_precision - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }
}
