use super::*;
use crate::data::Transaction;
use rand::Rng;

fn pns_features() -> Vec<FeatureSpec> {
    vec![
        FeatureSpec::pns_categorical("currency", &["USD", "EUR", "GBP"]),
        FeatureSpec::pns_numeric("amount", 0.0, 1_000_000.0),
        FeatureSpec::pns_numeric("hour", 0.0, 24.0),
    ]
}

fn bank_features() -> Vec<FeatureSpec> {
    vec![
        FeatureSpec::bank_flag("ordering_account_flag", AccountField::Ordering, &["00", "01", "99"]),
        FeatureSpec::bank_flag(
            "beneficiary_account_flag",
            AccountField::Beneficiary,
            &["00", "01", "99"],
        ),
    ]
}

fn record(tx_id: &str, ordering: &str, beneficiary: &str, amount: f64, currency: &str, label: u8) -> TxRecord {
    let tx = Transaction {
        tx_id: tx_id.to_string(),
        ordering_account: ordering.to_string(),
        beneficiary_account: beneficiary.to_string(),
        amount,
        currency: currency.to_string(),
        hour: 12,
        label: Some(label),
    };
    let mut features = FeatureMap::new();
    features.insert("currency".into(), FeatureValue::Cat(currency.into()));
    features.insert("amount".into(), FeatureValue::Num(amount));
    features.insert("hour".into(), FeatureValue::Num(12.0));
    TxRecord { tx, features }
}

/// Hand-built three-node toy tree: currency at the root, an amount split
/// under the USD edge.
fn toy_tree() -> Tree {
    let leaf = |leaf: u32, tests: Vec<TestSpec>| Leaf {
        id: LeafId { tree: 0, leaf },
        kind: LeafKind::Green,
        tests,
        bank_feature: None,
        bank_field: None,
        bank_flag: None,
        label: None,
    };
    let eq = |f: &str, v: &str| TestSpec {
        feature_id: f.into(),
        predicate: Predicate::Equals(v.into()),
    };
    let lt = |f: &str, t: f64| TestSpec {
        feature_id: f.into(),
        predicate: Predicate::LessThan(t),
    };
    let ge = |f: &str, t: f64| TestSpec {
        feature_id: f.into(),
        predicate: Predicate::AtLeast(t),
    };
    let amount_node = Node::Internal {
        feature_id: "amount".into(),
        bank_field: None,
        edges: vec![
            Edge {
                test: lt("amount", 500_000.0),
                child: Node::Leaf(leaf(0, vec![eq("currency", "USD"), lt("amount", 500_000.0)])),
            },
            Edge {
                test: ge("amount", 500_000.0),
                child: Node::Leaf(leaf(1, vec![eq("currency", "USD"), ge("amount", 500_000.0)])),
            },
        ],
    };
    Tree {
        index: 0,
        height: 2,
        root: Node::Internal {
            feature_id: "currency".into(),
            bank_field: None,
            edges: vec![
                Edge { test: eq("currency", "USD"), child: amount_node },
                Edge {
                    test: eq("currency", "EUR"),
                    child: Node::Leaf(leaf(2, vec![eq("currency", "EUR")])),
                },
                Edge {
                    test: eq("currency", "GBP"),
                    child: Node::Leaf(leaf(3, vec![eq("currency", "GBP")])),
                },
            ],
        },
    }
}

fn find_tree_with_bank_root(pns: &[FeatureSpec], bank: &[FeatureSpec], height: u32) -> Tree {
    for seed in 0..400 {
        let mut rng = crate::seedstream::rng(seed, "bank-root-search", 0);
        let tree = build_tree(&mut rng, pns, bank, height, 0).unwrap();
        if matches!(tree.root, Node::Internal { bank_field: Some(_), .. }) {
            return tree;
        }
    }
    panic!("no seed in range drew a bank feature at the root");
}

#[test]
fn no_bank_features_means_all_green() {
    let forest = build_forest(3, 4, 3, &pns_features(), &[]).unwrap();
    let (green, red) = forest.classify_leaves();
    assert!(red.is_empty());
    assert_eq!(green.len(), forest.leaves().len());
}

#[test]
fn bank_root_at_height_one_gives_red_leaves_with_distinct_flags() {
    let pns = vec![FeatureSpec::pns_numeric("amount", 0.0, 10.0)];
    let bank = vec![FeatureSpec::bank_flag("flag", AccountField::Ordering, &["00", "01"])];
    let tree = find_tree_with_bank_root(&pns, &bank, 1);
    let leaves = tree.leaves();
    assert_eq!(leaves.len(), 2);
    assert!(leaves.iter().all(|l| l.kind == LeafKind::Red));
    assert_ne!(leaves[0].bank_flag, leaves[1].bank_flag);
}

#[test]
fn same_seed_builds_byte_identical_trees() {
    let pns = pns_features();
    let bank = bank_features();
    let a = build_forest(99, 3, 4, &pns, &bank).unwrap();
    let b = build_forest(99, 3, 4, &pns, &bank).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let c = build_forest(100, 3, 4, &pns, &bank).unwrap();
    assert_ne!(a.to_json(), c.to_json());
}

#[test]
fn forest_has_tau_trees_of_requested_height() {
    let forest = build_forest(1, 12, 6, &pns_features(), &bank_features()).unwrap();
    assert_eq!(forest.trees.len(), 12);
    for tree in &forest.trees {
        assert_eq!(tree.height, 6);
        for leaf in tree.leaves() {
            assert_eq!(leaf.tests.len(), 6);
        }
    }
}

#[test]
fn zero_trees_is_rejected() {
    assert_eq!(
        build_forest(1, 0, 3, &pns_features(), &bank_features()).unwrap_err(),
        ForestError::MinOneTree
    );
}

#[test]
fn empty_pns_pool_is_rejected() {
    let mut rng = crate::seedstream::rng(0, "x", 0);
    assert_eq!(
        build_tree(&mut rng, &[], &bank_features(), 2, 0).unwrap_err(),
        ForestError::EmptyFeaturePool
    );
}

#[test]
fn paths_cross_at_most_one_bank_feature() {
    let bank = bank_features();
    let bank_ids: Vec<&str> = bank.iter().map(|b| b.id.as_str()).collect();
    let forest = build_forest(5, 8, 6, &pns_features(), &bank).unwrap();
    for leaf in forest.leaves() {
        let bank_tests = leaf
            .tests
            .iter()
            .filter(|t| bank_ids.contains(&t.feature_id.as_str()))
            .count();
        assert!(bank_tests <= 1);
        match leaf.kind {
            LeafKind::Red => assert_eq!(bank_tests, 1),
            LeafKind::Green => assert_eq!(bank_tests, 0),
        }
    }
}

#[test]
fn classification_partitions_all_leaves() {
    let forest = build_forest(7, 6, 4, &pns_features(), &bank_features()).unwrap();
    let (green, red) = forest.classify_leaves();
    assert_eq!(green.len() + red.len(), forest.leaves().len());
    let all_red_root = find_tree_with_bank_root(&pns_features(), &bank_features(), 1);
    assert!(all_red_root.leaves().iter().all(|l| l.kind == LeafKind::Red));
}

#[test]
fn filter_follows_the_unique_passing_edge() {
    let tree = toy_tree();
    let rec = record("t1", "A", "B", 100.0, "USD", 0);
    match filter(&tree, &rec.features).unwrap() {
        FilterOutcome::Leaf(l) => assert_eq!(l.id, LeafId { tree: 0, leaf: 0 }),
        other => panic!("expected the USD low-amount leaf, got {other:?}"),
    }
    let rec = record("t2", "A", "B", 600_000.0, "USD", 0);
    match filter(&tree, &rec.features).unwrap() {
        FilterOutcome::Leaf(l) => assert_eq!(l.id, LeafId { tree: 0, leaf: 1 }),
        other => panic!("expected the USD high-amount leaf, got {other:?}"),
    }
}

#[test]
fn filter_blocks_at_bank_nodes_and_reports_the_feature() {
    let pns = vec![FeatureSpec::pns_numeric("amount", 0.0, 10.0)];
    let bank = vec![FeatureSpec::bank_flag("flag", AccountField::Ordering, &["00", "01"])];
    let tree = find_tree_with_bank_root(&pns, &bank, 2);
    let rec = record("t", "A", "B", 5.0, "USD", 0);
    match filter(&tree, &rec.features).unwrap() {
        FilterOutcome::Blocked { feature_id, bank_field, .. } => {
            assert_eq!(feature_id, "flag");
            assert_eq!(bank_field, AccountField::Ordering);
        }
        other => panic!("expected a blocked traversal, got {other:?}"),
    }
}

#[test]
fn filter_rejects_missing_features() {
    let tree = toy_tree();
    let mut rec = record("t", "A", "B", 1.0, "USD", 0);
    rec.features.remove("currency");
    assert!(matches!(
        filter(&tree, &rec.features),
        Err(ForestError::MalformedTransaction { .. })
    ));
}

#[test]
fn exactly_one_leaf_per_transaction() {
    let forest = build_forest(11, 5, 5, &pns_features(), &[]).unwrap();
    let mut rng = crate::seedstream::rng(4, "rows", 0);
    for _ in 0..200 {
        let currency = ["USD", "EUR", "GBP"][rng.gen_range(0..3)];
        let rec = record("t", "A", "B", rng.gen_range(0.0..1_000_000.0), currency, 0);
        for tree in &forest.trees {
            let reached = match filter(tree, &rec.features).unwrap() {
                FilterOutcome::Leaf(l) => l.id,
                _ => unreachable!("no bank features"),
            };
            // Every leaf whose full test set passes must be the reached one.
            let passing: Vec<LeafId> = tree
                .leaves()
                .into_iter()
                .filter(|l| {
                    l.tests.iter().all(|t| {
                        rec.features
                            .get(&t.feature_id)
                            .and_then(|v| t.passes(v))
                            .unwrap_or(false)
                    })
                })
                .map(|l| l.id)
                .collect();
            assert_eq!(passing, vec![reached]);
        }
    }
}

fn red_leaf_fixture() -> Leaf {
    Leaf {
        id: LeafId { tree: 0, leaf: 0 },
        kind: LeafKind::Red,
        tests: vec![
            TestSpec {
                feature_id: "currency".into(),
                predicate: Predicate::Equals("USD".into()),
            },
            TestSpec {
                feature_id: "ordering_account_flag".into(),
                predicate: Predicate::Equals("99".into()),
            },
            TestSpec {
                feature_id: "amount".into(),
                predicate: Predicate::LessThan(500_000.0),
            },
        ],
        bank_feature: Some("ordering_account_flag".into()),
        bank_field: Some(AccountField::Ordering),
        bank_flag: Some("99".into()),
        label: None,
    }
}

#[test]
fn candidate_transactions_apply_all_pns_tests() {
    let leaf = red_leaf_fixture();
    let records = vec![
        record("t0", "A", "X", 100.0, "USD", 1),    // passes both PNS tests
        record("t1", "A", "Y", 600_000.0, "USD", 1), // fails the amount test
        record("t2", "B", "X", 50.0, "EUR", 1),      // fails the currency test
        record("t3", "B", "Y", 499_999.0, "USD", 1), // passes
        record("t4", "C", "Z", 10.0, "USD", 0),      // wrong label
    ];
    let got: Vec<&str> = candidate_transactions(&leaf, &records, 1)
        .iter()
        .map(|r| r.tx.tx_id.as_str())
        .collect();
    assert_eq!(got, vec!["t0", "t3"]);

    // Brute-force recount with an independently written predicate.
    let brute: Vec<&str> = records
        .iter()
        .filter(|r| r.tx.label == Some(1) && r.tx.currency == "USD" && r.tx.amount < 500_000.0)
        .map(|r| r.tx.tx_id.as_str())
        .collect();
    assert_eq!(got, brute);
}

#[test]
fn candidate_transactions_vacuous_and_empty_cases() {
    let mut leaf = red_leaf_fixture();
    leaf.tests = vec![leaf.tests[1].clone()]; // only the bank test remains
    let records = vec![
        record("t0", "A", "X", 1.0, "USD", 1),
        record("t1", "B", "Y", 2.0, "EUR", 1),
        record("t2", "C", "Z", 3.0, "GBP", 0),
    ];
    let got = candidate_transactions(&leaf, &records, 1);
    assert_eq!(got.len(), 2); // all label-1 transactions

    let none = candidate_transactions(&red_leaf_fixture(), &records[1..2], 1);
    assert!(none.is_empty());
}

#[test]
fn candidate_accounts_count_multiplicities() {
    let records = [
        record("t0", "A", "X", 1.0, "USD", 1),
        record("t1", "A", "Y", 2.0, "USD", 1),
        record("t2", "B", "Z", 3.0, "USD", 1),
    ];
    let refs: Vec<&TxRecord> = records.iter().collect();
    let got = candidate_accounts(AccountField::Ordering, &refs);
    assert_eq!(got, vec![("A".to_string(), 2), ("B".to_string(), 1)]);
    assert!(candidate_accounts(AccountField::Ordering, &[]).is_empty());
}

#[test]
fn candidate_account_counts_conserve_transactions() {
    let mut rng = crate::seedstream::rng(9, "conserve", 0);
    for _ in 0..20 {
        let n = rng.gen_range(1..60);
        let records: Vec<TxRecord> = (0..n)
            .map(|i| {
                let acct = format!("A{}", rng.gen_range(0..10));
                record(&format!("t{i}"), &acct, "X", 1.0, "USD", 1)
            })
            .collect();
        let refs: Vec<&TxRecord> = records.iter().collect();
        let total: u64 = candidate_accounts(AccountField::Ordering, &refs)
            .iter()
            .map(|(_, c)| c)
            .sum();
        assert_eq!(total, n as u64);
    }
}

#[test]
fn green_label_rule_with_tie_to_zero() {
    assert_eq!(green_label(&LeafStats { n0: 3, n1: 1 }), 0);
    assert_eq!(green_label(&LeafStats { n0: 1, n1: 3 }), 1);
    assert_eq!(green_label(&LeafStats { n0: 2, n1: 2 }), 0);
    assert_eq!(green_label(&LeafStats { n0: 0, n1: 0 }), 0);
}

#[test]
fn majority_vote_fraction_and_tie() {
    assert_eq!(majority_vote(&[1, 1, 0]).unwrap(), (1, 2.0 / 3.0));
    assert_eq!(majority_vote(&[0, 0, 0, 0]).unwrap(), (0, 1.0));
    assert_eq!(majority_vote(&[1, 0]).unwrap(), (0, 0.5));
    assert_eq!(majority_vote(&[]).unwrap_err(), ForestError::EmptyVote);
}

#[test]
fn candidate_leaves_one_per_flag_edge() {
    let pns = vec![FeatureSpec::pns_numeric("amount", 0.0, 10.0)];
    let bank = vec![FeatureSpec::bank_flag("flag", AccountField::Ordering, &["00", "01", "99"])];
    // Height 3 so flag edges usually lead into further PNS splits.
    let tree = find_tree_with_bank_root(&pns, &bank, 3);
    let mut rec = record("t", "A", "B", 0.0, "USD", 0);
    rec.features.insert("amount".into(), FeatureValue::Num(4.5));
    let FilterOutcome::Blocked { node, .. } = filter(&tree, &rec.features).unwrap() else {
        panic!("expected blocked traversal");
    };
    let candidates = candidate_leaves(node, &rec.features).unwrap();
    assert_eq!(candidates.len(), 3);
    let mut flags: Vec<&str> = candidates.iter().map(|(f, _)| *f).collect();
    flags.sort_unstable();
    flags.dedup();
    assert_eq!(flags.len(), 3, "flags must be pairwise distinct");

    // Each candidate is the unique leaf below its flag edge that passes all
    // PNS tests: cross-check by enumerating all leaves of the subtree.
    for (flag, leaf) in &candidates {
        let Node::Internal { edges, .. } = node else { unreachable!() };
        let edge = edges
            .iter()
            .find(|e| matches!(&e.test.predicate, Predicate::Equals(v) if v == flag))
            .unwrap();
        let mut below = Vec::new();
        edge.child.collect_leaves(&mut below);
        let matching: Vec<&&Leaf> = below
            .iter()
            .filter(|l| {
                l.pns_tests().all(|t| {
                    rec.features
                        .get(&t.feature_id)
                        .and_then(|v| t.passes(v))
                        .unwrap_or(false)
                })
            })
            .collect();
        assert_eq!(matching.len(), 1);
        assert_eq!(matching[0].id, leaf.id);
    }
}

#[test]
fn oracle_matches_local_labeling_when_no_bank_features() {
    let forest = build_forest(21, 3, 3, &pns_features(), &[]).unwrap();
    let mut rng = crate::seedstream::rng(2, "oracle", 0);
    let records: Vec<TxRecord> = (0..90)
        .map(|i| {
            let currency = ["USD", "EUR", "GBP"][rng.gen_range(0..3)];
            record(
                &format!("t{i}"),
                "A",
                "B",
                rng.gen_range(0.0..1_000_000.0),
                currency,
                rng.gen_range(0..2),
            )
        })
        .collect();
    let partitions: Vec<Vec<TxRecord>> =
        records.chunks(30).map(|c| c.to_vec()).collect();
    let flag_of = BTreeMap::new();
    let labeled = oracle::train(&forest, &partitions, &flag_of).unwrap();

    // Local labeling: plain filter-based counting must agree everywhere.
    for (tree, subset) in forest.trees.iter().zip(&partitions) {
        let mut local: BTreeMap<LeafId, LeafStats> = BTreeMap::new();
        for rec in subset {
            let FilterOutcome::Leaf(l) = filter(tree, &rec.features).unwrap() else {
                unreachable!()
            };
            let s = local.entry(l.id).or_default();
            match rec.label().unwrap() {
                0 => s.n0 += 1,
                _ => s.n1 += 1,
            }
        }
        for leaf in tree.leaves() {
            let stats = local.get(&leaf.id).copied().unwrap_or_default();
            assert_eq!(labeled[&leaf.id], (stats, green_label(&stats)));
        }
    }
}

#[test]
fn oracle_red_label_equals_green_rule_on_joined_counts() {
    let pns = vec![FeatureSpec::pns_categorical("currency", &["USD", "EUR"])];
    let bank = vec![FeatureSpec::bank_flag("flag", AccountField::Ordering, &["00", "99"])];
    let tree = find_tree_with_bank_root(&pns, &bank, 2);
    let forest = Forest {
        seed: 0,
        tau: 1,
        height: 2,
        trees: vec![tree],
    };

    let mut flag_of = BTreeMap::new();
    for i in 0..10 {
        flag_of.insert(format!("A{i}"), if i < 4 { "99".into() } else { "00".into() });
    }
    let mut rng = crate::seedstream::rng(8, "joined", 0);
    let records: Vec<TxRecord> = (0..20)
        .map(|i| {
            let acct = format!("A{}", rng.gen_range(0..10));
            let currency = ["USD", "EUR"][rng.gen_range(0..2)];
            record(&format!("t{i}"), &acct, "B", 1.0, currency, rng.gen_range(0..2))
        })
        .collect();
    let partitions = vec![records.clone()];
    let labeled = oracle::train(&forest, &partitions, &flag_of).unwrap();

    // Brute force: for every red leaf, count transactions satisfying every
    // test (with flags joined in by hand) and apply the plaintext rule.
    for leaf in forest.leaves() {
        let (mut n0, mut n1) = (0u64, 0u64);
        for rec in &records {
            let flag = &flag_of[rec.tx.account(AccountField::Ordering)];
            let all_pass = leaf.tests.iter().all(|t| match &t.predicate {
                Predicate::Equals(v) if t.feature_id == "flag" => v == flag,
                _ => rec
                    .features
                    .get(&t.feature_id)
                    .and_then(|x| t.passes(x))
                    .unwrap_or(false),
            });
            if all_pass {
                match rec.label().unwrap() {
                    0 => n0 += 1,
                    _ => n1 += 1,
                }
            }
        }
        let expected = if n0 >= n1 { 0 } else { 1 };
        assert_eq!(labeled[&leaf.id], (LeafStats { n0, n1 }, expected), "leaf {}", leaf.id);
    }

    // Determinism of the oracle itself.
    assert_eq!(labeled, oracle::train(&forest, &partitions, &flag_of).unwrap());
}

#[test]
fn oracle_counts_conserve_subset_sizes() {
    let forest = build_forest(31, 4, 4, &pns_features(), &bank_features()).unwrap();
    let mut flag_of = BTreeMap::new();
    for i in 0..12 {
        flag_of.insert(
            format!("A{i}"),
            ["00", "01", "99"][i % 3].to_string(),
        );
    }
    let mut rng = crate::seedstream::rng(3, "conserve2", 0);
    let records: Vec<TxRecord> = (0..120)
        .map(|i| {
            let o = format!("A{}", rng.gen_range(0..12));
            let b = format!("A{}", rng.gen_range(0..12));
            let currency = ["USD", "EUR", "GBP"][rng.gen_range(0..3)];
            record(&format!("t{i}"), &o, &b, rng.gen_range(0.0..1_000_000.0), currency, rng.gen_range(0..2))
        })
        .collect();
    let partitions: Vec<Vec<TxRecord>> = records.chunks(30).map(|c| c.to_vec()).collect();
    let labeled = oracle::train(&forest, &partitions, &flag_of).unwrap();
    for (tree, subset) in forest.trees.iter().zip(&partitions) {
        let total: u64 = tree
            .leaves()
            .iter()
            .map(|l| {
                let (s, _) = labeled[&l.id];
                s.n0 + s.n1
            })
            .sum();
        assert_eq!(total, subset.len() as u64);
    }
}

#[test]
fn forest_json_roundtrips() {
    let forest = build_forest(17, 2, 3, &pns_features(), &bank_features()).unwrap();
    let json = forest.to_json();
    let back = Forest::from_json(&json).unwrap();
    assert_eq!(forest, back);
}
