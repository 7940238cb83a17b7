use super::*;
use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn ctx() -> HeContext {
    HeContext::new(HeParams::default()).unwrap()
}

fn small_ctx() -> HeContext {
    // Small slot count keeps decrypt vectors readable in tests.
    HeContext::new(HeParams {
        slot_count: 8,
        ..HeParams::default()
    })
    .unwrap()
}

fn keys(ctx: &HeContext, seed: u64) -> KeyPair {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    ctx.keygen(&mut rng)
}

#[test]
fn keygen_halves_share_an_id_and_calls_differ() {
    let ctx = ctx();
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let a = ctx.keygen(&mut rng);
    let b = ctx.keygen(&mut rng);
    assert_eq!(a.secret.key_id(), a.public.key_id());
    assert_ne!(a.public.key_id(), b.public.key_id());
}

#[test]
fn decryption_is_key_gated() {
    let ctx = small_ctx();
    let k1 = keys(&ctx, 1);
    let k2 = keys(&ctx, 2);
    let ct = ctx.encrypt(&k1.public, &[1.0, 2.0]).unwrap();
    assert!(matches!(
        ctx.decrypt(&k2.secret, &ct),
        Err(HeError::KeyMismatch { .. })
    ));
    assert!(ctx.decrypt(&k1.secret, &ct).is_ok());
}

#[test]
fn encrypt_roundtrip_pads_with_zeros() {
    let ctx = small_ctx();
    let k = keys(&ctx, 1);
    let ct = ctx.encrypt(&k.public, &[3.0, 1.0]).unwrap();
    assert_eq!(ct.depth(), 0);
    assert_eq!(
        ctx.decrypt(&k.secret, &ct).unwrap(),
        vec![3.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
    );

    let zero = ctx.encrypt(&k.public, &[0.0]).unwrap();
    assert_eq!(ctx.decrypt(&k.secret, &zero).unwrap(), vec![0.0; 8]);
}

#[test]
fn encryptions_do_not_alias() {
    let ctx = small_ctx();
    let k = keys(&ctx, 1);
    let a = ctx.encrypt(&k.public, &[5.0]).unwrap();
    let b = ctx.encrypt(&k.public, &[5.0]).unwrap();
    assert_eq!(
        ctx.decrypt(&k.secret, &a).unwrap(),
        ctx.decrypt(&k.secret, &b).unwrap()
    );
    // Independent objects: consuming one leaves the other usable.
    drop(a);
    assert!(ctx.decrypt(&k.secret, &b).is_ok());
}

#[test]
fn value_too_long_is_rejected() {
    let ctx = small_ctx();
    let k = keys(&ctx, 1);
    assert!(matches!(
        ctx.encrypt(&k.public, &[0.0; 9]),
        Err(HeError::ValueTooLong { got: 9, .. })
    ));
}

#[test]
fn add_is_slotwise_and_free() {
    let ctx = small_ctx();
    let k = keys(&ctx, 1);
    let a = ctx.encrypt(&k.public, &[2.0, 3.0]).unwrap();
    let b = ctx.encrypt(&k.public, &[1.0, 1.0]).unwrap();
    let sum = ctx.add(&a, &b).unwrap();
    assert_eq!(ctx.decrypt(&k.secret, &sum).unwrap()[..2], [3.0, 4.0]);
    assert_eq!(sum.depth(), 0);

    let same = ctx.add_plain(&a, &[0.0; 8]).unwrap();
    assert_eq!(
        ctx.decrypt(&k.secret, &same).unwrap(),
        ctx.decrypt(&k.secret, &a).unwrap()
    );
}

#[test]
fn add_depth_is_max_of_inputs() {
    let ctx = small_ctx();
    let k = keys(&ctx, 1);
    let base = ctx.encrypt(&k.public, &[1.0]).unwrap();
    let mut a = base.clone();
    for _ in 0..2 {
        a = ctx.mul(&a, &base).unwrap();
    }
    let mut b = base.clone();
    for _ in 0..5 {
        b = ctx.mul(&b, &base).unwrap();
    }
    assert_eq!((a.depth(), b.depth()), (2, 5));
    assert_eq!(ctx.add(&a, &b).unwrap().depth(), 5);
}

#[test]
fn mul_is_slotwise_and_costs_one_level() {
    let ctx = small_ctx();
    let k = keys(&ctx, 1);
    let a = ctx.encrypt(&k.public, &[2.0, 3.0]).unwrap();
    let b = ctx.encrypt(&k.public, &[4.0, 5.0]).unwrap();
    let prod = ctx.mul(&a, &b).unwrap();
    assert_eq!(ctx.decrypt(&k.secret, &prod).unwrap()[..2], [8.0, 15.0]);
    assert_eq!(prod.depth(), 1);

    // Multiplying by an all-ones plaintext is a value identity but still
    // costs a level.
    let same = ctx.mul_plain(&a, &[1.0; 8]).unwrap();
    assert_eq!(
        ctx.decrypt(&k.secret, &same).unwrap(),
        ctx.decrypt(&k.secret, &a).unwrap()
    );
    assert_eq!(same.depth(), 1);
}

#[test]
fn multiply_chain_bootstraps_past_the_budget() {
    let ctx = small_ctx(); // depth budget 6
    let k = keys(&ctx, 1);
    let one = ctx.encrypt(&k.public, &[1.0]).unwrap();
    let mut acc = ctx.encrypt(&k.public, &[2.0]).unwrap();
    for _ in 0..7 {
        acc = ctx.mul(&acc, &one).unwrap();
    }
    assert_eq!(acc.bootstrap_count(), 1);
    assert_eq!(acc.depth(), 1); // reset to 0 before the seventh multiply
    assert_eq!(ctx.counters().bootstraps, 1);
    assert_eq!(ctx.decrypt(&k.secret, &acc).unwrap()[0], 2.0);
}

#[test]
fn decrypt_roundtrip_and_homomorphic_sum() {
    let ctx = small_ctx();
    let k = keys(&ctx, 1);
    let ct = ctx.encrypt(&k.public, &[1.5, -2.0]).unwrap();
    let out = ctx.decrypt(&k.secret, &ct).unwrap();
    assert_eq!(out[..2], [1.5, -2.0]);
    assert!(out[2..].iter().all(|&v| v == 0.0));

    let a = ctx.encrypt(&k.public, &[1.25, 4.0]).unwrap();
    let b = ctx.encrypt(&k.public, &[2.5, -1.0]).unwrap();
    let sum = ctx.add(&a, &b).unwrap();
    assert_eq!(ctx.decrypt(&k.secret, &sum).unwrap()[..2], [3.75, 3.0]);
}

#[test]
fn pet_matches_on_equality_only() {
    let ctx = ctx();
    let k = keys(&ctx, 1);
    let sk = &k.secret;

    let a = ctx.encrypt_bits(&k.public, 0b101, 3).unwrap();
    let hit = ctx.pet(&a, 0b101, 3).unwrap();
    assert_eq!(ctx.decrypt_slot(sk, &hit, 0).unwrap(), 1.0);
    let miss = ctx.pet(&a, 0b001, 3).unwrap();
    assert_eq!(ctx.decrypt_slot(sk, &miss, 0).unwrap(), 0.0);
}

#[test]
fn pet_width_one_squares_the_negative_factor() {
    // (1 - 1 - 1)^2 = 1: the single factor is -1 and squaring recovers 1.
    let ctx = ctx();
    let k = keys(&ctx, 1);
    let a = ctx.encrypt_bits(&k.public, 1, 1).unwrap();
    let out = ctx.pet(&a, 1, 1).unwrap();
    assert_eq!(ctx.decrypt_slot(&k.secret, &out, 0).unwrap(), 1.0);
    assert_eq!(out.depth(), 1);
}

#[test]
fn pet_exhaustive_small_widths() {
    let ctx = ctx();
    let k = keys(&ctx, 1);
    for width in 1..=4usize {
        for a in 0..(1u64 << width) {
            let bits = ctx.encrypt_bits(&k.public, a, width).unwrap();
            for b in 0..(1u64 << width) {
                let out = ctx.pet(&bits, b, width).unwrap();
                let got = ctx.decrypt_slot(&k.secret, &out, 0).unwrap();
                assert_eq!(got, if a == b { 1.0 } else { 0.0 }, "width {width} a {a} b {b}");
            }
        }
    }
}

#[test]
fn pet_width_mismatch_errors() {
    let ctx = ctx();
    let k = keys(&ctx, 1);
    let a = ctx.encrypt_bits(&k.public, 3, 4).unwrap();
    assert!(matches!(
        ctx.pet(&a, 3, 5),
        Err(HeError::WidthMismatch { ct_width: 4, operand_width: 5 })
    ));
}

#[test]
fn pet_depth_follows_the_cost_model() {
    // ceil(log2 sigma) + 1 for the product tree plus the squaring.
    let ctx = HeContext::new(HeParams {
        depth_budget: 12,
        ..HeParams::default()
    })
    .unwrap();
    let k = keys(&ctx, 1);
    for (width, expected) in [(1usize, 1u32), (2, 2), (3, 3), (4, 3), (8, 4), (16, 5)] {
        let bits = ctx.encrypt_bits(&k.public, 1, width).unwrap();
        let out = ctx.pet(&bits, 1, width).unwrap();
        assert_eq!(out.depth(), expected, "width {width}");
        assert_eq!(out.bootstrap_count(), 0);
    }
}

#[test]
fn pet16_then_count_multiply_fills_the_default_budget_exactly() {
    let ctx = ctx(); // budget 6
    let k = keys(&ctx, 1);
    let bits = ctx.encrypt_bits(&k.public, 0xBEEF & 0x7FFF, 16).unwrap();
    let mask = ctx.pet(&bits, 0xBEEF & 0x7FFF, 16).unwrap();
    let count = ctx.encrypt(&k.public, &[7.0]).unwrap();
    let term = ctx.mul(&mask, &count).unwrap();
    assert_eq!(term.depth(), 6);
    assert_eq!(term.bootstrap_count(), 0);
    assert_eq!(ctx.counters().bootstraps, 0);
    assert_eq!(ctx.decrypt_slot(&k.secret, &term, 0).unwrap(), 7.0);
}

#[test]
fn compare_is_strict_with_ties_to_zero() {
    let ctx = small_ctx();
    let k = keys(&ctx, 1);
    let enc = |v: f64| ctx.encrypt(&k.public, &[v]).unwrap();
    let cases = [((5.0, 3.0), 1.0), ((3.0, 3.0), 0.0), ((-1.0, 0.0), 0.0)];
    for ((a, b), want) in cases {
        let out = ctx.compare(&enc(a), &enc(b)).unwrap();
        assert_eq!(ctx.decrypt_slot(&k.secret, &out, 0).unwrap(), want);
        assert_eq!(out.depth(), 3);
    }
}

#[test]
fn compare_bootstraps_when_inputs_are_deep() {
    let ctx = small_ctx(); // budget 6, compare cost 3
    let k = keys(&ctx, 1);
    let one = ctx.encrypt(&k.public, &[1.0]).unwrap();
    let mut deep = ctx.encrypt(&k.public, &[9.0]).unwrap();
    for _ in 0..6 {
        deep = ctx.mul(&deep, &one).unwrap();
    }
    let shallow = ctx.encrypt(&k.public, &[2.0]).unwrap();
    let out = ctx.compare(&deep, &shallow).unwrap();
    assert_eq!(out.depth(), 3);
    assert_eq!(out.bootstrap_count(), 1);
    assert_eq!(ctx.decrypt_slot(&k.secret, &out, 0).unwrap(), 1.0);
}

#[test]
fn metadata_is_a_function_of_the_circuit_not_the_values() {
    let ctx = ctx();
    let k = keys(&ctx, 1);
    let run = |x: f64, y: f64| {
        let a = ctx.encrypt(&k.public, &[x, x + 1.0]).unwrap();
        let b = ctx.encrypt(&k.public, &[y, y * 2.0]).unwrap();
        let s = ctx.add(&a, &b).unwrap();
        let p = ctx.mul(&s, &b).unwrap();
        ctx.compare(&p, &a).unwrap()
    };
    let m1 = run(1.0, 2.0);
    let m2 = run(-400.0, 0.25);
    assert_eq!(m1.len(), m2.len());
    assert_eq!(m1.depth(), m2.depth());
    assert_eq!(m1.bootstrap_count(), m2.bootstrap_count());
}

#[test]
fn cross_key_operations_error() {
    let ctx = small_ctx();
    let k1 = keys(&ctx, 1);
    let k2 = keys(&ctx, 2);
    let a = ctx.encrypt(&k1.public, &[1.0]).unwrap();
    let b = ctx.encrypt(&k2.public, &[1.0]).unwrap();
    assert!(matches!(ctx.add(&a, &b), Err(HeError::KeyMismatch { .. })));
    assert!(matches!(ctx.mul(&a, &b), Err(HeError::KeyMismatch { .. })));
    assert!(matches!(ctx.compare(&a, &b), Err(HeError::KeyMismatch { .. })));
}

#[test]
fn params_are_validated() {
    assert!(HeContext::new(HeParams {
        slot_count: 100,
        ..HeParams::default()
    })
    .is_err());
    assert!(HeContext::new(HeParams {
        depth_budget: 0,
        ..HeParams::default()
    })
    .is_err());
    assert!(HeContext::new(HeParams {
        compare_depth_cost: 7,
        depth_budget: 6,
        ..HeParams::default()
    })
    .is_err());
}

proptest! {
    #[test]
    fn roundtrip_identity(values in proptest::collection::vec(-1e6f64..1e6, 0..8)) {
        let ctx = small_ctx();
        let k = keys(&ctx, 1);
        let ct = ctx.encrypt(&k.public, &values).unwrap();
        let out = ctx.decrypt(&k.secret, &ct).unwrap();
        let q = (1u64 << 24) as f64;
        for (i, v) in values.iter().enumerate() {
            prop_assert!((out[i] - v).abs() <= 0.5 / q);
        }
    }

    #[test]
    fn add_and_mul_are_homomorphic(
        a in proptest::collection::vec(-1e3f64..1e3, 4),
        b in proptest::collection::vec(-1e3f64..1e3, 4),
    ) {
        let ctx = small_ctx();
        let k = keys(&ctx, 1);
        let ea = ctx.encrypt(&k.public, &a).unwrap();
        let eb = ctx.encrypt(&k.public, &b).unwrap();
        let sum = ctx.decrypt(&k.secret, &ctx.add(&ea, &eb).unwrap()).unwrap();
        let prod = ctx.decrypt(&k.secret, &ctx.mul(&ea, &eb).unwrap()).unwrap();
        let q = (1u64 << 24) as f64;
        for i in 0..4 {
            prop_assert!((sum[i] - (a[i] + b[i])).abs() <= 0.5 / q + 1e-9);
            prop_assert!((prod[i] - (a[i] * b[i])).abs() <= (a[i] * b[i]).abs() * 1e-12 + 0.5 / q);
        }
    }
}
