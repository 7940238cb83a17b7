//! Microbenchmarks for the encrypted primitives: equality tests, cuckoo
//! table construction, padding+encryption, and one intersection-sum probe
//! pass.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use fedforest_core::he::{HeContext, HeParams, IdCodec};
use fedforest_core::pisum::{self, CuckooParams};

fn pet(c: &mut Criterion) {
    let ctx = HeContext::new(HeParams {
        depth_budget: 12,
        ..HeParams::default()
    })
    .unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let keys = ctx.keygen(&mut rng);
    let mut group = c.benchmark_group("pet");
    for width in [8usize, 16, 24] {
        let bits = ctx
            .encrypt_bits(&keys.public, 0x35 & ((1 << width) - 1), width)
            .unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(width), &width, |b, &w| {
            b.iter(|| ctx.pet(black_box(&bits), black_box(0x35), w).unwrap())
        });
    }
    group.finish();
}

fn cuckoo_build(c: &mut Criterion) {
    let mut group = c.benchmark_group("cuckoo_build");
    for n in [100usize, 1000] {
        let entries: Vec<(u64, u64)> = (0..n as u64).map(|i| (i * 7 + 3, i % 5)).collect();
        let params = CuckooParams::default().resolved(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            let mut rng = ChaCha12Rng::seed_from_u64(2);
            b.iter(|| pisum::build_cuckoo(black_box(&entries), params, &mut rng).unwrap())
        });
    }
    group.finish();
}

fn intersection_sum(c: &mut Criterion) {
    let ctx = HeContext::new(HeParams::default()).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let keys = ctx.keygen(&mut rng);
    let ids: Vec<String> = (0..100).map(|i| format!("a{i}")).collect();
    let codec = IdCodec::with_injective_salt(16, ids.iter().map(String::as_str), 4).unwrap();
    let entries: Vec<(u64, u64)> = ids[..50]
        .iter()
        .map(|a| (codec.encode(a), rng.gen_range(1..5)))
        .collect();
    let params = CuckooParams::default().resolved(entries.len());
    let table = pisum::build_cuckoo(&entries, params, &mut rng).unwrap();
    let enc = pisum::pad_and_encrypt(&table, &codec, &ctx, &keys.public, &mut rng).unwrap();
    let bank_codes: Vec<u64> = ids[25..75].iter().map(|a| codec.encode(a)).collect();

    c.bench_function("intersection_sum_50x50", |b| {
        b.iter(|| {
            pisum::bank_intersection_sum(&ctx, &keys.public, (black_box(&enc), &enc), &bank_codes)
                .unwrap()
        })
    });
}

fn pad_and_encrypt(c: &mut Criterion) {
    let ctx = HeContext::new(HeParams::default()).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let keys = ctx.keygen(&mut rng);
    let ids: Vec<String> = (0..50).map(|i| format!("a{i}")).collect();
    let codec = IdCodec::with_injective_salt(16, ids.iter().map(String::as_str), 6).unwrap();
    let entries: Vec<(u64, u64)> = ids.iter().map(|a| (codec.encode(a), 1)).collect();
    let params = CuckooParams::default().resolved(entries.len());
    let table = pisum::build_cuckoo(&entries, params, &mut rng).unwrap();
    c.bench_function("pad_and_encrypt_300_bins", |b| {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        b.iter(|| {
            pisum::pad_and_encrypt(black_box(&table), &codec, &ctx, &keys.public, &mut rng)
                .unwrap()
        })
    });
}

criterion_group!(benches, pet, cuckoo_build, intersection_sum, pad_and_encrypt);
criterion_main!(benches);
