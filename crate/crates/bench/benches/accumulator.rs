use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use epbc_core::accumulator::{hash_to_exponent, summary_append, verify};
use epbc_core::harness::build_chain;
use epbc_core::prooftree::prove_fast;
use epbc_core::{dev_setup, HashId, ProductTree, PublicParams, TreeConfig};

fn params() -> PublicParams {
    dev_setup(1024, &mut ChaCha20Rng::seed_from_u64(1)).unwrap().0
}

fn accumulator(c: &mut Criterion) {
    let params = params();
    let mut rng = ChaCha20Rng::seed_from_u64(2);

    let store = build_chain(&params, 2, 1, &mut rng).unwrap();
    let e = store.exponent(2).unwrap().clone();
    let s = store.summary();
    c.bench_function("summary_append", |b| b.iter(|| summary_append(&s, &e, &params)));
    c.bench_function("hash_to_exponent", |b| {
        let block = store.encoding(2).unwrap();
        b.iter(|| hash_to_exponent(block, 2, HashId::Sha256).unwrap())
    });

    // Verification cost should not move with the chain length.
    let mut group = c.benchmark_group("verify");
    for n in [64u64, 1024, 4096] {
        let store = build_chain(&params, n, 1, &mut rng).unwrap();
        let tree = ProductTree::for_chain(TreeConfig::new(2, 32).unwrap(), &store).unwrap();
        let i = n.div_ceil(2);
        let proof = prove_fast(&store, &tree, i).unwrap();
        let summary = store.summary();
        let block = store.encoding(i).unwrap().to_vec();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| verify(&block, i, &proof, &summary, &params))
        });
    }
    group.finish();

    let mut group = c.benchmark_group("prove_naive");
    group.sample_size(10);
    for n in [64u64, 256, 1024] {
        let store = build_chain(&params, n, 1, &mut rng).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| store.prove_naive(n.div_ceil(2)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, accumulator);
criterion_main!(benches);
