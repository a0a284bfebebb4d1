use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robustvi::gradients::{estimate_grad, MinibatchSampler};
use robustvi::models::{linreg_generate, LinRegSpec};
use robustvi::{FamilyKind, VariationalParams};

fn bench_estimate_grad(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimate_grad_linreg_m10_s50");
    for p in [5, 20, 70] {
        let (model, _) = linreg_generate(&LinRegSpec::new(p, 0.9, 0)).unwrap();
        for kind in [FamilyKind::MeanField, FamilyKind::FullRank] {
            let params = VariationalParams::standard(kind, p);
            let mut sampler = MinibatchSampler::new(300, Some(50)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            group.bench_function(BenchmarkId::new(kind.to_string(), p), |b| {
                b.iter(|| {
                    let batch = sampler.next_batch(&mut rng).to_vec();
                    estimate_grad(&model, &params, 10, &batch, &mut rng).unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_estimate_grad);
criterion_main!(benches);
