use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqdens::distributions::{gmm_kernel, DEFAULT_COMPONENTS};
use seqdens::training::{sequence_objective, TrainHyper};
use seqdens::Family;
use seqdens_bench::fixture;

fn objective_and_gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("objective_and_gradient");
    let hyper = TrainHyper::new(1000, 1, 0);
    for family in Family::ALL {
        let (model, seq) = fixture(family, 16, 8, 32);
        let noise = model.sample_noise(seq.steps(), &mut ChaCha8Rng::seed_from_u64(1));
        group.bench_with_input(BenchmarkId::from_parameter(family), &family, |b, _| {
            b.iter(|| sequence_objective(&model, &seq, &hyper, 0, &noise).unwrap())
        });
    }
    group.finish();
}

fn mixture_kernel(c: &mut Criterion) {
    let k = DEFAULT_COMPONENTS;
    let raw: Vec<f64> = (0..3 * k).map(|i| ((i * 37) % 11) as f64 * 0.1 - 0.5).collect();
    let mut grad = vec![0.0; 3 * k];
    c.bench_function("gmm_kernel_k20", |b| b.iter(|| gmm_kernel(&raw, 0.3, Some(&mut grad))));
}

criterion_group!(benches, objective_and_gradient, mixture_kernel);
criterion_main!(benches);
