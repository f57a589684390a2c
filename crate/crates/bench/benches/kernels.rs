use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::Array2;

use pmgt_bench::fixture;
use pmgt_core::algorithms::{Algorithm, Decentralized, RunConfig};
use pmgt_core::consensus::{fastmix, CommBudget};
use pmgt_core::problems::aggregated_prox;
use pmgt_core::{AgentField, Regularizer};

fn field(m: usize, d: usize) -> AgentField {
    AgentField::new(Array2::from_shape_fn((m, d), |(i, k)| {
        ((i * 31 + k * 7) % 17) as f64 - 8.0
    }))
    .unwrap()
}

fn bench_fastmix(c: &mut Criterion) {
    let f = fixture(20, 10, 50);
    let x = field(20, 50);
    for k in [1usize, 10] {
        c.bench_function(&format!("fastmix m=20 d=50 K={k}"), |b| {
            b.iter(|| fastmix(&x, &f.gossip, k, &mut CommBudget::new()).unwrap())
        });
    }
}

fn bench_prox(c: &mut Criterion) {
    let x = field(20, 123);
    let r = Regularizer::L1 { scale: 1e-2 };
    c.bench_function("aggregated_prox m=20 d=123", |b| {
        b.iter(|| aggregated_prox(&x, 0.1, &r))
    });
}

fn bench_steps(c: &mut Criterion) {
    let f = fixture(20, 100, 50);
    for alg in [Algorithm::PmgtSaga, Algorithm::PmgtLsvrg, Algorithm::GtDsgd] {
        let runner = Decentralized::new(&f.problem, &f.gossip, &RunConfig::new(alg, 1)).unwrap();
        c.bench_function(&format!("{} step m=20 n=100 d=50", alg.name()), |b| {
            b.iter_batched(
                || runner.init_state(0),
                |mut state| runner.step(&mut state).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
}

fn bench_local_grad(c: &mut Criterion) {
    let f = fixture(4, 2000, 123);
    let x = field(1, 123);
    c.bench_function("local_grad n=2000 d=123", |b| {
        b.iter(|| f.problem.local_grad(0, x.row(0)))
    });
}

criterion_group!(
    benches,
    bench_fastmix,
    bench_prox,
    bench_steps,
    bench_local_grad
);
criterion_main!(benches);
