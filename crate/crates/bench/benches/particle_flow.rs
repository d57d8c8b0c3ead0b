use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use otflow::diagnostics::{exact_assignment, marginal_w2_1d};
use otflow::dynamics::step;
use otflow::{CostFunction, Kernels, Marginal, ParticleSystem, RbfKernel, SolverConfig};
use std::hint::black_box;

fn gaussian(mean: Vec<f64>) -> Marginal {
    Marginal::gaussian(mean, 1.0).unwrap()
}

fn grad_log_kde(c: &mut Criterion) {
    let mut group = c.benchmark_group("grad_log_kde");
    for d in [1usize, 2, 5] {
        let pts = gaussian(vec![0.0; d]).sample(1000, 1).unwrap();
        let k = RbfKernel::new(0.3).unwrap();
        let mut out = vec![0.0; d];
        group.bench_with_input(BenchmarkId::new("n1000", d), &d, |b, _| {
            b.iter(|| k.grad_log_kde_into(black_box(pts.row(17)), pts.as_slice(), &mut out))
        });
    }
    group.finish();
}

fn rbm_step(c: &mut Criterion) {
    let mu = gaussian(vec![0.0, 0.0]);
    let nu = gaussian(vec![5.0, 5.0]);
    let init = ParticleSystem::sample(&mu, &nu, 2000, 3).unwrap();
    let k = RbfKernel::new(0.3).unwrap();
    let kernels = Kernels { x: k, y: k };
    let mut group = c.benchmark_group("step_n2000_d2");
    group.sample_size(10);
    for m in [1usize, 10, 100] {
        let mut cfg = SolverConfig::new(50.0, 1e-4, 1);
        cfg.batches = m;
        group.bench_with_input(BenchmarkId::new("batches", m), &m, |b, _| {
            let mut sys = init.clone();
            let mut t = 0;
            b.iter(|| {
                t += 1;
                step(&mut sys, &mu, &nu, &cfg, &kernels, t).unwrap()
            })
        });
    }
    group.finish();
}

fn oracles(c: &mut Criterion) {
    let mut group = c.benchmark_group("oracles");
    group.sample_size(10);
    for n in [64usize, 256, 512] {
        let xs = gaussian(vec![0.0, 0.0]).sample(n, 1).unwrap();
        let ys = gaussian(vec![3.0, 1.0]).sample(n, 2).unwrap();
        group.bench_with_input(BenchmarkId::new("exact_assignment", n), &n, |b, _| {
            b.iter(|| {
                exact_assignment(&xs, &ys, &CostFunction::Quadratic, 512)
                    .unwrap()
                    .cost
            })
        });
    }
    let mix = Marginal::mixture(vec![
        otflow::Component {
            weight: 0.5,
            mean: vec![-2.0],
            variance: 1.0,
        },
        otflow::Component {
            weight: 0.5,
            mean: vec![2.0],
            variance: 1.0,
        },
    ])
    .unwrap();
    let sample = mix.sample(1000, 4).unwrap();
    group.bench_function("marginal_w2_1d_mixture_n1000", |b| {
        b.iter(|| marginal_w2_1d(sample.as_slice(), &mix, 1).unwrap())
    });
    group.finish();
}

criterion_group!(benches, grad_log_kde, rbm_step, oracles);
criterion_main!(benches);
