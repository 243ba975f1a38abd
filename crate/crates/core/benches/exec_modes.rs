//! Sequential vs rayon execution of the three parallel kernels.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hjcone::finite_n::{enumerate_gibbs_with, sample_disorder};
use hjcone::hopflax::{self, HopfLaxOptions};
use hjcone::initcond::{Prior, PriorPsi};
use hjcone::verify::{bar_estimates, McSpec};
use hjcone::{Exec, InitialCondition, SymMat};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn enumeration(c: &mut Criterion) {
    let prior = Prior::rademacher();
    let d = sample_disorder(&prior, 16, 1).unwrap();
    let h = SymMat::from_diag(&[0.3]);
    let mut g = c.benchmark_group("enumerate_gibbs_n16");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| enumerate_gibbs_with(black_box(0.5), &h, &d, &prior, exec).unwrap())
        });
    }
    g.finish();
}

fn disorder_average(c: &mut Criterion) {
    let prior = Prior::rademacher();
    let h = SymMat::from_diag(&[0.3]);
    let mut g = c.benchmark_group("bar_estimates_n8_200_samples");
    for (name, exec) in MODES {
        let spec = McSpec { exec, ..McSpec::new(8, 200, 1) };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| bar_estimates(black_box(0.5), &h, &prior, &spec).unwrap())
        });
    }
    g.finish();
}

fn hopf_lax(c: &mut Criterion) {
    let prior = Prior::new(vec![vec![1.0, 0.5], vec![-0.5, 1.0]], vec![0.5, 0.5]).unwrap();
    let psi = PriorPsi::new(prior, 16).unwrap();
    let l = psi.lipschitz();
    let h = SymMat::scalar(2, 0.3);
    let mut g = c.benchmark_group("hopf_lax_k2");
    for (name, exec) in MODES {
        let opts = HopfLaxOptions { exec, ..Default::default() };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| hopflax::solve(black_box(0.5), &h, &psi, l, &opts).unwrap())
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10).measurement_time(Duration::from_secs(3));
    targets = enumeration, disorder_average, hopf_lax
}
criterion_main!(benches);
