use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use hypermf::kernels::linear_mean_kernel;
use hypermf::metrics::{cut_norm_exact, DiscreteMeasure};
use hypermf::rng::uniform_vec;
use hypermf::{
    build_homogeneous, d_bl, mean_field_force, step_transport, AnalyticHypergraphon, FiberedDensity, ForcePlan, Grid,
    KernelFamily, URHypergraphon,
};

fn particle_force(c: &mut Criterion) {
    let k = KernelFamily::single(linear_mean_kernel(2));
    let mut g = c.benchmark_group("particle_force");
    for n in [100usize, 200, 400] {
        let h = build_homogeneous(n, 0.1, 3).unwrap();
        let plan = ForcePlan::new(&h, &k).unwrap();
        let x = uniform_vec(1, 0, n, 0.0, 1.0);
        g.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| {
            b.iter(|| plan.force(black_box(x)))
        });
    }
    g.finish();
}

fn bounded_lipschitz(c: &mut Criterion) {
    let mut g = c.benchmark_group("d_bl");
    for n in [100usize, 1000, 10000] {
        let a = DiscreteMeasure::empirical(&uniform_vec(2, 0, n, 0.0, 1.0));
        let b = DiscreteMeasure::empirical(&uniform_vec(2, 1, n, 0.2, 1.2));
        g.bench_function(BenchmarkId::from_parameter(n), |bch| {
            bch.iter(|| d_bl(black_box(&a), black_box(&b)).unwrap())
        });
    }
    g.finish();
}

fn vlasov_step(c: &mut Criterion) {
    let grid = Grid::new(64, -0.1, 1.1).unwrap();
    let w = URHypergraphon::Analytic(AnalyticHypergraphon::homogeneous(0.1, [2]));
    let k = KernelFamily::single(linear_mean_kernel(2)).on_box(grid.x_min, grid.x_max);
    let rho = FiberedDensity::uniform(grid, 64, 0.0, 1.0).unwrap();
    c.bench_function("vlasov_force_64x64", |b| {
        b.iter(|| mean_field_force(&w, black_box(&rho), &k).unwrap())
    });
    let force = mean_field_force(&w, &rho, &k).unwrap();
    c.bench_function("vlasov_transport_64x64", |b| {
        b.iter(|| step_transport(black_box(&rho), &force, 0.01, 0.9).unwrap())
    });
}

fn cut_norm(c: &mut Criterion) {
    let mut g = c.benchmark_group("cut_norm_exact");
    for (parts, order) in [(8usize, 1usize), (16, 1), (4, 2), (6, 2)] {
        let len = parts.pow(order as u32 + 1);
        let v = uniform_vec(3, parts as u64, len, -1.0, 1.0);
        g.bench_function(format!("parts{parts}_order{order}"), |b| {
            b.iter(|| cut_norm_exact(black_box(&v), parts, order).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, particle_force, bounded_lipschitz, vlasov_step, cut_norm);
criterion_main!(benches);
