use std::hint::black_box;

use afrelay::analysis::empirical_tail_power_with;
use afrelay::linalg::complex_normal_vec;
use afrelay::linksim::{simulate_bfa_with, weights_from_vector};
use afrelay::par::item_rng;
use afrelay::randomization::randomize_r2_with;
use afrelay::sdr::DEFAULT_TOL_ABS;
use afrelay::{bisect_sdr, build_forms, sample_channels, Exec, NetworkConfig, NetworkKind, Variant};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn modes() -> Vec<(&'static str, Exec)> {
    let mut m = vec![("sequential", Exec::Sequential)];
    #[cfg(feature = "parallel")]
    m.push(("parallel", Exec::Parallel));
    m
}

fn monte_carlo(c: &mut Criterion) {
    let cfg = NetworkConfig::uniform(NetworkKind::Distributed, 4, vec![2, 2], 1.0, 0.25, 0.25)
        .with_total_budget(10.0)
        .with_primal_users(1, 2.0, 0.25)
        .validate()
        .unwrap();
    let ch = sample_channels(&cfg, 1);
    let forms = build_forms(&cfg, &ch).unwrap();
    let sol = bisect_sdr(&forms, Variant::R2, 1e-4, DEFAULT_TOL_ABS).unwrap();
    let w2 = sol.w2_or_zero();
    let mut rng = item_rng(2, 0);
    let v1 = weights_from_vector(cfg.kind, cfg.relays, &complex_normal_vec(&mut rng, forms.dim)).unwrap();
    let v2 = weights_from_vector(cfg.kind, cfg.relays, &complex_normal_vec(&mut rng, forms.dim)).unwrap();

    let mut g = c.benchmark_group("randomize_r2_1000");
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| randomize_r2_with(&forms, &sol, 1000, black_box(3), exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("tail_power_100k");
    let r = &forms.constraints[0];
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| empirical_tail_power_with(&r.r, &r.r_bar, &sol.w1, &w2, 6.0, 100_000, black_box(4), exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("link_bfa_20k_pairs");
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| simulate_bfa_with(&cfg, &ch, &v1, &v2, 20_000, black_box(5), exec).unwrap())
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = monte_carlo
}
criterion_main!(benches);
