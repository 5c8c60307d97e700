use bsde_core::driver::{h1_driver, mckean_vlasov_driver, LawConfig, ScalarRule};
use bsde_core::exec::Execution;
use bsde_core::solver::{picard_solve, PicardStart, SolverConfig};
use bsde_core::space::{build_random_walk_space, RandomVariable};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn picard(c: &mut Criterion) {
    let mut group = c.benchmark_group("picard_h1");
    group.sample_size(10);
    for steps in [12usize, 16] {
        let s = build_random_walk_space(1, steps, 1.0).unwrap();
        let xi = RandomVariable::from_terminal_noise(&s, 1, |b, out| out[0] = b[0].sin());
        let d = h1_driver(
            1,
            ScalarRule::Arctan {
                a: -1.0,
                s: 1.0,
                b: 0.5,
                c: 0.0,
                c_t: 0.0,
            },
        );
        for execution in [Execution::Sequential, Execution::Parallel] {
            let cfg = SolverConfig {
                execution,
                ..SolverConfig::default()
            };
            group.bench_with_input(BenchmarkId::new(format!("{execution:?}"), steps), &steps, |b, _| {
                b.iter(|| picard_solve(&s, &xi, &d, &cfg, &PicardStart::Zero).unwrap())
            });
        }
    }
    group.finish();
}

fn law_driver(c: &mut Criterion) {
    let mut group = c.benchmark_group("picard_mkv");
    group.sample_size(10);
    let s = build_random_walk_space(1, 12, 1.0).unwrap();
    let xi = RandomVariable::from_terminal_noise(&s, 1, |b, out| out[0] = b[0].abs());
    let d = mckean_vlasov_driver(1, ScalarRule::affine(-1.0, 0.5, 0.0), LawConfig::default());
    for execution in [Execution::Sequential, Execution::Parallel] {
        let cfg = SolverConfig {
            execution,
            ..SolverConfig::default()
        };
        group.bench_function(format!("{execution:?}"), |b| {
            b.iter(|| picard_solve(&s, &xi, &d, &cfg, &PicardStart::Zero).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, picard, law_driver);
criterion_main!(benches);
