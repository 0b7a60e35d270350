use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use tadlab_core::dynamics::{evolve_for, Evolution};
use tadlab_core::tad::{StopMode, TadConfig, TadModel, Variant};
use tadlab_core::{solve_principal_eigenpair, stream_rng, BasinTopology, Potential, SdeConfig};

fn em_stepping(c: &mut Criterion) {
    let pot = Potential::quartic_well();
    let top = BasinTopology::from_potential(&pot, 2001).unwrap();
    let basin = &top.basins()[0];
    // Cold enough that 10^4 steps never leave the well.
    let cfg = SdeConfig::new(20.0, 1e-3, 1, 0).unwrap();
    c.bench_function("em_10k_steps", |b| {
        let mut rng = cfg.rng();
        b.iter(
            || match evolve_for(basin.minimum, basin, &pot, &cfg, &mut rng, 10_000).unwrap() {
                Evolution::Survived { position, .. } => black_box(position),
                Evolution::Exited(e) => black_box(e.position),
            },
        )
    });
}

fn eigen_solve(c: &mut Criterion) {
    let pot = Potential::quartic_well();
    let top = BasinTopology::from_potential(&pot, 2001).unwrap();
    let basin = &top.basins()[0];
    let mut g = c.benchmark_group("eigen_solve");
    for n in [1000usize, 4000] {
        g.bench_function(format!("beta12_n{n}"), |b| {
            b.iter(|| {
                solve_principal_eigenpair(&pot, basin, black_box(12.0), n)
                    .unwrap()
                    .lambda()
            })
        });
    }
    g.finish();
}

fn exit_step(c: &mut Criterion) {
    let pot = Potential::tilted_quartic(0.1);
    let top = BasinTopology::from_potential(&pot, 2001).unwrap();
    let cfg = TadConfig {
        beta_hi: 3.0,
        beta_lo: 6.0,
        dt: 2e-3,
        ..TadConfig::default()
    };
    let mut g = c.benchmark_group("exit_step");
    g.sample_size(20);
    for v in [Variant::Modified, Variant::Idealized] {
        let model = TadModel::build(v, &pot, &top, &cfg).unwrap();
        let x0 = top.basins()[0].minimum;
        let mut k = 0u64;
        g.bench_function(v.to_string(), |b| {
            b.iter_batched(
                || {
                    k += 1;
                    stream_rng(7, k)
                },
                |mut rng| {
                    model
                        .exit_step(0, &pot, x0, StopMode::Enabled, &mut rng)
                        .unwrap()
                },
                BatchSize::SmallInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, em_stepping, eigen_solve, exit_step);
criterion_main!(benches);
