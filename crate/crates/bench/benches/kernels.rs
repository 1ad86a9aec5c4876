use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput};
use ionflow_bench::{column, inputs, models};
use ionflow_core::geochem::{equilibrate, equilibrate_bruteforce};
use ionflow_core::{
    advect_step, chemistry_step, stable_dt, AqueousSolution, ChemistryBackend, CouplingConfig, ExchangeParams,
    ExchangerState,
};

fn split(f: &[f64; 6]) -> (AqueousSolution, ExchangerState) {
    (AqueousSolution::new(f[0], f[1], f[2], 0.0, 0.0), ExchangerState::new(f[3], f[4], f[5]))
}

fn equilibrium(c: &mut Criterion) {
    let p = ExchangeParams::default();
    let rows: Vec<_> = inputs(1000).iter().map(split).collect();
    let mut g = c.benchmark_group("equilibrate");
    g.throughput(Throughput::Elements(rows.len() as u64));
    g.bench_function("newton", |b| b.iter(|| rows.iter().map(|(a, e)| equilibrate(a, e, &p).unwrap()).count()));
    g.bench_function("bisection", |b| {
        b.iter(|| rows.iter().map(|(a, e)| equilibrate_bruteforce(a, e, &p).unwrap()).count())
    });
    g.finish();
}

fn prediction(c: &mut Criterion) {
    let data = inputs(10_000);
    let mut g = c.benchmark_group("predict");
    for (name, m) in models() {
        for batch in [1usize, 100, 10_000] {
            g.throughput(Throughput::Elements(batch as u64));
            g.bench_with_input(BenchmarkId::new(name, batch), &data[..batch], |b, x| b.iter(|| m.predict(x)));
        }
    }
    g.finish();
}

fn transport(c: &mut Criterion) {
    let (tcfg, state) = column(40);
    let dt = stable_dt(&tcfg);
    c.bench_function("advect_step", |b| b.iter(|| advect_step(&state, &tcfg, dt).unwrap()));

    let p = ExchangeParams::default();
    let ccfg = CouplingConfig::default();
    let moved = advect_step(&state, &tcfg, dt).unwrap();
    c.bench_function("chemistry_step/oracle", |b| {
        b.iter_batched(|| moved.clone(), |s| chemistry_step(&s, &ccfg, &p, 1, &ChemistryBackend::Oracle).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group!(benches, equilibrium, prediction, transport);
criterion_main!(benches);
