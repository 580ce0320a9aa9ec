use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use polyelast_core::grid::{self, VectorField};
use polyelast_core::stepper::{step_objective, StepProblem};
use polyelast_core::{make_initial_data, step, EnergyModel, RunConfig, StepOptions};

fn setup(n: usize) -> (EnergyModel, polyelast_core::State) {
    let cfg = RunConfig { n, ..Default::default() };
    (cfg.model().unwrap(), make_initial_data(&cfg).unwrap())
}

fn kernels(c: &mut Criterion) {
    for n in [8, 16] {
        let (model, state) = setup(n);
        let h = 1.0 / 40.0;
        let v = state.v.map(|x| [x[0] + 0.01, x[1], x[2] - 0.02]);
        let dir = VectorField::from_fn(state.grid(), |x| [x[1].sin(), x[2].cos(), x[0]]);

        c.bench_with_input(BenchmarkId::new("diff", n), &state.xi, |b, xi| b.iter(|| grid::diff(black_box(xi), 1)));
        c.bench_with_input(BenchmarkId::new("step_objective", n), &v, |b, v| {
            b.iter(|| step_objective(&model, &state, h, black_box(v)))
        });
        let problem = StepProblem::from_state(&model, &state, h);
        c.bench_with_input(BenchmarkId::new("hessian_apply", n), &dir, |b, d| b.iter(|| problem.hessian_apply(&v, black_box(d))));
        c.bench_function(&format!("step/{n}"), |b| b.iter(|| step(&model, black_box(&state), h, &StepOptions::default()).unwrap()));
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = kernels
}
criterion_main!(benches);
