//! Sequential vs parallel fan-out. `fanout = 1` forces the sequential path
//! inside one binary; build with `--no-default-features` to drop rayon
//! entirely and compare against the same numbers.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mfsim_core::backends::toy::{Alphabets, ToyModel, ToyModelParams};
use mfsim_core::backends::{MeanFieldModel, PolicyInput, PolicyModel};
use mfsim_core::corpus::{generate_synthetic, SyntheticGenConfig};
use mfsim_core::domain::SimulationConfig;
use mfsim_core::engine::{run_simulation_with, Backends, NoSink, RunOptions};
use mfsim_core::ibtune::train::build_batch;
use mfsim_core::ibtune::TrainingData;
use mfsim_core::Result;

/// Toy policy that burns a fixed amount of CPU per call, standing in for a
/// model with real inference cost.
struct Busy {
    inner: ToyModel,
    spins: u32,
}

impl PolicyModel for Busy {
    fn sample(&self, input: &PolicyInput<'_>, seed: u64, temperature: f64) -> Result<String> {
        let mut x = seed as f64;
        for i in 0..self.spins {
            x = (x + i as f64).sin();
        }
        black_box(x);
        self.inner.sample(input, seed, temperature)
    }

    fn logprob(&self, input: &PolicyInput<'_>, action: &str) -> Result<Option<f64>> {
        self.inner.logprob(input, action)
    }

    fn supports_logprob(&self) -> bool {
        true
    }
}

const ALPH: Alphabets = Alphabets {
    states: 6,
    actions: 4,
    mean_field: 8,
};

fn bench_fanout(c: &mut Criterion) {
    let mut gen = SyntheticGenConfig::self_exciting(1);
    gen.num_events = 1;
    gen.agents_per_step = 64;
    let syn = generate_synthetic(&gen).unwrap();
    let event = &syn.corpus.events[0];
    let model = ToyModel::new(ToyModelParams::random(ALPH, 1.0, 1)).unwrap();
    let mut cfg = SimulationConfig::for_event(event, gen.agents_per_step);
    cfg.warmup_steps = Some(0);

    let mut group = c.benchmark_group("simulate");
    group.sample_size(20);
    for spins in [0u32, 2_000] {
        let policy = Busy {
            inner: model.clone(),
            spins,
        };
        let backends = Backends {
            policy: &policy,
            mean_field: &model as &dyn MeanFieldModel,
        };
        for (label, fanout) in [("sequential", 1), ("parallel", usize::MAX)] {
            let opts = RunOptions {
                fanout,
                ..RunOptions::default()
            };
            group.bench_with_input(BenchmarkId::new(label, spins), &opts, |b, opts| {
                b.iter(|| {
                    run_simulation_with(event, &cfg, backends, None, *opts, &mut NoSink).unwrap()
                })
            });
        }
    }
    group.finish();
}

fn bench_batch(c: &mut Criterion) {
    let gen = SyntheticGenConfig::self_exciting(2);
    let syn = generate_synthetic(&gen).unwrap();
    let data = TrainingData::from_corpus(&syn.corpus, ALPH, gen.agents_per_step).unwrap();
    let mf = ToyModelParams::random(ALPH, 0.5, 2);
    let label = if mfsim_core::par::is_parallel() {
        "parallel"
    } else {
        "sequential"
    };
    c.bench_function(&format!("build_batch/{label}"), |b| {
        b.iter(|| build_batch(black_box(&data), &mf))
    });
}

criterion_group!(benches, bench_fanout, bench_batch);
criterion_main!(benches);
