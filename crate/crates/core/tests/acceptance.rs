//! One line per acceptance criterion. Runs without the libtest harness so the
//! lines are printed whether or not a criterion fails; the process exits
//! non-zero if any does.

use std::sync::Arc;
use std::time::{Duration, Instant};

use mfsim_core::backends::scripted::ScriptedBackend;
use mfsim_core::backends::toy::{softmax, Alphabets, ToyModel, ToyModelParams};
use mfsim_core::backends::TextPolicy;
use mfsim_core::corpus::{generate_synthetic, split_corpus, SyntheticGenConfig};
use mfsim_core::domain::{AgentState, ContextStrategy, Event, SimulationConfig, Trajectory};
use mfsim_core::engine::intervention::{Intervention, InterventionKind, InterventionSchedule};
use mfsim_core::engine::persist::trajectory_to_string;
use mfsim_core::engine::{
    fork_trajectory, run_simulation, run_simulation_with, Backends, ForkSource, NoSink, RunOptions,
};
use mfsim_core::ibtune::{
    grad_meanfield_loss, induced_marginal, kl_bound_check, meanfield_loss, train_toy, IBBatch,
    IBHyper, IBTriple, TrainMode, TrainingData,
};
use mfsim_core::metrics::{
    dtw_distance, evaluate_run, f1_scores, forecast_error, kl_divergence, wasserstein1,
    DimensionSchema, MockJudge, KL_EPS,
};
use mfsim_core::rng::rng_for;
use rand::Rng;

const BOUND_INSTANCES: usize = 200;
const BOUND_TOL: f64 = 1e-9;
const GRAD_INSTANCES: usize = 50;
const GRAD_STEP: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-4;
const ABLATION_SEEDS: u64 = 10;
const ABLATION_MIN_WINS: usize = 9;
const ABLATION_MIN_RATIO: f64 = 1.2;
const METRIC_PAIRS: usize = 500;
const W1_TOL: f64 = 1e-12;
const FORECAST_SEEDS: u64 = 10;
const FORECAST_HORIZON: usize = 100;
const WINDOW: usize = 16;
/// Four steps of actions; a 16-action window leaves KL dominated by empty bins.
const ABLATION_WINDOW: usize = 64;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, budget_secs: u64) -> bool {
    elapsed <= Duration::from_secs(budget_secs)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn toy_alphabets(cfg: &SyntheticGenConfig) -> Alphabets {
    Alphabets {
        states: cfg.state_alphabet_size,
        actions: cfg.action_alphabet_size,
        mean_field: cfg.latent_alphabet_size,
    }
}

fn both(model: &ToyModel) -> Backends<'_> {
    Backends {
        policy: model,
        mean_field: model,
    }
}

/// Every step observed: the reference run for an event.
fn replay(event: &Event, cfg: &SimulationConfig, model: &ToyModel) -> Trajectory {
    let mut all = cfg.clone();
    all.warmup_steps = Some(cfg.horizon);
    run_simulation(event, &all, both(model), None).unwrap()
}

fn bound() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_for(11, &[]);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_tight = 0.0f64;
    for i in 0..BOUND_INSTANCES {
        let alph = Alphabets {
            states: 2,
            actions: rng.random_range(2..5),
            mean_field: rng.random_range(2..7),
        };
        let mf = ToyModelParams::random(alph, rng.random_range(0.1..3.0), i as u64);
        let raw: Vec<f64> = (0..alph.mean_field * alph.actions)
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        let z: f64 = raw.iter().sum();
        let px: Vec<f64> = raw.iter().map(|x| x / z).collect();
        let prior_logits: Vec<f64> = (0..alph.mean_field)
            .map(|_| rng.random_range(-3.0..3.0))
            .collect();
        let (lhs, rhs) = kl_bound_check(&mf, &softmax(&prior_logits), &px).unwrap();
        worst_gap = worst_gap.max(lhs - rhs);
        let (lhs, rhs) = kl_bound_check(&mf, &induced_marginal(&mf, &px), &px).unwrap();
        worst_tight = worst_tight.max((lhs - rhs).abs());
    }
    let elapsed = start.elapsed();
    outcome(
        worst_gap <= BOUND_TOL && worst_tight <= BOUND_TOL && within(elapsed, 10),
        format!(
            "{BOUND_INSTANCES} instances, max(I - E KL) = {worst_gap:.2e}, max |gap| at marginal = {worst_tight:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn gradient() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_for(12, &[]);
    let mut worst = 0.0f64;
    for i in 0..GRAD_INSTANCES {
        let alph = Alphabets {
            states: rng.random_range(2..4),
            actions: rng.random_range(2..4),
            mean_field: rng.random_range(2..5),
        };
        let seed = 1000 + 3 * i as u64;
        let mf = ToyModelParams::random(alph, 1.0, seed);
        let prior = ToyModelParams::random(alph, 1.0, seed + 1);
        let policy = ToyModelParams::random(alph, 1.0, seed + 2);
        let n = rng.random_range(1..6);
        let raw: Vec<IBTriple> = (0..n)
            .map(|_| IBTriple {
                x: (
                    rng.random_range(0..alph.mean_field),
                    rng.random_range(0..alph.actions),
                ),
                s: rng.random_range(0..alph.states),
                a_star: rng.random_range(0..alph.actions),
                weight: rng.random_range(0.1..1.0),
            })
            .collect();
        let total: f64 = raw.iter().map(|t| t.weight).sum();
        let batch = IBBatch {
            triples: raw
                .into_iter()
                .map(|t| IBTriple {
                    weight: t.weight / total,
                    ..t
                })
                .collect(),
        };
        let beta = rng.random_range(0.1..5.0);
        let g = grad_meanfield_loss(&mf, &prior, &policy, &batch, beta).unwrap();
        let fd: Vec<f64> = (0..mf.meanfield_logits.len())
            .map(|k| {
                let mut up = mf.clone();
                up.meanfield_logits[k] += GRAD_STEP;
                let mut dn = mf.clone();
                dn.meanfield_logits[k] -= GRAD_STEP;
                (meanfield_loss(&up, &prior, &policy, &batch, beta).unwrap()
                    - meanfield_loss(&dn, &prior, &policy, &batch, beta).unwrap())
                    / (2.0 * GRAD_STEP)
            })
            .collect();
        let diff = g
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(diff / norm);
    }
    let elapsed = start.elapsed();
    outcome(
        worst < GRAD_REL_TOL && within(elapsed, 30),
        format!(
            "{GRAD_INSTANCES} instances, max relative error {worst:.2e} (h = {GRAD_STEP:e}), {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn ablation() -> Outcome {
    let start = Instant::now();
    let schema = DimensionSchema::toy(4).unwrap();
    let judge = MockJudge::Identity { dimension: 0 };
    let mut wins = 0;
    let mut ratios = Vec::new();
    for seed in 0..ABLATION_SEEDS {
        let gen = SyntheticGenConfig::self_exciting(seed);
        let syn = generate_synthetic(&gen).unwrap();
        let (train, held_out) = split_corpus(&syn.corpus, 0.8, seed).unwrap();
        let data =
            TrainingData::from_corpus(&train, toy_alphabets(&gen), gen.agents_per_step).unwrap();
        let hyper = IBHyper {
            seed,
            ..IBHyper::default()
        };
        let full = ToyModel::new(
            train_toy(&data, &hyper, TrainMode::FullIbtune)
                .unwrap()
                .params,
        )
        .unwrap();
        let bare = ToyModel::new(
            train_toy(&data, &hyper, TrainMode::NoMeanfield)
                .unwrap()
                .params,
        )
        .unwrap();
        let mean_kl = |model: &ToyModel, strategy: ContextStrategy| -> f64 {
            let kls: Vec<f64> = held_out
                .events
                .iter()
                .map(|event| {
                    let mut cfg = SimulationConfig::for_event(event, gen.agents_per_step);
                    cfg.seed = seed;
                    cfg.context_strategy = strategy;
                    let real = replay(event, &cfg, model);
                    let sim = run_simulation(event, &cfg, both(model), None).unwrap();
                    evaluate_run(&real, &sim, &judge, &schema, ABLATION_WINDOW, None)
                        .unwrap()
                        .aggregate
                        .kl
                })
                .collect();
            kls.iter().sum::<f64>() / kls.len() as f64
        };
        let kl_full = mean_kl(&full, ContextStrategy::MeanField);
        let kl_bare = mean_kl(&bare, ContextStrategy::StateOnly);
        if kl_full < kl_bare {
            wins += 1;
        }
        ratios.push(kl_bare / kl_full);
    }
    let med = median(ratios);
    let elapsed = start.elapsed();
    outcome(
        wins >= ABLATION_MIN_WINS && med > ABLATION_MIN_RATIO && within(elapsed, 300),
        format!(
            "full_ibtune beats no_meanfield in {wins}/{ABLATION_SEEDS} seeds, median KL ratio {med:.3} (w = {ABLATION_WINDOW}), {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Minimum over every monotone warping path. Costs are accumulated from the
/// start of the path, the same order the dynamic program adds them in, so the
/// two agree bit for bit.
fn brute_dtw(a: &[f64], b: &[f64]) -> f64 {
    fn go(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64) -> f64 {
        let acc = (a[i] - b[j]).abs() + acc;
        if i + 1 == a.len() && j + 1 == b.len() {
            return acc;
        }
        let mut best = f64::INFINITY;
        if i + 1 < a.len() {
            best = best.min(go(a, b, i + 1, j, acc));
        }
        if j + 1 < b.len() {
            best = best.min(go(a, b, i, j + 1, acc));
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            best = best.min(go(a, b, i + 1, j + 1, acc));
        }
        best
    }
    go(a, b, 0, 0, 0.0) / (a.len() + b.len()) as f64
}

fn cdf_w1(p: &[f64], q: &[f64]) -> f64 {
    let (mut cp, mut cq, mut total) = (0.0, 0.0, 0.0);
    for k in 0..p.len() - 1 {
        cp += p[k];
        cq += q[k];
        total += (cp - cq).abs();
    }
    total
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_for(14, &[]);
    let mut dtw_mismatch = 0;
    for _ in 0..METRIC_PAIRS {
        let la = rng.random_range(1..7);
        let lb = rng.random_range(1..7);
        let a: Vec<f64> = (0..la).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..lb).map(|_| rng.random_range(-1.0..1.0)).collect();
        if dtw_distance(&a, &b).unwrap() != brute_dtw(&a, &b) {
            dtw_mismatch += 1;
        }
    }
    let mut w1_worst = 0.0f64;
    for _ in 0..METRIC_PAIRS {
        let n = rng.random_range(2..9);
        let mut draw = || {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let z: f64 = v.iter().sum();
            v.into_iter().map(|x| x / z).collect::<Vec<f64>>()
        };
        let (p, q) = (draw(), draw());
        w1_worst = w1_worst.max((wasserstein1(&p, &q).unwrap() - cdf_w1(&p, &q)).abs());
    }
    let kl_exact = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
    let kl_ok = kl_divergence(&[0.5, 0.5], &[0.5, 0.5], KL_EPS)
        .unwrap()
        .abs()
        <= 1e-9
        && (kl_divergence(&[1.0, 0.0], &[0.5, 0.5], 0.0).unwrap() - 2f64.ln()).abs() <= 1e-9
        && (kl_divergence(&[0.75, 0.25], &[0.5, 0.5], 0.0).unwrap() - kl_exact).abs() <= 1e-9
        && (kl_divergence(&[0.75, 0.25], &[0.5, 0.5], KL_EPS).unwrap() - 0.1308).abs() <= 1e-4;
    let f1_ok = f1_scores(&[vec![1, 2]], &[vec![1, 2]]).unwrap() == (1.0, 1.0)
        && f1_scores(&[vec![2, 0]], &[vec![0, 2]]).unwrap() == (0.0, 0.0);
    let elapsed = start.elapsed();
    outcome(
        dtw_mismatch == 0 && w1_worst <= W1_TOL && kl_ok && f1_ok && within(elapsed, 30),
        format!(
            "dtw mismatches {dtw_mismatch}/{METRIC_PAIRS}, max |w1 - cdf| {w1_worst:.1e}, kl examples {}, f1 examples {}, {:.2}s",
            if kl_ok { "ok" } else { "off" },
            if f1_ok { "ok" } else { "off" },
            elapsed.as_secs_f64()
        ),
    )
}

fn warmup_fidelity() -> Outcome {
    let gen = SyntheticGenConfig::self_exciting(15);
    let syn = generate_synthetic(&gen).unwrap();
    let model = ToyModel::new(ToyModelParams::random(toy_alphabets(&gen), 0.5, 15)).unwrap();
    let mut mismatched = 0;
    for event in &syn.corpus.events {
        let cfg = SimulationConfig::for_event(event, gen.agents_per_step);
        let run = replay(event, &cfg, &model);
        let actions: Vec<_> = run.scored_actions().collect();
        let same_len = actions.len() == event.timeline.len();
        let same_actions = actions.iter().zip(&event.timeline).all(|(a, e)| {
            a.text == e.action.text
                && a.author_index == e.action.author_index
                && a.provenance == e.action.provenance
        });
        let same_states = run.steps.iter().enumerate().all(|(t, rec)| {
            let block = event.block(t, cfg.batch_size);
            rec.states.len() == block.len()
                && rec.states.iter().zip(block).all(|(s, e)| {
                    serde_json::to_string(s).unwrap()
                        == serde_json::to_string(&AgentState::new(
                            e.profile.clone(),
                            event.topic.clone(),
                        ))
                        .unwrap()
                })
        });
        if !(same_len && same_actions && same_states) {
            mismatched += 1;
        }
    }
    outcome(
        mismatched == 0,
        format!(
            "{} of {} events replayed exactly",
            syn.corpus.len() - mismatched,
            syn.corpus.len()
        ),
    )
}

fn determinism() -> Outcome {
    let mut gen = SyntheticGenConfig::self_exciting(16);
    gen.num_events = 3;
    let syn = generate_synthetic(&gen).unwrap();
    let model = ToyModel::new(ToyModelParams::random(toy_alphabets(&gen), 1.0, 16)).unwrap();
    let schedule = InterventionSchedule {
        entries: vec![Intervention {
            step: 12,
            kind: InterventionKind::SeedAgents,
            actions: vec!["a2".into()],
            count: 4,
        }],
    };
    let mut checked = 0;
    let mut differing = 0;
    for event in &syn.corpus.events {
        for (strategy, k) in [
            (ContextStrategy::MeanField, 0),
            (ContextStrategy::StateOnly, 0),
            (ContextStrategy::RecentK, 5),
            (ContextStrategy::PopularK, 5),
        ] {
            let mut cfg = SimulationConfig::for_event(event, gen.agents_per_step);
            cfg.seed = 99;
            cfg.context_strategy = strategy;
            cfg.k = k;
            let run = |fanout: usize| {
                let opts = RunOptions {
                    fanout,
                    ..RunOptions::default()
                };
                trajectory_to_string(
                    &run_simulation_with(
                        event,
                        &cfg,
                        both(&model),
                        Some(&schedule),
                        opts,
                        &mut NoSink,
                    )
                    .unwrap(),
                )
            };
            let wide = run(gen.agents_per_step);
            let again = run(gen.agents_per_step);
            let narrow = run(1);
            checked += 1;
            if wide != again || wide != narrow {
                differing += 1;
            }
        }
    }
    outcome(
        differing == 0,
        format!("{checked} configurations, {differing} differ across repeats or fan-out 1 vs N_t"),
    )
}

fn forecast() -> Outcome {
    let (early, late) = (
        (0.2 * FORECAST_HORIZON as f64) as usize,
        (0.7 * FORECAST_HORIZON as f64) as usize,
    );
    let schema = DimensionSchema::toy(4).unwrap();
    let judge = MockJudge::Identity { dimension: 0 };
    let mut errs_early = Vec::new();
    let mut errs_late = Vec::new();
    for seed in 0..FORECAST_SEEDS {
        let mut gen = SyntheticGenConfig::self_exciting(seed);
        gen.num_events = 1;
        gen.steps_per_event = FORECAST_HORIZON;
        gen.initial_latent = Some(0);
        let syn = generate_synthetic(&gen).unwrap();
        let event = &syn.corpus.events[0];
        let oracle = ToyModel::new(
            ToyModelParams::from_probabilities(
                toy_alphabets(&gen),
                &gen.emission,
                &gen.latent_transition,
            )
            .unwrap(),
        )
        .unwrap();
        let mut cfg = SimulationConfig::for_event(event, gen.agents_per_step);
        cfg.seed = seed;
        let real = replay(event, &cfg, &oracle);
        let err_at = |start: usize| {
            let run = fork_trajectory(
                event,
                ForkSource::Event,
                start,
                &cfg,
                both(&oracle),
                None,
                RunOptions::default(),
                &mut NoSink,
            )
            .unwrap();
            forecast_error(&real, &run, &judge, &schema, WINDOW).unwrap()
        };
        errs_early.push(err_at(early));
        errs_late.push(err_at(late));
    }
    let (m_early, m_late) = (median(errs_early), median(errs_late));
    outcome(
        m_late <= m_early,
        format!("median error at {late} = {m_late:.4}, at {early} = {m_early:.4}, {FORECAST_SEEDS} seeds"),
    )
}

fn intervention() -> Outcome {
    let mut gen = SyntheticGenConfig::self_exciting(17);
    gen.num_events = 1;
    gen.steps_per_event = 60;
    let syn = generate_synthetic(&gen).unwrap();
    let event = &syn.corpus.events[0];
    let model = ToyModel::new(ToyModelParams::random(toy_alphabets(&gen), 1.0, 17)).unwrap();
    let mut cfg = SimulationConfig::for_event(event, gen.agents_per_step);
    cfg.seed = 17;
    let parent = run_simulation(event, &cfg, both(&model), None).unwrap();
    let (fork_at, act_at) = (30, 34);
    // flood the step with an action that was not its majority
    let counts = (0..4)
        .map(|a| {
            parent.steps[act_at]
                .actions
                .iter()
                .filter(|x| x.text == format!("a{a}"))
                .count()
        })
        .collect::<Vec<_>>();
    let target = (0..4).min_by_key(|&a| counts[a]).unwrap();
    let schedule = InterventionSchedule {
        entries: vec![Intervention {
            step: act_at,
            kind: InterventionKind::SeedAgents,
            actions: vec![format!("a{target}")],
            count: gen.agents_per_step,
        }],
    };
    let child = fork_trajectory(
        event,
        ForkSource::Parent {
            trajectory: &parent,
            run_id: Some("parent"),
        },
        fork_at,
        &cfg,
        both(&model),
        Some(&schedule),
        RunOptions::default(),
        &mut NoSink,
    )
    .unwrap();
    let line = |rec| serde_json::to_string(rec).unwrap();
    let prefix_same = (0..act_at).all(|t| line(&parent.steps[t]) == line(&child.steps[t]));
    let first_diff =
        (0..parent.steps.len()).find(|&t| line(&parent.steps[t]) != line(&child.steps[t]));
    outcome(
        prefix_same && first_diff == Some(act_at),
        format!("fork at {fork_at}, intervention at {act_at}, first differing step {first_diff:?}"),
    )
}

fn nll_contract() -> Outcome {
    let mut gen = SyntheticGenConfig::self_exciting(18);
    gen.num_events = 1;
    gen.steps_per_event = 10;
    let syn = generate_synthetic(&gen).unwrap();
    let event = &syn.corpus.events[0];
    let model = ToyModel::new(ToyModelParams::random(toy_alphabets(&gen), 0.5, 18)).unwrap();
    let cfg = SimulationConfig::for_event(event, gen.agents_per_step);
    let real = replay(event, &cfg, &model);
    let sim = run_simulation(event, &cfg, both(&model), None).unwrap();
    let schema = DimensionSchema::toy(4).unwrap();
    let judge = MockJudge::Identity { dimension: 0 };
    let text = TextPolicy::new(Arc::new(ScriptedBackend::constant("a0")));
    let with = evaluate_run(&real, &sim, &judge, &schema, WINDOW, Some(&model)).unwrap();
    let without = evaluate_run(&real, &sim, &judge, &schema, WINDOW, Some(&text)).unwrap();
    let pass = with.nll.is_some_and(f64::is_finite) && without.nll.is_none();
    outcome(
        pass,
        format!(
            "toy backend nll {:?}, text backend nll {:?}",
            with.nll, without.nll
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("variational bound", bound),
        ("mean-field gradient", gradient),
        ("ablation ordering", ablation),
        ("metric oracles", metric_oracles),
        ("warm-up fidelity", warmup_fidelity),
        ("determinism", determinism),
        ("forecast monotonicity", forecast),
        ("intervention causality", intervention),
        ("nll reporting", nll_contract),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {} {name}: {} ({})",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
