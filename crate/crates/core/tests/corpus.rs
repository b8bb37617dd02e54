use mfsim_core::backends::toy::{Alphabets, ToyModel, ToyModelParams};
use mfsim_core::corpus::{
    generate_synthetic, majority, read_corpus, resample_states, write_corpus, CorpusSource,
    SyntheticGenConfig,
};
use mfsim_core::domain::{SimulationConfig, Trajectory};
use mfsim_core::engine::intervention::{Intervention, InterventionKind, InterventionSchedule};
use mfsim_core::engine::persist::{
    read_trajectory, read_trajectory_from, trajectory_to_string, write_trajectory, JsonlSink,
};
use mfsim_core::engine::{
    fork_trajectory, run_simulation, run_simulation_with, Backends, ForkSource, NoSink, RunOptions,
};
use proptest::prelude::*;

fn small(seed: u64, events: usize, steps: usize, agents: usize) -> SyntheticGenConfig {
    let mut cfg = SyntheticGenConfig::self_exciting(seed);
    cfg.num_events = events;
    cfg.steps_per_event = steps;
    cfg.agents_per_step = agents;
    cfg
}

#[test]
fn resampling_follows_profile_frequencies() {
    let syn = generate_synthetic(&small(1, 1, 1, 4)).unwrap();
    let mut event = syn.corpus.events[0].clone();
    let p1 = event.timeline[0].profile.clone();
    let mut p2 = p1.clone();
    p2.description = "someone else".into();
    for (i, e) in event.timeline.iter_mut().enumerate() {
        e.profile = if i < 3 { p1.clone() } else { p2.clone() };
    }
    let n = 10_000;
    let states = resample_states(&event, n, 7).unwrap();
    let share = states.iter().filter(|s| s.profile == p1).count() as f64 / n as f64;
    assert!((share - 0.75).abs() < 0.02, "{share}");
}

#[test]
fn latent_free_emission_matches_its_row() {
    let mut cfg = small(2, 1, 625, 16);
    let row = vec![0.4, 0.3, 0.2, 0.1];
    for r in cfg.emission.iter_mut() {
        *r = row.clone();
    }
    let syn = generate_synthetic(&cfg).unwrap();
    let timeline = &syn.corpus.events[0].timeline;
    assert_eq!(timeline.len(), 10_000);
    for (a, p) in row.iter().enumerate() {
        let text = format!("a{a}");
        let f = timeline.iter().filter(|e| e.action.text == text).count() as f64
            / timeline.len() as f64;
        assert!((f - p).abs() < 0.02, "action {a}: {f}");
    }
}

fn majority_share(cfg: &SyntheticGenConfig) -> f64 {
    let syn = generate_synthetic(cfg).unwrap();
    let timeline = &syn.corpus.events[0].timeline;
    let mut total = 0usize;
    for block in timeline.chunks(cfg.agents_per_step) {
        let mut counts = vec![0usize; cfg.action_alphabet_size];
        for e in block {
            counts[e.action.text[1..].parse::<usize>().unwrap()] += 1;
        }
        total += counts[majority(&counts)];
    }
    total as f64 / timeline.len() as f64
}

#[test]
fn feedback_raises_majority_share() {
    let cfg = small(3, 1, 10_000, 16);
    let with = majority_share(&cfg);
    let without = majority_share(&cfg.without_feedback());
    assert!(with > without, "{with} <= {without}");
}

#[test]
fn latents_are_recorded_per_step() {
    let cfg = small(4, 3, 9, 5);
    let syn = generate_synthetic(&cfg).unwrap();
    assert_eq!(syn.latents.len(), 3);
    assert!(syn
        .latents
        .iter()
        .all(|l| l.len() == 9 && l.iter().all(|&z| z < 8)));
    assert_eq!(generate_synthetic(&cfg).unwrap(), syn);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn corpus_round_trips(seed in 0u64..10_000, events in 1usize..4, steps in 1usize..6, agents in 1usize..5) {
        let syn = generate_synthetic(&small(seed, events, steps, agents)).unwrap();
        let mut buf = Vec::new();
        write_corpus(&syn.corpus, &mut buf).unwrap();
        let back = read_corpus(buf.as_slice(), CorpusSource::Synthetic).unwrap();
        prop_assert_eq!(back, syn.corpus);
    }

    #[test]
    fn trajectories_round_trip(seed in 0u64..10_000, steps in 2usize..8, fork in 0usize..8) {
        let syn = generate_synthetic(&small(seed, 1, steps, 3)).unwrap();
        let event = &syn.corpus.events[0];
        let model = ToyModel::new(ToyModelParams::random(
            Alphabets { states: 6, actions: 4, mean_field: 8 },
            1.0,
            seed,
        ))
        .unwrap();
        let mut cfg = SimulationConfig::for_event(event, 3);
        cfg.seed = seed;
        let schedule = InterventionSchedule {
            entries: vec![Intervention {
                step: steps - 1,
                kind: InterventionKind::Broadcast,
                actions: vec!["official notice".into()],
                count: 0,
            }],
        };
        let backends = Backends { policy: &model, mean_field: &model };
        let traj = fork_trajectory(
            event,
            ForkSource::Event,
            fork.min(steps),
            &cfg,
            backends,
            Some(&schedule),
            RunOptions::default(),
            &mut NoSink,
        )
        .unwrap();
        let text = trajectory_to_string(&traj);
        let back: Trajectory = read_trajectory_from(text.as_bytes()).unwrap();
        prop_assert_eq!(&back, &traj);
        prop_assert_eq!(trajectory_to_string(&back), text);
    }
}

#[test]
fn streamed_file_matches_in_memory_run() {
    let syn = generate_synthetic(&small(5, 1, 6, 4)).unwrap();
    let event = &syn.corpus.events[0];
    let model = ToyModel::new(ToyModelParams::random(
        Alphabets {
            states: 6,
            actions: 4,
            mean_field: 8,
        },
        1.0,
        5,
    ))
    .unwrap();
    let cfg = SimulationConfig::for_event(event, 4);
    let backends = Backends {
        policy: &model,
        mean_field: &model,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.jsonl");
    let mut sink = JsonlSink::create(&path).unwrap();
    let traj = run_simulation_with(
        event,
        &cfg,
        backends,
        None,
        RunOptions::default(),
        &mut sink,
    )
    .unwrap();
    drop(sink);
    assert_eq!(
        std::fs::read_to_string(&path).unwrap(),
        trajectory_to_string(&traj)
    );
    assert_eq!(read_trajectory(&path).unwrap(), traj);

    let copy = dir.path().join("copy.jsonl");
    write_trajectory(&traj, &copy).unwrap();
    assert_eq!(
        read_trajectory(&copy).unwrap(),
        run_simulation(event, &cfg, backends, None).unwrap()
    );
}

#[test]
fn truncated_file_reports_the_line() {
    let syn = generate_synthetic(&small(6, 1, 4, 2)).unwrap();
    let event = &syn.corpus.events[0];
    let model = ToyModel::new(ToyModelParams::zeros(Alphabets {
        states: 6,
        actions: 4,
        mean_field: 8,
    }))
    .unwrap();
    let cfg = SimulationConfig::for_event(event, 2);
    let traj = run_simulation(
        event,
        &cfg,
        Backends {
            policy: &model,
            mean_field: &model,
        },
        None,
    )
    .unwrap();
    let mut text = trajectory_to_string(&traj);
    text.truncate(text.len() - 10);
    match read_trajectory_from(text.as_bytes()) {
        Err(mfsim_core::Error::Parse { line, .. }) => assert_eq!(line, 1 + traj.steps.len()),
        other => panic!("expected parse error, got {other:?}"),
    }
}
