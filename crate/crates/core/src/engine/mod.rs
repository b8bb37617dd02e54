//! The simulation loop.
//!
//! Each step `t` records the current mean field `m_t`, the active agents'
//! states and their actions. Warm-up steps (`t <= warmup`) replay the event's
//! real actions; later steps sample one action per agent from the policy,
//! conditioned on the agent's state and the strategy's context. Interventions
//! for the step are applied, the step is emitted, and then the mean field and
//! the agent set advance to `t + 1`.
//!
//! Per-agent randomness is keyed by `(seed, step, agent)`, so the fan-out
//! width and scheduling order cannot change the output.

pub mod context;
pub mod intervention;
pub mod persist;

use crate::backends::{MeanFieldInput, MeanFieldModel, PolicyInput, PolicyModel};
use crate::corpus::resample_entries;
use crate::domain::{
    ActionText, AgentState, Engagement, Event, ForkInfo, MeanFieldState, Provenance,
    SimulationConfig, StepRecord, Trajectory,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, tag};

use context::{build_context, HistoryItem, PopularityScore};
use intervention::{apply_interventions, InterventionSchedule};

/// The two model roles a run needs.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub policy: &'a dyn PolicyModel,
    pub mean_field: &'a dyn MeanFieldModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Maximum concurrent policy calls per step; 1 runs them in order.
    pub fanout: usize,
    pub popularity: PopularityScore,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            fanout: usize::MAX,
            popularity: PopularityScore::default(),
        }
    }
}

/// Receives the run as it is produced, so an aborted run leaves a usable
/// prefix behind.
pub trait StepSink {
    fn header(&mut self, _trajectory: &Trajectory) -> Result<()> {
        Ok(())
    }
    fn step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }
}

pub struct NoSink;

impl StepSink for NoSink {}

/// Agents active at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepAgents {
    pub states: Vec<AgentState>,
    pub engagement: Vec<Engagement>,
    pub authors: Vec<usize>,
}

impl StepAgents {
    fn from_block(event: &Event, t: usize, batch: usize) -> Self {
        let block = event.block(t, batch);
        StepAgents {
            states: block
                .iter()
                .map(|e| AgentState::new(e.profile.clone(), event.topic.clone()))
                .collect(),
            engagement: block.iter().map(|e| e.engagement).collect(),
            authors: block.iter().map(|e| e.action.author_index).collect(),
        }
    }
}

fn initial_agents(event: &Event, cfg: &SimulationConfig) -> Result<StepAgents> {
    let agents = StepAgents::from_block(event, 0, cfg.batch_size);
    if !agents.states.is_empty() {
        return Ok(agents);
    }
    if cfg.resample_states && !event.timeline.is_empty() {
        return resampled(event, 0, cfg);
    }
    Err(Error::Horizon {
        step: 0,
        message: format!("event {} has no timeline entries", event.event_id),
    })
}

fn resampled(event: &Event, t: usize, cfg: &SimulationConfig) -> Result<StepAgents> {
    let picks = resample_entries(
        event,
        cfg.batch_size,
        derive_seed(cfg.seed, &[tag::RESAMPLE, t as u64]),
    )?;
    Ok(StepAgents {
        states: picks
            .iter()
            .map(|&i| AgentState::new(event.timeline[i].profile.clone(), event.topic.clone()))
            .collect(),
        engagement: picks
            .iter()
            .map(|&i| event.timeline[i].engagement)
            .collect(),
        authors: (0..picks.len()).map(|i| t * cfg.batch_size + i).collect(),
    })
}

/// Agents for step `t + 1`: the next corpus block while the timeline lasts,
/// resampled profiles afterwards when resampling is enabled.
pub fn advance_states(event: &Event, t: usize, cfg: &SimulationConfig) -> Result<StepAgents> {
    if t + 1 >= cfg.horizon {
        return Err(Error::argument(format!(
            "cannot advance past the horizon {} from step {t}",
            cfg.horizon
        )));
    }
    let next = StepAgents::from_block(event, t + 1, cfg.batch_size);
    if !next.states.is_empty() {
        return Ok(next);
    }
    if cfg.resample_states {
        return resampled(event, t + 1, cfg);
    }
    Err(Error::Horizon {
        step: t + 1,
        message: format!(
            "timeline of {} entries is exhausted and state resampling is off",
            event.timeline.len()
        ),
    })
}

/// One mean-field update over the step's actions (plus any broadcasts).
#[allow(clippy::too_many_arguments)]
pub fn update_mean_field(
    prev: &MeanFieldState,
    topic: &str,
    states: &[AgentState],
    actions: &[ActionText],
    model: &dyn MeanFieldModel,
    word_cap: usize,
    seed: u64,
    temperature: f64,
) -> Result<MeanFieldState> {
    if actions.is_empty() {
        return Err(Error::argument(
            "mean-field update needs at least one action",
        ));
    }
    let content = model.update(
        &MeanFieldInput {
            topic,
            previous: prev,
            states,
            actions,
            word_cap,
        },
        seed,
        temperature,
    )?;
    Ok(MeanFieldState {
        content,
        step: prev.step + 1,
    })
}

fn engagement_of(event: &Event, action: &ActionText) -> Engagement {
    match action.provenance {
        Provenance::GroundTruth => event
            .timeline
            .get(action.author_index)
            .map(|e| e.engagement)
            .unwrap_or_default(),
        _ => Engagement::default(),
    }
}

/// Where the run starts.
struct Resume<'a> {
    start: usize,
    parent: Option<&'a Trajectory>,
}

struct Runner<'a> {
    event: &'a Event,
    cfg: &'a SimulationConfig,
    backends: Backends<'a>,
    schedule: Option<&'a InterventionSchedule>,
    opts: RunOptions,
}

impl Runner<'_> {
    fn real_actions(&self, t: usize) -> Result<Vec<ActionText>> {
        let block = self.event.block(t, self.cfg.batch_size);
        if block.is_empty() {
            return Err(Error::Horizon {
                step: t,
                message: "no real actions left to replay during warm-up".into(),
            });
        }
        Ok(block
            .iter()
            .map(|e| ActionText {
                text: e.action.text.clone(),
                author_index: e.action.author_index,
                step: t,
                provenance: Provenance::GroundTruth,
            })
            .collect())
    }

    fn generate(
        &self,
        t: usize,
        agents: &StepAgents,
        mean_field: &MeanFieldState,
        history: &[HistoryItem],
    ) -> Result<Vec<ActionText>> {
        let context = build_context(
            self.cfg.context_strategy,
            history,
            mean_field,
            self.cfg.k,
            &self.opts.popularity,
        );
        let policy = self.backends.policy;
        let results = crate::par::map_range_width(agents.states.len(), self.opts.fanout, |i| {
            let input = PolicyInput {
                state: &agents.states[i],
                context: &context,
                mean_field,
            };
            let seed = derive_seed(self.cfg.seed, &[tag::POLICY, t as u64, i as u64]);
            policy.sample(&input, seed, self.cfg.temperature)
        });
        results
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let text = r?;
                if text.trim().is_empty() {
                    return Err(Error::backend(format!(
                        "policy returned empty text for agent {i} at step {t}"
                    )));
                }
                Ok(ActionText {
                    text,
                    author_index: agents.authors[i],
                    step: t,
                    provenance: Provenance::Generated,
                })
            })
            .collect()
    }

    fn run(
        &self,
        resume: Resume<'_>,
        fork: Option<ForkInfo>,
        sink: &mut dyn StepSink,
    ) -> Result<Trajectory> {
        let cfg = self.cfg;
        cfg.validate()?;
        self.opts.popularity.validate()?;
        if let Some(s) = self.schedule {
            s.validate(cfg.horizon, cfg.batch_size)?;
        }
        let mut traj = Trajectory {
            event_id: self.event.event_id.clone(),
            topic: self.event.topic.clone(),
            config: cfg.clone(),
            fork,
            steps: Vec::with_capacity(cfg.horizon),
        };
        sink.header(&traj)?;

        let mut history: Vec<HistoryItem> = Vec::new();
        let (mut mean_field, mut agents, mut observed) = match resume.parent {
            None => (
                MeanFieldState::initial(),
                initial_agents(self.event, cfg)?,
                None,
            ),
            Some(parent) => {
                if parent.steps.len() <= resume.start {
                    return Err(Error::argument(format!(
                        "parent has {} steps, cannot fork at {}",
                        parent.steps.len(),
                        resume.start
                    )));
                }
                for rec in &parent.steps[..resume.start] {
                    sink.step(rec)?;
                    history.extend(rec.actions.iter().map(|a| HistoryItem {
                        action: a.clone(),
                        engagement: engagement_of(self.event, a),
                    }));
                    traj.steps.push(rec.clone());
                }
                let at = &parent.steps[resume.start];
                let agents = StepAgents {
                    states: at.states.clone(),
                    engagement: at
                        .actions
                        .iter()
                        .map(|a| engagement_of(self.event, a))
                        .collect(),
                    authors: at.actions.iter().map(|a| a.author_index).collect(),
                };
                (at.mean_field.clone(), agents, Some(at.actions.clone()))
            }
        };

        for t in resume.start..cfg.horizon {
            let outcome = self.step(t, &agents, &mean_field, &history, observed.take());
            let record = match outcome {
                Ok(r) => r,
                Err(e) => return Err(abort(t, e, traj)),
            };
            sink.step(&record)?;
            history.extend(record.actions.iter().map(|a| HistoryItem {
                action: a.clone(),
                engagement: engagement_of(self.event, a),
            }));
            if t + 1 < cfg.horizon {
                let next = self.advance(t, &record, &mean_field);
                traj.steps.push(record);
                match next {
                    Ok((m, a)) => {
                        mean_field = m;
                        agents = a;
                    }
                    Err(e) => return Err(abort(t + 1, e, traj)),
                }
            } else {
                traj.steps.push(record);
            }
        }
        Ok(traj)
    }

    fn step(
        &self,
        t: usize,
        agents: &StepAgents,
        mean_field: &MeanFieldState,
        history: &[HistoryItem],
        observed: Option<Vec<ActionText>>,
    ) -> Result<StepRecord> {
        let actions = match observed {
            Some(a) => a,
            None if self.cfg.is_warmup_step(t) => self.real_actions(t)?,
            None => self.generate(t, agents, mean_field, history)?,
        };
        let applied = match self.schedule {
            Some(s) => apply_interventions(s, t, actions)?,
            None => intervention::Applied {
                actions,
                broadcasts: Vec::new(),
            },
        };
        Ok(StepRecord {
            step: t,
            states: agents.states.clone(),
            actions: applied.actions,
            broadcasts: applied.broadcasts,
            mean_field: mean_field.clone(),
        })
    }

    fn advance(
        &self,
        t: usize,
        record: &StepRecord,
        mean_field: &MeanFieldState,
    ) -> Result<(MeanFieldState, StepAgents)> {
        let mut visible = record.actions.clone();
        visible.extend(record.broadcasts.iter().cloned());
        let next_mf = update_mean_field(
            mean_field,
            &self.event.topic,
            &record.states,
            &visible,
            self.backends.mean_field,
            self.cfg.mean_field_word_cap,
            derive_seed(self.cfg.seed, &[tag::MEAN_FIELD, t as u64]),
            self.cfg.temperature,
        )?;
        let next_agents = advance_states(self.event, t, self.cfg)?;
        Ok((next_mf, next_agents))
    }
}

fn abort(step: usize, source: Error, partial: Trajectory) -> Error {
    Error::Aborted {
        step,
        source: Box::new(source),
        partial: Box::new(partial),
    }
}

pub fn run_simulation(
    event: &Event,
    cfg: &SimulationConfig,
    backends: Backends<'_>,
    schedule: Option<&InterventionSchedule>,
) -> Result<Trajectory> {
    run_simulation_with(
        event,
        cfg,
        backends,
        schedule,
        RunOptions::default(),
        &mut NoSink,
    )
}

pub fn run_simulation_with(
    event: &Event,
    cfg: &SimulationConfig,
    backends: Backends<'_>,
    schedule: Option<&InterventionSchedule>,
    opts: RunOptions,
    sink: &mut dyn StepSink,
) -> Result<Trajectory> {
    Runner {
        event,
        cfg,
        backends,
        schedule,
        opts,
    }
    .run(
        Resume {
            start: 0,
            parent: None,
        },
        None,
        sink,
    )
}

/// Where a fork takes its observed prefix from.
#[derive(Clone, Copy)]
pub enum ForkSource<'a> {
    /// The event's real timeline.
    Event,
    /// An earlier run; steps before the fork point are copied verbatim and
    /// its actions at the fork point are treated as observed.
    Parent {
        trajectory: &'a Trajectory,
        run_id: Option<&'a str>,
    },
}

/// Restart a run at `start_step`: steps up to and including it are observed,
/// later steps are generated. `start_step == horizon` replays everything.
#[allow(clippy::too_many_arguments)]
pub fn fork_trajectory(
    event: &Event,
    source: ForkSource<'_>,
    start_step: usize,
    cfg: &SimulationConfig,
    backends: Backends<'_>,
    schedule: Option<&InterventionSchedule>,
    opts: RunOptions,
    sink: &mut dyn StepSink,
) -> Result<Trajectory> {
    if start_step > cfg.horizon {
        return Err(Error::argument(format!(
            "fork step {start_step} is beyond the horizon {}",
            cfg.horizon
        )));
    }
    let mut child = cfg.clone();
    child.warmup_steps = Some(start_step);
    let runner = Runner {
        event,
        cfg: &child,
        backends,
        schedule,
        opts,
    };
    match source {
        ForkSource::Event => runner.run(
            Resume {
                start: 0,
                parent: None,
            },
            Some(ForkInfo {
                parent_run: None,
                fork_step: start_step,
            }),
            sink,
        ),
        ForkSource::Parent { trajectory, run_id } => {
            if trajectory.event_id != event.event_id {
                return Err(Error::argument(format!(
                    "parent trajectory belongs to {}, not {}",
                    trajectory.event_id, event.event_id
                )));
            }
            let info = Some(ForkInfo {
                parent_run: run_id.map(str::to_string),
                fork_step: start_step,
            });
            if start_step >= trajectory.steps.len() {
                // nothing left to simulate: the child is the parent's steps
                let mut traj = Trajectory {
                    event_id: event.event_id.clone(),
                    topic: event.topic.clone(),
                    config: child.clone(),
                    fork: info,
                    steps: Vec::new(),
                };
                sink.header(&traj)?;
                for rec in &trajectory.steps {
                    sink.step(rec)?;
                    traj.steps.push(rec.clone());
                }
                return Ok(traj);
            }
            runner.run(
                Resume {
                    start: start_step,
                    parent: Some(trajectory),
                },
                info,
                sink,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::scripted::ScriptedBackend;
    use crate::backends::toy::{Alphabets, ToyModel, ToyModelParams};
    use crate::backends::{TextMeanField, TextPolicy};
    use crate::corpus::{generate_synthetic, SyntheticGenConfig};
    use crate::domain::{ContextStrategy, MeanFieldContent};
    use crate::engine::intervention::{Intervention, InterventionKind};
    use std::sync::Arc;

    fn event(steps: usize, agents: usize) -> Event {
        let mut cfg = SyntheticGenConfig::self_exciting(5);
        cfg.num_events = 1;
        cfg.steps_per_event = steps;
        cfg.agents_per_step = agents;
        generate_synthetic(&cfg).unwrap().corpus.events.remove(0)
    }

    fn toy() -> ToyModel {
        ToyModel::new(ToyModelParams::random(
            Alphabets {
                states: 6,
                actions: 4,
                mean_field: 8,
            },
            1.0,
            2,
        ))
        .unwrap()
    }

    #[test]
    fn full_warmup_replays_timeline() {
        let ev = event(5, 4);
        let m = toy();
        let mut cfg = SimulationConfig::for_event(&ev, 4);
        cfg.warmup_steps = Some(cfg.horizon);
        let tr = run_simulation(
            &ev,
            &cfg,
            Backends {
                policy: &m,
                mean_field: &m,
            },
            None,
        )
        .unwrap();
        let texts: Vec<_> = tr.scored_actions().map(|a| a.text.clone()).collect();
        let real: Vec<_> = ev.timeline.iter().map(|e| e.action.text.clone()).collect();
        assert_eq!(texts, real);
        assert!(tr
            .scored_actions()
            .all(|a| a.provenance == Provenance::GroundTruth));
        for (t, s) in tr.steps.iter().enumerate() {
            assert_eq!(s.mean_field.step, t);
        }
        assert!(tr.steps[0].mean_field.content.is_empty());
    }

    #[test]
    fn constant_policy_fills_generated_steps() {
        let ev = event(6, 3);
        let policy = TextPolicy::new(Arc::new(ScriptedBackend::constant("same words")));
        let mf = TextMeanField::new(Arc::new(ScriptedBackend::constant("summary")));
        let mut cfg = SimulationConfig::for_event(&ev, 3);
        cfg.warmup_steps = Some(1);
        let tr = run_simulation(
            &ev,
            &cfg,
            Backends {
                policy: &policy,
                mean_field: &mf,
            },
            None,
        )
        .unwrap();
        for s in &tr.steps[2..] {
            assert!(s.actions.iter().all(|a| a.text == "same words"));
            assert!(s
                .actions
                .iter()
                .all(|a| a.provenance == Provenance::Generated));
        }
        assert_eq!(
            tr.steps[1].mean_field.content,
            MeanFieldContent::Text("summary".into())
        );
    }

    #[test]
    fn advance_follows_blocks_then_resamples() {
        let ev = event(2, 16);
        let mut cfg = SimulationConfig::new(4);
        let next = advance_states(&ev, 0, &cfg).unwrap();
        assert_eq!(next.authors, (16..32).collect::<Vec<_>>());
        assert!(matches!(
            advance_states(&ev, 1, &cfg),
            Err(Error::Horizon { step: 2, .. })
        ));
        cfg.resample_states = true;
        let a = advance_states(&ev, 1, &cfg).unwrap();
        let b = advance_states(&ev, 1, &cfg).unwrap();
        assert_eq!(a.states.len(), 16);
        assert_eq!(a, b);
    }

    #[test]
    fn final_partial_block_runs_with_remainder() {
        let mut ev = event(3, 4);
        ev.timeline.truncate(10);
        let m = toy();
        let cfg = SimulationConfig::for_event(&ev, 4);
        assert_eq!(cfg.horizon, 3);
        let tr = run_simulation(
            &ev,
            &cfg,
            Backends {
                policy: &m,
                mean_field: &m,
            },
            None,
        )
        .unwrap();
        assert_eq!(tr.steps[2].actions.len(), 2);
    }

    #[test]
    fn toy_identity_mean_field_is_a_fixed_point() {
        let mut p = ToyModelParams::zeros(Alphabets {
            states: 6,
            actions: 4,
            mean_field: 3,
        });
        for prev in 0..3 {
            for maj in 0..4 {
                p.meanfield_logits[(prev * 4 + maj) * 3 + prev] = 10.0;
            }
        }
        let m = ToyModel::new(p).unwrap();
        let ev = event(1, 4);
        let prev = MeanFieldState {
            content: MeanFieldContent::Symbol(2),
            step: 4,
        };
        let acts: Vec<_> = ev.timeline.iter().map(|e| e.action.clone()).collect();
        let next = update_mean_field(&prev, "t", &[], &acts, &m, 200, 1, 0.0).unwrap();
        assert_eq!(next.content, MeanFieldContent::Symbol(2));
        assert_eq!(next.step, 5);
    }

    #[test]
    fn text_mean_field_is_truncated() {
        let long = (0..350)
            .map(|i| format!("w{i}"))
            .collect::<Vec<_>>()
            .join(" ");
        let mf = TextMeanField::new(Arc::new(ScriptedBackend::constant(long)));
        let ev = event(1, 2);
        let acts: Vec<_> = ev.timeline.iter().map(|e| e.action.clone()).collect();
        let next = update_mean_field(
            &MeanFieldState::initial(),
            "t",
            &[],
            &acts,
            &mf,
            200,
            0,
            1.0,
        )
        .unwrap();
        match next.content {
            MeanFieldContent::Text(t) => assert_eq!(t.split_whitespace().count(), 200),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schedule_outside_horizon_is_rejected() {
        let ev = event(4, 2);
        let m = toy();
        let cfg = SimulationConfig::for_event(&ev, 2);
        let sched = InterventionSchedule {
            entries: vec![Intervention {
                step: 4,
                kind: InterventionKind::Broadcast,
                actions: vec!["x".into()],
                count: 0,
            }],
        };
        assert!(matches!(
            run_simulation(
                &ev,
                &cfg,
                Backends {
                    policy: &m,
                    mean_field: &m
                },
                Some(&sched)
            ),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn backend_failure_aborts_with_partial_prefix() {
        let ev = event(5, 2);
        let policy = TextPolicy::new(Arc::new(ScriptedBackend::queue::<_, &str>([])));
        let mf = TextMeanField::new(Arc::new(ScriptedBackend::constant("s")));
        let mut cfg = SimulationConfig::for_event(&ev, 2);
        cfg.warmup_steps = Some(1);
        match run_simulation(
            &ev,
            &cfg,
            Backends {
                policy: &policy,
                mean_field: &mf,
            },
            None,
        ) {
            Err(Error::Aborted { step, partial, .. }) => {
                assert_eq!(step, 2);
                assert_eq!(partial.steps.len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn state_only_ignores_peer_actions() {
        // same agents, permuted real history: state_only output must not move
        let ev = event(4, 4);
        let m = toy();
        let mut cfg = SimulationConfig::for_event(&ev, 4);
        cfg.warmup_steps = Some(1);
        cfg.context_strategy = ContextStrategy::StateOnly;
        let base = run_simulation(
            &ev,
            &cfg,
            Backends {
                policy: &m,
                mean_field: &m,
            },
            None,
        )
        .unwrap();
        let mut shuffled = ev.clone();
        let texts: Vec<String> = shuffled.timeline[..8]
            .iter()
            .map(|e| e.action.text.clone())
            .collect();
        for (i, e) in shuffled.timeline[..8].iter_mut().enumerate() {
            e.action.text = texts[(i + 3) % 8].clone();
        }
        let other = run_simulation(
            &shuffled,
            &cfg,
            Backends {
                policy: &m,
                mean_field: &m,
            },
            None,
        )
        .unwrap();
        for t in 2..base.steps.len() {
            assert_eq!(base.steps[t].actions, other.steps[t].actions);
        }
    }

    #[test]
    fn fork_at_horizon_equals_ground_truth() {
        let ev = event(4, 3);
        let m = toy();
        let cfg = SimulationConfig::for_event(&ev, 3);
        let tr = fork_trajectory(
            &ev,
            ForkSource::Event,
            cfg.horizon,
            &cfg,
            Backends {
                policy: &m,
                mean_field: &m,
            },
            None,
            RunOptions::default(),
            &mut NoSink,
        )
        .unwrap();
        let texts: Vec<_> = tr.scored_actions().map(|a| a.text.clone()).collect();
        let real: Vec<_> = ev.timeline.iter().map(|e| e.action.text.clone()).collect();
        assert_eq!(texts, real);
        assert_eq!(tr.fork.unwrap().fork_step, 4);
    }

    #[test]
    fn fork_at_zero_with_constant_backend() {
        let ev = event(4, 3);
        let policy = TextPolicy::new(Arc::new(ScriptedBackend::constant("c")));
        let mf = TextMeanField::new(Arc::new(ScriptedBackend::constant("s")));
        let cfg = SimulationConfig::for_event(&ev, 3);
        let tr = fork_trajectory(
            &ev,
            ForkSource::Event,
            0,
            &cfg,
            Backends {
                policy: &policy,
                mean_field: &mf,
            },
            None,
            RunOptions::default(),
            &mut NoSink,
        )
        .unwrap();
        assert!(tr.steps[0]
            .actions
            .iter()
            .all(|a| a.provenance == Provenance::GroundTruth));
        assert!(tr.steps[1..]
            .iter()
            .flat_map(|s| &s.actions)
            .all(|a| a.text == "c"));
    }
}
