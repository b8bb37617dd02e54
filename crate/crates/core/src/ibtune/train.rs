//! Alternating training of the toy mean-field and policy tables.
//!
//! Each iteration rebuilds the batch by forward-filtering the mean-field
//! posterior along every event (`q_0 = delta(0)`), takes one full-batch
//! gradient step on the mean-field loss, rebuilds, then takes one on the
//! policy loss.
//!
//! Batches weight each agent action, while the compression term belongs to a
//! whole step. Training therefore applies `beta * (mean agents per step)` so
//! that one KL term is traded against the summed log-likelihood of a step.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    grad_meanfield_loss, grad_policy_loss, meanfield_loss, policy_loss, IBBatch, IBHyper, IBTriple,
};
use crate::backends::toy::{action_symbol, softmax, Alphabets, ToyModelParams};
use crate::corpus::{majority, Corpus};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    FullIbtune,
    /// Policy only, with its logits tied across mean-field symbols.
    PolicyOnlySft,
    /// No training; the random initialisation is returned as is.
    NoMeanfield,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full_ibtune" => Ok(TrainMode::FullIbtune),
            "policy_only_sft" => Ok(TrainMode::PolicyOnlySft),
            "no_meanfield" => Ok(TrainMode::NoMeanfield),
            other => Err(Error::argument(format!("unknown training mode {other:?}"))),
        }
    }
}

/// Per-step `(state, action)` counts and majority action of each event.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub alphabets: Alphabets,
    pub events: Vec<Vec<StepCounts>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepCounts {
    /// Flattened `[state][action]`.
    pub counts: Vec<f64>,
    pub majority: usize,
}

impl TrainingData {
    pub fn from_corpus(corpus: &Corpus, alphabets: Alphabets, batch_size: usize) -> Result<Self> {
        let (n_s, n_a) = (alphabets.states, alphabets.actions);
        let mut events = Vec::with_capacity(corpus.len());
        for event in &corpus.events {
            let mut steps = Vec::new();
            for t in 0..event.step_count(batch_size) {
                let mut counts = vec![0.0; n_s * n_a];
                let mut per_action = vec![0usize; n_a];
                for entry in event.block(t, batch_size) {
                    let s = crate::backends::toy::state_symbol(
                        &crate::domain::AgentState::new(entry.profile.clone(), ""),
                        n_s,
                    )?;
                    let a = action_symbol(&entry.action.text, n_a)?;
                    counts[s * n_a + a] += 1.0;
                    per_action[a] += 1;
                }
                steps.push(StepCounts {
                    counts,
                    majority: majority(&per_action),
                });
            }
            events.push(steps);
        }
        if events.iter().all(|e| e.len() < 2) {
            return Err(Error::argument(
                "training needs events with at least two steps",
            ));
        }
        Ok(TrainingData { alphabets, events })
    }

    pub fn mean_agents_per_step(&self) -> f64 {
        let steps = self.events.iter().map(|e| e.len()).sum::<usize>();
        self.total_actions() / steps.max(1) as f64
    }

    fn total_actions(&self) -> f64 {
        self.events.iter().flatten().flat_map(|s| &s.counts).sum()
    }
}

/// Forward-filtered batch under the current mean-field table.
pub fn build_batch(data: &TrainingData, mf: &ToyModelParams) -> IBBatch {
    let n_m = mf.alphabets.mean_field;
    let n_a = mf.alphabets.actions;
    let per_event = par::map_slice(&data.events, |steps| {
        let mut acc: BTreeMap<(usize, usize, usize, usize), f64> = BTreeMap::new();
        let mut q = vec![0.0; n_m];
        q[0] = 1.0;
        for t in 1..steps.len() {
            let maj = steps[t - 1].majority;
            let mut next = vec![0.0; n_m];
            for (prev, &qp) in q.iter().enumerate() {
                let off = (prev * n_a + maj) * n_m;
                let mu = softmax(&mf.meanfield_logits[off..off + n_m]);
                for (n, p) in next.iter_mut().zip(&mu) {
                    *n += qp * p;
                }
                for (k, &c) in steps[t].counts.iter().enumerate() {
                    if c > 0.0 {
                        *acc.entry((prev, maj, k / n_a, k % n_a)).or_default() += qp * c;
                    }
                }
            }
            q = next;
        }
        acc
    });
    let mut merged: BTreeMap<(usize, usize, usize, usize), f64> = BTreeMap::new();
    for acc in per_event {
        for (k, v) in acc {
            *merged.entry(k).or_default() += v;
        }
    }
    let total: f64 = merged.values().sum();
    IBBatch {
        triples: merged
            .into_iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|((prev, maj, s, a), w)| IBTriple {
                x: (prev, maj),
                s,
                a_star: a,
                weight: w / total,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub iteration: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_field_loss: Option<f64>,
    pub policy_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub mode: TrainMode,
    pub hyper: IBHyper,
    pub params: ToyModelParams,
    /// Mean-field table at initialisation; the frozen prior.
    pub prior: ToyModelParams,
    pub curve: Vec<LossPoint>,
}

impl TrainOutput {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("iteration,mean_field_loss,policy_loss\n");
        for p in &self.curve {
            let mf = p.mean_field_loss.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", p.iteration, mf, p.policy_loss));
        }
        out
    }
}

fn descend(params: &mut [f64], grad: &[f64], lr: f64) {
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

fn check_finite(iteration: usize, values: &[f64]) -> Result<()> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Training { iteration })
    }
}

/// Average policy rows over mean-field symbols so `pi` ignores `m`.
fn tie_policy(p: &mut ToyModelParams) {
    let Alphabets {
        states: n_s,
        actions: n_a,
        mean_field: n_m,
    } = p.alphabets;
    for s in 0..n_s {
        let block = &mut p.policy_logits[s * n_m * n_a..(s + 1) * n_m * n_a];
        let mean: Vec<f64> = (0..n_a)
            .map(|a| (0..n_m).map(|m| block[m * n_a + a]).sum::<f64>() / n_m as f64)
            .collect();
        for m in 0..n_m {
            block[m * n_a..(m + 1) * n_a].copy_from_slice(&mean);
        }
    }
}

/// Tied-policy loss `-(1/N) sum c(s, a) ln pi(a|s)` and its gradient, spread
/// evenly over the tied rows.
fn sft_loss_grad(p: &ToyModelParams, data: &TrainingData) -> (f64, Vec<f64>) {
    let Alphabets {
        states: n_s,
        actions: n_a,
        mean_field: n_m,
    } = p.alphabets;
    let mut counts = vec![0.0; n_s * n_a];
    for step in data.events.iter().flatten() {
        for (c, x) in counts.iter_mut().zip(&step.counts) {
            *c += x;
        }
    }
    let total = data.total_actions();
    let mut loss = 0.0;
    let mut grad = vec![0.0; p.policy_logits.len()];
    for s in 0..n_s {
        let row = &p.policy_logits[s * n_m * n_a..s * n_m * n_a + n_a];
        let pi = softmax(row);
        let n_state: f64 = counts[s * n_a..(s + 1) * n_a].iter().sum();
        for a in 0..n_a {
            let c = counts[s * n_a + a] / total;
            if c > 0.0 {
                loss -= c * pi[a].ln();
            }
            let g = (n_state / total * pi[a] - c) / n_m as f64;
            for m in 0..n_m {
                grad[s * n_m * n_a + m * n_a + a] = g;
            }
        }
    }
    (loss, grad)
}

pub fn train_toy(data: &TrainingData, hyper: &IBHyper, mode: TrainMode) -> Result<TrainOutput> {
    hyper.validate()?;
    let alphabets = Alphabets {
        mean_field: hyper.mean_field_alphabet,
        ..data.alphabets
    };
    let init = ToyModelParams::random(alphabets, hyper.init_scale, hyper.seed);
    let prior = init.clone();
    let mut params = init;
    let mut curve = Vec::new();

    match mode {
        TrainMode::NoMeanfield => {}
        TrainMode::PolicyOnlySft => {
            tie_policy(&mut params);
            for it in 0..hyper.iterations {
                let (loss, grad) = sft_loss_grad(&params, data);
                check_finite(it, &[loss])?;
                check_finite(it, &grad)?;
                curve.push(LossPoint {
                    iteration: it,
                    mean_field_loss: None,
                    policy_loss: loss,
                });
                descend(&mut params.policy_logits, &grad, hyper.learning_rate);
            }
        }
        TrainMode::FullIbtune => {
            let beta = hyper.beta * data.mean_agents_per_step();
            for it in 0..hyper.iterations {
                let batch = build_batch(data, &params);
                let l_mf = meanfield_loss(&params, &prior, &params, &batch, beta)?;
                let l_pi = policy_loss(&params, &params, &batch)?;
                check_finite(it, &[l_mf, l_pi])?;
                curve.push(LossPoint {
                    iteration: it,
                    mean_field_loss: Some(l_mf),
                    policy_loss: l_pi,
                });
                let g = grad_meanfield_loss(&params, &prior, &params, &batch, beta)?;
                check_finite(it, &g)?;
                descend(&mut params.meanfield_logits, &g, hyper.learning_rate);

                let batch = build_batch(data, &params);
                let g = grad_policy_loss(&params, &params, &batch)?;
                check_finite(it, &g)?;
                descend(&mut params.policy_logits, &g, hyper.learning_rate);
            }
        }
    }
    check_finite(hyper.iterations, &params.policy_logits)?;
    check_finite(hyper.iterations, &params.meanfield_logits)?;
    log::info!(
        "trained {mode:?} for {} iterations, final policy loss {:?}",
        hyper.iterations,
        curve.last().map(|p| p.policy_loss)
    );
    Ok(TrainOutput {
        mode,
        hyper: hyper.clone(),
        params,
        prior,
        curve,
    })
}
