//! Exact categorical stand-ins for the policy and mean-field models.
//!
//! States, actions and mean-field values are small integer symbols. The
//! policy is a table of logits indexed by (state, mean field, action); the
//! mean-field model is a table indexed by (previous mean field, majority
//! action of the previous step, next mean field). Every distribution is an
//! explicit softmax row, so likelihoods and expectations are exact.
//!
//! Symbols travel through the text-typed engine as `s<k>` (profile
//! description), `a<k>` (action text) and [`MeanFieldContent::Symbol`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{MeanFieldInput, MeanFieldModel, PolicyInput, PolicyModel};
use crate::corpus::majority;
use crate::domain::{AgentState, ContextStrategy, MeanFieldContent, MeanFieldState};
use crate::error::{Error, Result};
use crate::rng::{rng_for, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabets {
    pub states: usize,
    pub actions: usize,
    pub mean_field: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyHead {
    Policy,
    MeanField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModelParams {
    pub alphabets: Alphabets,
    /// Flattened `[state][mean_field][action]`.
    pub policy_logits: Vec<f64>,
    /// Flattened `[prev_mean_field][majority_action][next_mean_field]`.
    pub meanfield_logits: Vec<f64>,
}

impl ToyModelParams {
    pub fn zeros(alphabets: Alphabets) -> Self {
        let Alphabets {
            states: s,
            actions: a,
            mean_field: m,
        } = alphabets;
        ToyModelParams {
            alphabets,
            policy_logits: vec![0.0; s * m * a],
            meanfield_logits: vec![0.0; m * a * m],
        }
    }

    /// Logits drawn i.i.d. from N(0, scale^2).
    pub fn random(alphabets: Alphabets, scale: f64, seed: u64) -> Self {
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, scale).expect("scale is finite and non-negative");
        let mut rng = rng_for(seed, &[crate::rng::tag::INIT]);
        let mut p = ToyModelParams::zeros(alphabets);
        for x in p
            .policy_logits
            .iter_mut()
            .chain(p.meanfield_logits.iter_mut())
        {
            *x = normal.sample(&mut rng);
        }
        p
    }

    /// Log-probability tables lifted to logits; zero probabilities become a
    /// large finite negative logit.
    pub fn from_probabilities(
        alphabets: Alphabets,
        policy: &[Vec<f64>],
        mean_field: &[Vec<f64>],
    ) -> Result<Self> {
        let lift = |rows: &[Vec<f64>], n_rows: usize, width: usize| -> Result<Vec<f64>> {
            if rows.len() != n_rows || rows.iter().any(|r| r.len() != width) {
                return Err(Error::argument("probability table has the wrong shape"));
            }
            Ok(rows.iter().flatten().map(|p| p.max(1e-300).ln()).collect())
        };
        let Alphabets {
            states: s,
            actions: a,
            mean_field: m,
        } = alphabets;
        let p = ToyModelParams {
            alphabets,
            policy_logits: lift(policy, s * m, a)?,
            meanfield_logits: lift(mean_field, m * a, m)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let Alphabets {
            states: s,
            actions: a,
            mean_field: m,
        } = self.alphabets;
        if s == 0 || a == 0 || m == 0 {
            return Err(Error::argument("toy alphabets must be non-empty"));
        }
        if self.policy_logits.len() != s * m * a || self.meanfield_logits.len() != m * a * m {
            return Err(Error::argument(
                "toy logit tables do not match the alphabets",
            ));
        }
        if self
            .policy_logits
            .iter()
            .chain(&self.meanfield_logits)
            .any(|x| !x.is_finite())
        {
            return Err(Error::argument("toy logits must be finite"));
        }
        Ok(())
    }

    pub fn row_width(&self, which: ToyHead) -> usize {
        match which {
            ToyHead::Policy => self.alphabets.actions,
            ToyHead::MeanField => self.alphabets.mean_field,
        }
    }

    /// Flat offset of the row selected by `condition`.
    pub fn row_offset(&self, which: ToyHead, condition: &[usize]) -> Result<usize> {
        let Alphabets {
            states: s,
            actions: a,
            mean_field: m,
        } = self.alphabets;
        let (limits, width) = match which {
            ToyHead::Policy => ([s, m], a),
            ToyHead::MeanField => ([m, a], m),
        };
        if condition.len() != 2 {
            return Err(Error::argument(format!(
                "{which:?} condition needs 2 symbols, got {}",
                condition.len()
            )));
        }
        for (i, (&c, &lim)) in condition.iter().zip(&limits).enumerate() {
            if c >= lim {
                return Err(Error::argument(format!(
                    "{which:?} condition symbol {i} = {c} out of range 0..{lim}"
                )));
            }
        }
        Ok((condition[0] * limits[1] + condition[1]) * width)
    }

    pub fn logits(&self, which: ToyHead, condition: &[usize]) -> Result<&[f64]> {
        let off = self.row_offset(which, condition)?;
        let w = self.row_width(which);
        Ok(match which {
            ToyHead::Policy => &self.policy_logits[off..off + w],
            ToyHead::MeanField => &self.meanfield_logits[off..off + w],
        })
    }

    pub fn distribution(&self, which: ToyHead, condition: &[usize]) -> Result<Vec<f64>> {
        Ok(softmax(self.logits(which, condition)?))
    }

    /// Policy marginalised uniformly over mean-field symbols; the form used
    /// when no mean field is in context.
    pub fn policy_without_mean_field(&self, state: usize) -> Result<Vec<f64>> {
        let m = self.alphabets.mean_field;
        let mut acc = vec![0.0; self.alphabets.actions];
        for mf in 0..m {
            for (x, p) in acc
                .iter_mut()
                .zip(self.distribution(ToyHead::Policy, &[state, mf])?)
            {
                *x += p / m as f64;
            }
        }
        Ok(acc)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|x| x - lse).collect()
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Sample from `probs` sharpened or flattened by `temperature`; zero picks
/// the argmax.
pub fn sample_tempered(probs: &[f64], temperature: f64, rng: &mut SimRng) -> usize {
    if temperature == 0.0 {
        return argmax(probs);
    }
    let tempered: Vec<f64> = if temperature == 1.0 {
        probs.to_vec()
    } else {
        let logits: Vec<f64> = probs
            .iter()
            .map(|p| {
                if *p > 0.0 {
                    p.ln() / temperature
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        softmax(&logits)
    };
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in tempered.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    tempered.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

pub fn toy_sample(
    params: &ToyModelParams,
    which: ToyHead,
    condition: &[usize],
    seed: u64,
    temperature: f64,
) -> Result<usize> {
    if !(temperature >= 0.0) {
        return Err(Error::argument("temperature must be non-negative"));
    }
    let probs = params.distribution(which, condition)?;
    let mut rng = rng_for(seed, &[]);
    Ok(sample_tempered(&probs, temperature, &mut rng))
}

pub fn toy_logprob(
    params: &ToyModelParams,
    which: ToyHead,
    condition: &[usize],
    symbol: usize,
) -> Result<f64> {
    let row = params.logits(which, condition)?;
    if symbol >= row.len() {
        return Err(Error::argument(format!(
            "symbol {symbol} out of range 0..{}",
            row.len()
        )));
    }
    Ok(log_softmax(row)[symbol])
}

fn parse_symbol(text: &str, prefix: char, limit: usize, what: &str) -> Result<usize> {
    let trimmed = text.trim();
    trimmed
        .strip_prefix(prefix)
        .and_then(|rest| rest.parse::<usize>().ok())
        .filter(|&k| k < limit)
        .ok_or_else(|| {
            Error::backend(format!(
                "{what} {trimmed:?} is not a toy symbol {prefix}0..{prefix}{}",
                limit.saturating_sub(1)
            ))
        })
}

pub fn state_symbol(state: &AgentState, limit: usize) -> Result<usize> {
    parse_symbol(&state.profile.description, 's', limit, "state")
}

pub fn action_symbol(text: &str, limit: usize) -> Result<usize> {
    parse_symbol(text, 'a', limit, "action")
}

/// The empty initial summary conditions as symbol 0.
pub fn mean_field_symbol(mf: &MeanFieldState, limit: usize) -> Result<usize> {
    match &mf.content {
        MeanFieldContent::Symbol(k) if *k < limit => Ok(*k),
        MeanFieldContent::Symbol(k) => Err(Error::backend(format!(
            "mean-field symbol {k} out of range 0..{limit}"
        ))),
        c if c.is_empty() => Ok(0),
        MeanFieldContent::Text(t) => Err(Error::backend(format!(
            "mean field {t:?} is text, toy model needs a symbol"
        ))),
    }
}

/// Policy and mean-field roles backed by one parameter set.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub params: ToyModelParams,
}

impl ToyModel {
    pub fn new(params: ToyModelParams) -> Result<Self> {
        params.validate()?;
        Ok(ToyModel { params })
    }

    fn action_distribution(&self, input: &PolicyInput<'_>) -> Result<Vec<f64>> {
        let a = &self.params.alphabets;
        let s = state_symbol(input.state, a.states)?;
        if input.context.strategy == ContextStrategy::MeanField {
            let m = mean_field_symbol(input.mean_field, a.mean_field)?;
            self.params.distribution(ToyHead::Policy, &[s, m])
        } else {
            self.params.policy_without_mean_field(s)
        }
    }
}

impl PolicyModel for ToyModel {
    fn sample(&self, input: &PolicyInput<'_>, seed: u64, temperature: f64) -> Result<String> {
        let probs = self.action_distribution(input)?;
        let mut rng = rng_for(seed, &[]);
        Ok(crate::corpus::toy_action_text(sample_tempered(
            &probs,
            temperature,
            &mut rng,
        )))
    }

    fn logprob(&self, input: &PolicyInput<'_>, action: &str) -> Result<Option<f64>> {
        let a = action_symbol(action, self.params.alphabets.actions)?;
        let probs = self.action_distribution(input)?;
        Ok(Some(probs[a].ln()))
    }

    fn supports_logprob(&self) -> bool {
        true
    }
}

impl MeanFieldModel for ToyModel {
    fn update(
        &self,
        input: &MeanFieldInput<'_>,
        seed: u64,
        temperature: f64,
    ) -> Result<MeanFieldContent> {
        let a = &self.params.alphabets;
        let prev = mean_field_symbol(input.previous, a.mean_field)?;
        let mut counts = vec![0usize; a.actions];
        for act in input.actions {
            counts[action_symbol(&act.text, a.actions)?] += 1;
        }
        let maj = majority(&counts);
        let probs = self.params.distribution(ToyHead::MeanField, &[prev, maj])?;
        let mut rng = rng_for(seed, &[]);
        Ok(MeanFieldContent::Symbol(sample_tempered(
            &probs,
            temperature,
            &mut rng,
        )))
    }
}
