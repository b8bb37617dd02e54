//! Information-bottleneck objectives over the exact toy models.
//!
//! The mean-field model `mu(m | X)` with `X = (previous mean field, majority
//! action)` is trained against
//!
//! ```text
//! L_mf = sum_b w_b [ KL(mu(.|X_b) || r_bar) - beta * sum_m mu(m|X_b) ln pi(a*_b | s_b, m) ]
//! ```
//!
//! where `r_bar(m) = sum_b w_b r(m | X_b)` is the batch marginal of a frozen
//! prior table `r`. The policy is trained on the expected negative
//! log-likelihood `L_pi = -sum_b w_b sum_m mu(m|X_b) ln pi(a*_b | s_b, m)`.
//! Expectations over `m` are exact sums.
//!
//! The oracles ([`mutual_information`], [`kl_bound_check`]) compute
//! `I(m; X)` from the induced joint table and compare it with the KL bound.

pub mod train;

use serde::{Deserialize, Serialize};

use crate::backends::toy::{log_softmax, softmax, ToyHead, ToyModelParams};
use crate::backends::PolicyModel;
use crate::error::{Error, Result};

pub use train::{train_toy, LossPoint, TrainMode, TrainOutput, TrainingData};

const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IBTriple {
    /// `(previous mean-field symbol, majority action symbol)`.
    pub x: (usize, usize),
    pub s: usize,
    pub a_star: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IBBatch {
    pub triples: Vec<IBTriple>,
}

impl IBBatch {
    pub fn validate(&self, params: &ToyModelParams) -> Result<()> {
        let a = params.alphabets;
        if self.triples.is_empty() {
            return Err(Error::argument("IB batch is empty"));
        }
        let mut total = 0.0;
        for (i, t) in self.triples.iter().enumerate() {
            if t.x.0 >= a.mean_field
                || t.x.1 >= a.actions
                || t.s >= a.states
                || t.a_star >= a.actions
            {
                return Err(Error::argument(format!(
                    "triple {i} has a symbol out of range"
                )));
            }
            if !(t.weight > 0.0) || !t.weight.is_finite() {
                return Err(Error::argument(format!(
                    "triple {i} has non-positive weight"
                )));
            }
            total += t.weight;
        }
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::argument(format!("batch weights sum to {total}")));
        }
        Ok(())
    }
}

fn default_beta() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IBHyper {
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Mean-field alphabet size `|M|`.
    #[serde(default = "default_mf_alphabet")]
    pub mean_field_alphabet: usize,
    /// Agents per step when cutting corpus timelines into steps.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Standard deviation of the initial logits.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_mf_alphabet() -> usize {
    8
}
fn default_batch_size() -> usize {
    16
}
fn default_init_scale() -> f64 {
    0.5
}

impl Default for IBHyper {
    fn default() -> Self {
        IBHyper {
            beta: default_beta(),
            learning_rate: 5.0,
            iterations: 300,
            seed: 0,
            mean_field_alphabet: default_mf_alphabet(),
            batch_size: default_batch_size(),
            init_scale: default_init_scale(),
        }
    }
}

impl IBHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::argument("beta must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::argument("learning_rate must be positive"));
        }
        if self.mean_field_alphabet < 1 || self.batch_size < 1 {
            return Err(Error::argument(
                "mean_field_alphabet and batch_size must be positive",
            ));
        }
        Ok(())
    }
}

/// Joint distribution over `rows x cols`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    pub rows: usize,
    pub cols: usize,
    pub probabilities: Vec<f64>,
}

impl JointTable {
    pub fn new(rows: usize, cols: usize, probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.len() != rows * cols {
            return Err(Error::argument("joint table size does not match its shape"));
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::argument(
                "joint table entries must be finite and non-negative",
            ));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::argument(format!("joint table sums to {total}")));
        }
        Ok(JointTable {
            rows,
            cols,
            probabilities,
        })
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.probabilities[r * self.cols + c]
    }
}

/// Exact mutual information in nats, with `0 ln 0 = 0`.
pub fn mutual_information(joint: &JointTable) -> Result<f64> {
    let j = JointTable::new(joint.rows, joint.cols, joint.probabilities.clone())?;
    let mut row_m = vec![0.0; j.rows];
    let mut col_m = vec![0.0; j.cols];
    for r in 0..j.rows {
        for c in 0..j.cols {
            row_m[r] += j.at(r, c);
            col_m[c] += j.at(r, c);
        }
    }
    let mut mi = 0.0;
    for r in 0..j.rows {
        for c in 0..j.cols {
            let p = j.at(r, c);
            if p > 0.0 {
                mi += p * (p / (row_m[r] * col_m[c])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Exact `KL(p || q)` with `0 ln 0 = 0`; infinite when `q` misses mass of `p`.
pub fn kl_exact(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| {
            if *qi > 0.0 {
                pi * (pi / qi).ln()
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

fn check_alphabets(a: &ToyModelParams, b: &ToyModelParams) -> Result<()> {
    if a.alphabets != b.alphabets {
        return Err(Error::argument(format!(
            "alphabet mismatch: {:?} vs {:?}",
            a.alphabets, b.alphabets
        )));
    }
    Ok(())
}

/// `r_bar(m) = sum_b w_b r(m | X_b)`.
pub fn marginal_prior(prior: &ToyModelParams, batch: &IBBatch) -> Result<Vec<f64>> {
    let mut out = vec![0.0; prior.alphabets.mean_field];
    for t in &batch.triples {
        let row = prior.distribution(ToyHead::MeanField, &[t.x.0, t.x.1])?;
        for (o, r) in out.iter_mut().zip(row) {
            *o += t.weight * r;
        }
    }
    Ok(out)
}

/// Per-row aggregates: total weight `W_X` and `L_X(m) = sum_b w_b ln pi(a*_b|s_b,m)`.
struct RowTerms {
    x: (usize, usize),
    weight: f64,
    loglik: Vec<f64>,
}

fn row_terms(policy: &ToyModelParams, batch: &IBBatch) -> Result<Vec<RowTerms>> {
    let m = policy.alphabets.mean_field;
    let mut rows: Vec<RowTerms> = Vec::new();
    for t in &batch.triples {
        let idx = match rows.iter().position(|r| r.x == t.x) {
            Some(i) => i,
            None => {
                rows.push(RowTerms {
                    x: t.x,
                    weight: 0.0,
                    loglik: vec![0.0; m],
                });
                rows.len() - 1
            }
        };
        let row = &mut rows[idx];
        row.weight += t.weight;
        for (mf, l) in row.loglik.iter_mut().enumerate() {
            let lp = log_softmax(policy.logits(ToyHead::Policy, &[t.s, mf])?)[t.a_star];
            *l += t.weight * lp;
        }
    }
    Ok(rows)
}

pub fn meanfield_loss(
    mf: &ToyModelParams,
    prior: &ToyModelParams,
    policy: &ToyModelParams,
    batch: &IBBatch,
    beta: f64,
) -> Result<f64> {
    check_alphabets(mf, prior)?;
    check_alphabets(mf, policy)?;
    batch.validate(mf)?;
    let r_bar = marginal_prior(prior, batch)?;
    let mut loss = 0.0;
    for row in row_terms(policy, batch)? {
        let mu = mf.distribution(ToyHead::MeanField, &[row.x.0, row.x.1])?;
        let expected: f64 = mu.iter().zip(&row.loglik).map(|(p, l)| p * l).sum();
        loss += row.weight * kl_exact(&mu, &r_bar) - beta * expected;
    }
    Ok(loss)
}

/// Analytic gradient of [`meanfield_loss`] over `mf.meanfield_logits`; the
/// batch and the prior marginal are held fixed.
pub fn grad_meanfield_loss(
    mf: &ToyModelParams,
    prior: &ToyModelParams,
    policy: &ToyModelParams,
    batch: &IBBatch,
    beta: f64,
) -> Result<Vec<f64>> {
    check_alphabets(mf, prior)?;
    check_alphabets(mf, policy)?;
    batch.validate(mf)?;
    let r_bar = marginal_prior(prior, batch)?;
    let mut grad = vec![0.0; mf.meanfield_logits.len()];
    for row in row_terms(policy, batch)? {
        let off = mf.row_offset(ToyHead::MeanField, &[row.x.0, row.x.1])?;
        let mu = mf.distribution(ToyHead::MeanField, &[row.x.0, row.x.1])?;
        // d/d mu_m of the row objective (the constant from d(mu ln mu) cancels)
        let g: Vec<f64> = (0..mu.len())
            .map(|m| row.weight * (mu[m].ln() - r_bar[m].ln()) - beta * row.loglik[m])
            .collect();
        let mean_g: f64 = mu.iter().zip(&g).map(|(p, x)| p * x).sum();
        for k in 0..mu.len() {
            grad[off + k] += mu[k] * (g[k] - mean_g);
        }
    }
    Ok(grad)
}

/// Expected policy NLL under the mean-field posterior.
pub fn policy_loss(policy: &ToyModelParams, mf: &ToyModelParams, batch: &IBBatch) -> Result<f64> {
    check_alphabets(mf, policy)?;
    batch.validate(mf)?;
    let mut loss = 0.0;
    for row in row_terms(policy, batch)? {
        let mu = mf.distribution(ToyHead::MeanField, &[row.x.0, row.x.1])?;
        loss -= mu.iter().zip(&row.loglik).map(|(p, l)| p * l).sum::<f64>();
    }
    Ok(loss)
}

pub fn grad_policy_loss(
    policy: &ToyModelParams,
    mf: &ToyModelParams,
    batch: &IBBatch,
) -> Result<Vec<f64>> {
    check_alphabets(mf, policy)?;
    batch.validate(mf)?;
    let n_a = policy.alphabets.actions;
    let mut grad = vec![0.0; policy.policy_logits.len()];
    for t in &batch.triples {
        let mu = mf.distribution(ToyHead::MeanField, &[t.x.0, t.x.1])?;
        for (m, &pm) in mu.iter().enumerate() {
            let off = policy.row_offset(ToyHead::Policy, &[t.s, m])?;
            let pi = softmax(&policy.policy_logits[off..off + n_a]);
            let scale = t.weight * pm;
            for a in 0..n_a {
                let target = if a == t.a_star { 1.0 } else { 0.0 };
                grad[off + a] -= scale * (target - pi[a]);
            }
        }
    }
    Ok(grad)
}

/// Anything that can score an action symbol given state and mean-field symbols.
pub trait ActionLikelihood {
    fn action_logprob(&self, s: usize, m: usize, a: usize) -> Result<Option<f64>>;
}

impl ActionLikelihood for ToyModelParams {
    fn action_logprob(&self, s: usize, m: usize, a: usize) -> Result<Option<f64>> {
        Ok(Some(crate::backends::toy::toy_logprob(
            self,
            ToyHead::Policy,
            &[s, m],
            a,
        )?))
    }
}

/// A policy backend seen through toy symbols: `s<k>` states, `m<k>` summaries.
pub struct SymbolicPolicy<'a>(pub &'a dyn PolicyModel);

impl ActionLikelihood for SymbolicPolicy<'_> {
    fn action_logprob(&self, s: usize, m: usize, a: usize) -> Result<Option<f64>> {
        use crate::domain::{
            ActivityLevel, AgentProfile, AgentState, ContextStrategy, FriendsLevel, Gender,
            InfluenceLevel, MeanFieldContent, MeanFieldState,
        };
        use crate::engine::context::ContextText;
        let state = AgentState::new(
            AgentProfile {
                location: String::new(),
                description: crate::corpus::toy_state_text(s),
                gender: Gender::Unspecified,
                friends_level: FriendsLevel::Moderate,
                influence_level: InfluenceLevel::Moderate,
                activity_level: ActivityLevel::ModeratelyActive,
                verified: false,
                verification_type: None,
            },
            "",
        );
        let mean_field = MeanFieldState {
            content: MeanFieldContent::Symbol(m),
            step: 0,
        };
        let context = ContextText {
            strategy: ContextStrategy::MeanField,
            items: vec![mean_field.content.as_prompt_text()],
        };
        self.0.logprob(
            &crate::backends::PolicyInput {
                state: &state,
                context: &context,
                mean_field: &mean_field,
            },
            &crate::corpus::toy_action_text(a),
        )
    }
}

/// Mean negative log-likelihood `-(1/n) sum ln pi(a* | s, m)` over
/// `(s, m, a*)` triples.
pub fn policy_nll<L: ActionLikelihood + ?Sized>(
    policy: &L,
    data: &[(usize, usize, usize)],
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::argument("policy_nll needs at least one observation"));
    }
    let mut total = 0.0;
    for &(s, m, a) in data {
        total -= policy
            .action_logprob(s, m, a)?
            .ok_or(Error::Capability("log-probabilities"))?;
    }
    Ok(total / data.len() as f64)
}

/// `I(m; X)` under the joint `pX(x) mu(m|x)` against
/// `E_X KL(mu(.|X) || r)`. `px` is indexed like mean-field rows
/// (`prev * |A| + majority`).
pub fn kl_bound_check(mf: &ToyModelParams, prior: &[f64], px: &[f64]) -> Result<(f64, f64)> {
    let n_m = mf.alphabets.mean_field;
    let n_x = n_m * mf.alphabets.actions;
    if px.len() != n_x {
        return Err(Error::argument(format!(
            "pX has {} entries, expected {n_x}",
            px.len()
        )));
    }
    if prior.len() != n_m {
        return Err(Error::argument(format!(
            "prior has {} entries, expected {n_m}",
            prior.len()
        )));
    }
    for (name, dist) in [("pX", px), ("prior", prior)] {
        let total: f64 = dist.iter().sum();
        if dist.iter().any(|p| *p < 0.0 || !p.is_finite()) || (total - 1.0).abs() > NORM_TOL {
            return Err(Error::argument(format!(
                "{name} is not a distribution (sum {total})"
            )));
        }
    }
    let mut joint = vec![0.0; n_x * n_m];
    let mut rhs = 0.0;
    for x in 0..n_x {
        if px[x] == 0.0 {
            continue;
        }
        let mu = softmax(&mf.meanfield_logits[x * n_m..(x + 1) * n_m]);
        rhs += px[x] * kl_exact(&mu, prior);
        for m in 0..n_m {
            joint[x * n_m + m] = px[x] * mu[m];
        }
    }
    // renormalise away rounding so the table passes validation
    let total: f64 = joint.iter().sum();
    joint.iter_mut().for_each(|p| *p /= total);
    let lhs = mutual_information(&JointTable::new(n_x, n_m, joint)?)?;
    Ok((lhs, rhs))
}

/// Marginal `p(m) = sum_x pX(x) mu(m|x)`.
pub fn induced_marginal(mf: &ToyModelParams, px: &[f64]) -> Vec<f64> {
    let n_m = mf.alphabets.mean_field;
    let mut out = vec![0.0; n_m];
    for (x, &w) in px.iter().enumerate() {
        let mu = softmax(&mf.meanfield_logits[x * n_m..(x + 1) * n_m]);
        for (o, p) in out.iter_mut().zip(mu) {
            *o += w * p;
        }
    }
    out
}
