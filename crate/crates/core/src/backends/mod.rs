//! Generative model backends.
//!
//! Two layers live here. [`GenerativeBackend`] is the raw text contract
//! (prompt in, text out, optional log-likelihood) implemented by the scripted
//! replay backend and the remote chat-completions client. The engine talks to
//! the narrower [`PolicyModel`] and [`MeanFieldModel`] roles; [`TextPolicy`]
//! and [`TextMeanField`] adapt any text backend to those roles by rendering
//! prompts, while [`toy::ToyModel`] implements them directly over symbols.

pub mod prompt;
pub mod remote;
pub mod scripted;
pub mod toy;

use std::sync::Arc;

use crate::domain::{truncate_words, ActionText, AgentState, MeanFieldContent, MeanFieldState};
use crate::engine::context::ContextText;
use crate::error::Result;

pub use prompt::{PromptText, TemplateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Capabilities {
    pub supports_logprob: bool,
}

pub trait GenerativeBackend: Send + Sync {
    /// Deterministic for temperature 0 or a fixed seed.
    fn generate(&self, prompt: &PromptText, seed: u64, temperature: f64) -> Result<String>;

    /// Natural-log likelihood of `output` given `prompt`, when supported.
    fn logprob(&self, _output: &str, _prompt: &PromptText) -> Result<Option<f64>> {
        Ok(None)
    }

    fn capabilities(&self) -> Capabilities;
}

/// Everything the policy may condition on for one agent at one step.
#[derive(Debug, Clone, Copy)]
pub struct PolicyInput<'a> {
    pub state: &'a AgentState,
    pub context: &'a ContextText,
    pub mean_field: &'a MeanFieldState,
}

pub trait PolicyModel: Send + Sync {
    fn sample(&self, input: &PolicyInput<'_>, seed: u64, temperature: f64) -> Result<String>;

    /// `Ok(None)` when the backend exposes no likelihoods.
    fn logprob(&self, input: &PolicyInput<'_>, action: &str) -> Result<Option<f64>>;

    fn supports_logprob(&self) -> bool;
}

#[derive(Debug, Clone, Copy)]
pub struct MeanFieldInput<'a> {
    pub topic: &'a str,
    pub previous: &'a MeanFieldState,
    pub states: &'a [AgentState],
    pub actions: &'a [ActionText],
    pub word_cap: usize,
}

pub trait MeanFieldModel: Send + Sync {
    fn update(
        &self,
        input: &MeanFieldInput<'_>,
        seed: u64,
        temperature: f64,
    ) -> Result<MeanFieldContent>;
}

/// Policy role over a text backend.
#[derive(Clone)]
pub struct TextPolicy {
    backend: Arc<dyn GenerativeBackend>,
}

impl TextPolicy {
    pub fn new(backend: Arc<dyn GenerativeBackend>) -> Self {
        TextPolicy { backend }
    }
}

impl PolicyModel for TextPolicy {
    fn sample(&self, input: &PolicyInput<'_>, seed: u64, temperature: f64) -> Result<String> {
        let prompt = prompt::render_policy_prompt(input.state, input.context)?;
        self.backend.generate(&prompt, seed, temperature)
    }

    fn logprob(&self, input: &PolicyInput<'_>, action: &str) -> Result<Option<f64>> {
        if !self.supports_logprob() {
            return Ok(None);
        }
        let prompt = prompt::render_policy_prompt(input.state, input.context)?;
        self.backend.logprob(action, &prompt)
    }

    fn supports_logprob(&self) -> bool {
        self.backend.capabilities().supports_logprob
    }
}

/// Mean-field role over a text backend; output is cut to the word cap.
#[derive(Clone)]
pub struct TextMeanField {
    backend: Arc<dyn GenerativeBackend>,
}

impl TextMeanField {
    pub fn new(backend: Arc<dyn GenerativeBackend>) -> Self {
        TextMeanField { backend }
    }
}

impl MeanFieldModel for TextMeanField {
    fn update(
        &self,
        input: &MeanFieldInput<'_>,
        seed: u64,
        temperature: f64,
    ) -> Result<MeanFieldContent> {
        let prompt = prompt::render_meanfield_prompt(
            input.topic,
            input.previous,
            input.actions,
            input.word_cap,
        )?;
        let out = self.backend.generate(&prompt, seed, temperature)?;
        Ok(MeanFieldContent::Text(truncate_words(&out, input.word_cap)))
    }
}
