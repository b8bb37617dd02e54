//! Scripted replay backend. Returns exactly what it was given and refuses
//! anything it was not; every prompt it sees is recorded for inspection.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use crate::backends::{Capabilities, GenerativeBackend, PromptText};
use crate::error::{Error, Result};

enum Script {
    Constant(String),
    Table(HashMap<String, String>),
    /// Responses handed out in call order; `Err` entries simulate transport
    /// failures.
    Queue(Mutex<VecDeque<std::result::Result<String, String>>>),
}

pub struct ScriptedBackend {
    script: Script,
    seen: Mutex<Vec<PromptText>>,
}

impl ScriptedBackend {
    fn with(script: Script) -> Self {
        ScriptedBackend {
            script,
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn constant(text: impl Into<String>) -> Self {
        Self::with(Script::Constant(text.into()))
    }

    /// Exact prompt text → output.
    pub fn table(entries: HashMap<String, String>) -> Self {
        Self::with(Script::Table(entries))
    }

    pub fn queue<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = std::result::Result<S, S>>,
        S: Into<String>,
    {
        Self::with(Script::Queue(Mutex::new(
            responses
                .into_iter()
                .map(|r| r.map(Into::into).map_err(Into::into))
                .collect(),
        )))
    }

    /// Prompts received so far, in call order.
    pub fn prompts(&self) -> Vec<PromptText> {
        self.seen.lock().expect("prompt log poisoned").clone()
    }
}

impl GenerativeBackend for ScriptedBackend {
    fn generate(&self, prompt: &PromptText, _seed: u64, _temperature: f64) -> Result<String> {
        self.seen
            .lock()
            .expect("prompt log poisoned")
            .push(prompt.clone());
        match &self.script {
            Script::Constant(t) => Ok(t.clone()),
            Script::Table(map) => map
                .get(&prompt.text)
                .cloned()
                .ok_or_else(|| Error::ReplayMiss(prompt.text.chars().take(60).collect())),
            Script::Queue(q) => match q.lock().expect("queue poisoned").pop_front() {
                Some(Ok(t)) => Ok(t),
                Some(Err(e)) => Err(Error::backend(e)),
                None => Err(Error::ReplayMiss(prompt.text.chars().take(60).collect())),
            },
        }
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_logprob: false,
        }
    }
}
