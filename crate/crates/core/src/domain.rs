//! Domain types shared across the simulator: agent profiles and states,
//! actions, mean-field summaries, events, run configuration and trajectories.
//!
//! Everything here is a plain immutable value. Serialization is derived with
//! serde; the on-disk formats live in [`crate::corpus`] and
//! [`crate::engine::persist`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on mean-field summary length, in whitespace-separated words.
pub const DEFAULT_MEAN_FIELD_WORD_CAP: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
    Unspecified,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Unspecified => "unspecified",
        }
    }

    /// Lenient parse for corpus ingest; anything unrecognised is `Unspecified`.
    pub fn parse_lenient(raw: &str) -> Self {
        match raw.trim().to_ascii_lowercase().as_str() {
            "m" | "male" | "man" => Gender::Male,
            "f" | "female" | "woman" => Gender::Female,
            _ => Gender::Unspecified,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FriendsLevel {
    VeryFew,
    Few,
    Moderate,
    Many,
    VeryMany,
}

impl FriendsLevel {
    /// <10, 10-30, 31-1000, 1001-3000, >3000.
    pub fn from_count(count: u64) -> Self {
        match count {
            0..=9 => FriendsLevel::VeryFew,
            10..=30 => FriendsLevel::Few,
            31..=1000 => FriendsLevel::Moderate,
            1001..=3000 => FriendsLevel::Many,
            _ => FriendsLevel::VeryMany,
        }
    }

    pub fn as_phrase(self) -> &'static str {
        match self {
            FriendsLevel::VeryFew => "very few",
            FriendsLevel::Few => "few",
            FriendsLevel::Moderate => "moderate",
            FriendsLevel::Many => "many",
            FriendsLevel::VeryMany => "very many",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceLevel {
    VeryLow,
    Low,
    Moderate,
    High,
    VeryHigh,
}

impl InfluenceLevel {
    /// Follower buckets: <=100, 101-500, 501-1000, 1001-10000, >10000.
    ///
    /// The published buckets leave exactly 100 followers unassigned; it is
    /// placed in the lowest bucket.
    pub fn from_followers(count: u64) -> Self {
        match count {
            0..=100 => InfluenceLevel::VeryLow,
            101..=500 => InfluenceLevel::Low,
            501..=1000 => InfluenceLevel::Moderate,
            1001..=10_000 => InfluenceLevel::High,
            _ => InfluenceLevel::VeryHigh,
        }
    }

    pub fn as_phrase(self) -> &'static str {
        match self {
            InfluenceLevel::VeryLow => "very low",
            InfluenceLevel::Low => "low",
            InfluenceLevel::Moderate => "moderate",
            InfluenceLevel::High => "high",
            InfluenceLevel::VeryHigh => "very high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityLevel {
    Inactive,
    ModeratelyActive,
    HighlyActive,
}

impl ActivityLevel {
    /// <10, 10-100, >100 total interactions.
    pub fn from_interactions(count: u64) -> Self {
        match count {
            0..=9 => ActivityLevel::Inactive,
            10..=100 => ActivityLevel::ModeratelyActive,
            _ => ActivityLevel::HighlyActive,
        }
    }

    pub fn as_phrase(self) -> &'static str {
        match self {
            ActivityLevel::Inactive => "inactive",
            ActivityLevel::ModeratelyActive => "moderately active",
            ActivityLevel::HighlyActive => "highly active",
        }
    }
}

/// Bucketed user attributes. Raw counts never reach a model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentProfile {
    pub location: String,
    pub description: String,
    pub gender: Gender,
    pub friends_level: FriendsLevel,
    pub influence_level: InfluenceLevel,
    pub activity_level: ActivityLevel,
    pub verified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification_type: Option<i64>,
}

impl AgentProfile {
    pub fn verified_status(&self) -> String {
        match (self.verified, self.verification_type) {
            (true, Some(id)) => format!("verified (verification type {id})"),
            (true, None) => "verified".to_string(),
            (false, _) => "not verified".to_string(),
        }
    }

    /// The one-paragraph user description models see.
    pub fn render(&self) -> String {
        format!(
            "A user from {}, described as {}, identified as {}, with a {} number of friends \
             and a {} level of influence based on followers. The user is {} in terms of \
             interactions, and the account is {}.",
            self.location,
            self.description,
            self.gender.as_str(),
            self.friends_level.as_phrase(),
            self.influence_level.as_phrase(),
            self.activity_level.as_phrase(),
            self.verified_status(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub profile: AgentProfile,
    pub topic: String,
    pub rendered_state: String,
}

impl AgentState {
    pub fn new(profile: AgentProfile, topic: impl Into<String>) -> Self {
        let rendered_state = profile.render();
        AgentState {
            profile,
            topic: topic.into(),
            rendered_state,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GroundTruth,
    Generated,
    Injected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionText {
    pub text: String,
    pub author_index: usize,
    pub step: usize,
    pub provenance: Provenance,
}

/// Engagement counters used by the popularity baseline. Followers are the
/// raw count kept from ingest (profiles only carry the bucket).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Engagement {
    #[serde(default)]
    pub followers: u64,
    #[serde(default)]
    pub replies: u64,
    #[serde(default)]
    pub likes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanFieldContent {
    Text(String),
    Symbol(usize),
}

impl MeanFieldContent {
    pub fn empty() -> Self {
        MeanFieldContent::Text(String::new())
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, MeanFieldContent::Text(t) if t.is_empty())
    }

    /// Text handed to prompts. Symbols render as `m<index>`.
    pub fn as_prompt_text(&self) -> String {
        match self {
            MeanFieldContent::Text(t) => t.clone(),
            MeanFieldContent::Symbol(s) => format!("m{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeanFieldState {
    pub content: MeanFieldContent,
    pub step: usize,
}

impl MeanFieldState {
    pub fn initial() -> Self {
        MeanFieldState {
            content: MeanFieldContent::empty(),
            step: 0,
        }
    }
}

/// Keep at most `cap` whitespace-separated words, joined by single spaces.
pub fn truncate_words(text: &str, cap: usize) -> String {
    text.split_whitespace()
        .take(cap)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Crime,
    Culture,
    Health,
    News,
    Politics,
    Sports,
    Technology,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub profile: AgentProfile,
    pub action: ActionText,
    #[serde(default)]
    pub engagement: Engagement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: String,
    pub topic: String,
    pub domain_tag: DomainTag,
    pub timeline: Vec<TimelineEntry>,
}

impl Event {
    /// Number of simulation steps when the timeline is cut into blocks of
    /// `batch_size` entries.
    pub fn step_count(&self, batch_size: usize) -> usize {
        self.timeline.len().div_ceil(batch_size.max(1))
    }

    /// Entries of simulation step `t`, or an empty slice past the end.
    pub fn block(&self, t: usize, batch_size: usize) -> &[TimelineEntry] {
        let start = t.saturating_mul(batch_size).min(self.timeline.len());
        let end = start.saturating_add(batch_size).min(self.timeline.len());
        &self.timeline[start..end]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step {
            Some(s) => write!(f, "step {s}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Check every event invariant. Violations are data, not failures.
pub fn validate_event(event: &Event) -> Vec<Violation> {
    let mut out = Vec::new();
    if event.event_id.trim().is_empty() {
        out.push(Violation {
            step: None,
            message: "event_id is empty".into(),
        });
    }
    let mut flagged_order = false;
    for (i, entry) in event.timeline.iter().enumerate() {
        let a = &entry.action;
        if a.text.trim().is_empty() {
            out.push(Violation {
                step: Some(a.step),
                message: format!("action text at timeline index {i} is empty"),
            });
        }
        if a.provenance != Provenance::GroundTruth {
            out.push(Violation {
                step: Some(a.step),
                message: format!("timeline index {i} has provenance {:?}", a.provenance),
            });
        }
        if a.author_index != i {
            out.push(Violation {
                step: Some(a.step),
                message: format!("timeline index {i} has author_index {}", a.author_index),
            });
        }
        if !flagged_order && i > 0 && a.step <= event.timeline[i - 1].action.step {
            flagged_order = true;
            out.push(Violation {
                step: Some(a.step),
                message: format!(
                    "step {} does not follow step {} (timeline index {i})",
                    a.step,
                    event.timeline[i - 1].action.step
                ),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextStrategy {
    MeanField,
    StateOnly,
    RecentK,
    PopularK,
    Sft,
}

impl ContextStrategy {
    pub fn uses_k(self) -> bool {
        matches!(self, ContextStrategy::RecentK | ContextStrategy::PopularK)
    }
}

fn default_batch_size() -> usize {
    16
}

fn default_temperature() -> f64 {
    1.0
}

fn default_strategy() -> ContextStrategy {
    ContextStrategy::MeanField
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub horizon: usize,
    /// `None` means `ceil(0.2 * horizon)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_steps: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_strategy")]
    pub context_strategy: ContextStrategy,
    #[serde(default)]
    pub k: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub resample_states: bool,
    #[serde(default = "default_word_cap")]
    pub mean_field_word_cap: usize,
}

fn default_word_cap() -> usize {
    DEFAULT_MEAN_FIELD_WORD_CAP
}

impl SimulationConfig {
    pub fn new(horizon: usize) -> Self {
        SimulationConfig {
            batch_size: default_batch_size(),
            horizon,
            warmup_steps: None,
            seed: 0,
            context_strategy: default_strategy(),
            k: 0,
            temperature: default_temperature(),
            resample_states: false,
            mean_field_word_cap: DEFAULT_MEAN_FIELD_WORD_CAP,
        }
    }

    /// Horizon covering the whole event timeline at this batch size.
    pub fn for_event(event: &Event, batch_size: usize) -> Self {
        let mut cfg = SimulationConfig::new(event.step_count(batch_size).max(1));
        cfg.batch_size = batch_size;
        cfg
    }

    pub fn warmup(&self) -> usize {
        self.warmup_steps
            .unwrap_or_else(|| (self.horizon as f64 * 0.2).ceil() as usize)
    }

    /// Steps `0..=warmup()` replay real actions.
    pub fn is_warmup_step(&self, t: usize) -> bool {
        t <= self.warmup()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::argument("batch_size must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(Error::argument("horizon must be at least 1"));
        }
        if self.warmup() > self.horizon {
            return Err(Error::argument(format!(
                "warmup_steps {} exceeds horizon {}",
                self.warmup(),
                self.horizon
            )));
        }
        if !self.context_strategy.uses_k() && self.k != 0 {
            return Err(Error::argument(format!(
                "k = {} is only meaningful for recent_k / popular_k",
                self.k
            )));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::argument(
                "temperature must be a finite non-negative number",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub states: Vec<AgentState>,
    pub actions: Vec<ActionText>,
    /// Broadcast texts fed to the next mean-field update; never scored.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub broadcasts: Vec<ActionText>,
    pub mean_field: MeanFieldState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForkInfo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_run: Option<String>,
    pub fork_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub event_id: String,
    pub topic: String,
    pub config: SimulationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fork: Option<ForkInfo>,
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    /// Actions that enter metric windows, in step order.
    pub fn scored_actions(&self) -> impl Iterator<Item = &ActionText> {
        self.steps.iter().flat_map(|s| s.actions.iter())
    }
}
