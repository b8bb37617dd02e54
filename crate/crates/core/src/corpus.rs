//! Event corpora: JSONL ingest and export, train/test splitting, agent-state
//! resampling for long horizons, and a synthetic population generator with a
//! hidden majority-driven feedback loop.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    validate_event, ActionText, ActivityLevel, AgentProfile, AgentState, DomainTag, Engagement,
    Event, FriendsLevel, Gender, InfluenceLevel, Provenance, TimelineEntry,
};
use crate::error::{Error, Result};
use crate::rng::{rng_for, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    File,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub events: Vec<Event>,
    pub source: CorpusSource,
}

impl Corpus {
    pub fn new(events: Vec<Event>, source: CorpusSource) -> Result<Self> {
        let corpus = Corpus { events, source };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        let mut seen = HashSet::new();
        for ev in &self.events {
            if !seen.insert(ev.event_id.as_str()) {
                violations.push(crate::domain::Violation {
                    step: None,
                    message: format!("duplicate event_id {:?}", ev.event_id),
                });
            }
            for v in validate_event(ev) {
                violations.push(crate::domain::Violation {
                    step: v.step,
                    message: format!("event {}: {}", ev.event_id, v.message),
                });
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(violations))
        }
    }

    pub fn get(&self, event_id: &str) -> Option<&Event> {
        self.events.iter().find(|e| e.event_id == event_id)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

// ---------------------------------------------------------------------------
// JSONL wire format. Files carry raw counts; bucketing happens on ingest.

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawProfile {
    #[serde(default)]
    location: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    gender: String,
    #[serde(default)]
    friends_count: u64,
    #[serde(default)]
    followers_count: u64,
    #[serde(default)]
    interactions_count: u64,
    #[serde(default)]
    verified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    verification_type: Option<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawEntry {
    step: usize,
    profile: RawProfile,
    text: String,
    #[serde(default, skip_serializing_if = "is_zero")]
    replies: u64,
    #[serde(default, skip_serializing_if = "is_zero")]
    likes: u64,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawEvent {
    event_id: String,
    topic: String,
    domain_tag: DomainTag,
    timeline: Vec<RawEntry>,
}

fn bucket_profile(raw: RawProfile) -> AgentProfile {
    AgentProfile {
        location: raw.location,
        description: raw.description,
        gender: Gender::parse_lenient(&raw.gender),
        friends_level: FriendsLevel::from_count(raw.friends_count),
        influence_level: InfluenceLevel::from_followers(raw.followers_count),
        activity_level: ActivityLevel::from_interactions(raw.interactions_count),
        verified: raw.verified,
        verification_type: raw.verification_type,
    }
}

fn representative_friends(level: FriendsLevel) -> u64 {
    match level {
        FriendsLevel::VeryFew => 0,
        FriendsLevel::Few => 10,
        FriendsLevel::Moderate => 31,
        FriendsLevel::Many => 1001,
        FriendsLevel::VeryMany => 3001,
    }
}

fn representative_followers(level: InfluenceLevel) -> u64 {
    match level {
        InfluenceLevel::VeryLow => 0,
        InfluenceLevel::Low => 101,
        InfluenceLevel::Moderate => 501,
        InfluenceLevel::High => 1001,
        InfluenceLevel::VeryHigh => 10_001,
    }
}

fn representative_interactions(level: ActivityLevel) -> u64 {
    match level {
        ActivityLevel::Inactive => 0,
        ActivityLevel::ModeratelyActive => 10,
        ActivityLevel::HighlyActive => 101,
    }
}

fn unbucket_entry(entry: &TimelineEntry) -> RawEntry {
    let p = &entry.profile;
    let followers =
        if InfluenceLevel::from_followers(entry.engagement.followers) == p.influence_level {
            entry.engagement.followers
        } else {
            representative_followers(p.influence_level)
        };
    RawEntry {
        step: entry.action.step,
        profile: RawProfile {
            location: p.location.clone(),
            description: p.description.clone(),
            gender: p.gender.as_str().to_string(),
            friends_count: representative_friends(p.friends_level),
            followers_count: followers,
            interactions_count: representative_interactions(p.activity_level),
            verified: p.verified,
            verification_type: p.verification_type,
        },
        text: entry.action.text.clone(),
        replies: entry.engagement.replies,
        likes: entry.engagement.likes,
    }
}

fn event_from_raw(raw: RawEvent) -> Event {
    let timeline = raw
        .timeline
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let followers = e.profile.followers_count;
            TimelineEntry {
                profile: bucket_profile(e.profile),
                action: ActionText {
                    text: e.text,
                    author_index: i,
                    step: e.step,
                    provenance: Provenance::GroundTruth,
                },
                engagement: Engagement {
                    followers,
                    replies: e.replies,
                    likes: e.likes,
                },
            }
        })
        .collect();
    Event {
        event_id: raw.event_id,
        topic: raw.topic,
        domain_tag: raw.domain_tag,
        timeline,
    }
}

/// Parse one JSONL event line.
pub fn parse_event_line(line: &str, line_no: usize) -> Result<Event> {
    let raw: RawEvent = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    Ok(event_from_raw(raw))
}

pub fn event_to_line(event: &Event) -> String {
    let raw = RawEvent {
        event_id: event.event_id.clone(),
        topic: event.topic.clone(),
        domain_tag: event.domain_tag,
        timeline: event.timeline.iter().map(unbucket_entry).collect(),
    };
    serde_json::to_string(&raw).expect("event serialization is infallible")
}

pub fn read_corpus<R: BufRead>(reader: R, source: CorpusSource) -> Result<Corpus> {
    let mut events = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(parse_event_line(&line, idx + 1)?);
    }
    Corpus::new(events, source)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let file = File::open(path)?;
    read_corpus(BufReader::new(file), CorpusSource::File)
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut writer: W) -> Result<()> {
    for ev in &corpus.events {
        writeln!(writer, "{}", event_to_line(ev))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    write_corpus(corpus, BufWriter::new(file))
}

/// Deterministic shuffled split; `|train| = round(train_fraction * N)`.
pub fn split_corpus(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::argument(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if corpus.is_empty() {
        return Err(Error::argument("cannot split an empty corpus"));
    }
    let n = corpus.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[tag::SPLIT]));
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (ev, keep) in corpus.events.iter().zip(in_train) {
        if keep {
            train.push(ev.clone());
        } else {
            test.push(ev.clone());
        }
    }
    Ok((
        Corpus {
            events: train,
            source: corpus.source,
        },
        Corpus {
            events: test,
            source: corpus.source,
        },
    ))
}

/// Draw `count` states i.i.d. with replacement from the event's profiles.
pub fn resample_states(event: &Event, count: usize, seed: u64) -> Result<Vec<AgentState>> {
    Ok(resample_entries(event, count, seed)?
        .into_iter()
        .map(|i| AgentState::new(event.timeline[i].profile.clone(), event.topic.clone()))
        .collect())
}

/// Timeline indices behind [`resample_states`].
pub(crate) fn resample_entries(event: &Event, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if event.timeline.is_empty() {
        return Err(Error::argument(format!(
            "cannot resample {count} states from event {} with an empty timeline",
            event.event_id
        )));
    }
    let mut rng = rng_for(seed, &[tag::RESAMPLE]);
    let n = event.timeline.len();
    Ok((0..count).map(|_| rng.random_range(0..n)).collect())
}

// ---------------------------------------------------------------------------
// Synthetic populations.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGenConfig {
    pub num_events: usize,
    pub steps_per_event: usize,
    pub agents_per_step: usize,
    pub state_alphabet_size: usize,
    pub action_alphabet_size: usize,
    pub latent_alphabet_size: usize,
    /// Rows indexed by `latent * |A| + majority_action`, columns by next latent.
    pub latent_transition: Vec<Vec<f64>>,
    /// Rows indexed by `state * |M*| + latent`, columns by action.
    pub emission: Vec<Vec<f64>>,
    /// `None` draws the first latent uniformly per event.
    #[serde(default)]
    pub initial_latent: Option<usize>,
    pub seed: u64,
}

/// A synthetic corpus plus the hidden latent path of each event (one entry
/// per step). The latents are for oracles only.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub latents: Vec<Vec<usize>>,
}

const SYMBOL_TOL: f64 = 1e-12;

impl SyntheticGenConfig {
    /// Latent `d + |A| * h` holds a dominant action `d` and an intensity
    /// `h in {0, 1}`. A step whose majority matches `d` pushes the latent to
    /// high intensity; any other majority pulls it halfway toward that
    /// action. A small exogenous jump rate keeps regimes from locking in
    /// forever.
    pub fn self_exciting(seed: u64) -> Self {
        let (n_s, n_a) = (6usize, 4usize);
        let n_m = 2 * n_a;
        let jump = 0.01;
        let mut latent_transition = Vec::with_capacity(n_m * n_a);
        for z in 0..n_m {
            let d = z % n_a;
            for maj in 0..n_a {
                let mut row = vec![jump / n_m as f64; n_m];
                let keep = 1.0 - jump;
                if maj == d {
                    row[d + n_a] += keep * 0.9;
                    row[d] += keep * 0.1;
                } else {
                    row[maj] += keep * 0.5;
                    row[d] += keep * 0.5;
                }
                latent_transition.push(row);
            }
        }
        let mut emission = Vec::with_capacity(n_s * n_m);
        for s in 0..n_s {
            for z in 0..n_m {
                let (d, high) = (z % n_a, z >= n_a);
                let main = if high { 0.85 } else { 0.6 };
                let rest = 1.0 - main;
                let favoured = (d + 1 + s % 3) % n_a;
                let mut row = vec![0.0; n_a];
                for (a, p) in row.iter_mut().enumerate() {
                    *p = if a == d {
                        main
                    } else if a == favoured {
                        rest * 0.6
                    } else {
                        rest * 0.2
                    };
                }
                emission.push(row);
            }
        }
        SyntheticGenConfig {
            num_events: 20,
            steps_per_event: 40,
            agents_per_step: 16,
            state_alphabet_size: n_s,
            action_alphabet_size: n_a,
            latent_alphabet_size: n_m,
            latent_transition,
            emission,
            initial_latent: None,
            seed,
        }
    }

    /// Same config with the majority feedback removed: every latent row is
    /// replaced by its average over majority actions.
    pub fn without_feedback(&self) -> Self {
        let (n_a, n_m) = (self.action_alphabet_size, self.latent_alphabet_size);
        let mut cfg = self.clone();
        for z in 0..n_m {
            let mut avg = vec![0.0; n_m];
            for maj in 0..n_a {
                for (acc, p) in avg.iter_mut().zip(&self.latent_transition[z * n_a + maj]) {
                    *acc += p / n_a as f64;
                }
            }
            for maj in 0..n_a {
                cfg.latent_transition[z * n_a + maj] = avg.clone();
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let (n_s, n_a, n_m) = (
            self.state_alphabet_size,
            self.action_alphabet_size,
            self.latent_alphabet_size,
        );
        if n_s < 2 || n_a < 2 || n_m < 2 {
            return Err(Error::argument("alphabet sizes must be at least 2"));
        }
        if self.agents_per_step == 0 {
            return Err(Error::argument("agents_per_step must be at least 1"));
        }
        check_stochastic("latent_transition", &self.latent_transition, n_m * n_a, n_m)?;
        check_stochastic("emission", &self.emission, n_s * n_m, n_a)?;
        if let Some(z) = self.initial_latent {
            if z >= n_m {
                return Err(Error::argument(format!("initial_latent {z} out of range")));
            }
        }
        Ok(())
    }
}

fn check_stochastic(name: &str, rows: &[Vec<f64>], n_rows: usize, n_cols: usize) -> Result<()> {
    if rows.len() != n_rows {
        return Err(Error::argument(format!(
            "{name} has {} rows, expected {n_rows}",
            rows.len()
        )));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n_cols {
            return Err(Error::argument(format!(
                "{name} row {i} has {} columns, expected {n_cols}",
                row.len()
            )));
        }
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::argument(format!(
                "{name} row {i} has a negative or non-finite entry"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > SYMBOL_TOL {
            return Err(Error::argument(format!("{name} row {i} sums to {sum}")));
        }
    }
    Ok(())
}

/// Draw an index from a probability row by inverse CDF.
pub(crate) fn sample_row<R: Rng>(rng: &mut R, row: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding slack: last index with positive mass
    row.iter().rposition(|p| *p > 0.0).unwrap_or(row.len() - 1)
}

/// Most frequent index; ties go to the lowest index.
pub fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

const LOCATIONS: [&str; 6] = [
    "Beijing",
    "Shanghai",
    "Guangzhou",
    "Chengdu",
    "Wuhan",
    "Hangzhou",
];

pub fn toy_state_text(state: usize) -> String {
    format!("s{state}")
}

pub fn toy_action_text(action: usize) -> String {
    format!("a{action}")
}

pub fn generate_synthetic(cfg: &SyntheticGenConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let (n_s, n_a, n_m) = (
        cfg.state_alphabet_size,
        cfg.action_alphabet_size,
        cfg.latent_alphabet_size,
    );
    let per_event: Vec<(Event, Vec<usize>)> = crate::par::map_range(cfg.num_events, |e| {
        let mut rng = rng_for(cfg.seed, &[tag::SYNTHETIC, e as u64]);
        let mut z = cfg
            .initial_latent
            .unwrap_or_else(|| rng.random_range(0..n_m));
        let mut latents = Vec::with_capacity(cfg.steps_per_event);
        let mut timeline = Vec::with_capacity(cfg.steps_per_event * cfg.agents_per_step);
        for _t in 0..cfg.steps_per_event {
            latents.push(z);
            let mut counts = vec![0usize; n_a];
            for _ in 0..cfg.agents_per_step {
                let s = rng.random_range(0..n_s);
                let a = sample_row(&mut rng, &cfg.emission[s * n_m + z]);
                counts[a] += 1;
                let followers = rng.random_range(0..20_000u64);
                let idx = timeline.len();
                timeline.push(TimelineEntry {
                    profile: AgentProfile {
                        location: LOCATIONS[rng.random_range(0..LOCATIONS.len())].to_string(),
                        description: toy_state_text(s),
                        gender: if rng.random_bool(0.5) {
                            Gender::Male
                        } else {
                            Gender::Female
                        },
                        friends_level: FriendsLevel::from_count(rng.random_range(0..5_000)),
                        influence_level: InfluenceLevel::from_followers(followers),
                        activity_level: ActivityLevel::from_interactions(rng.random_range(0..300)),
                        verified: false,
                        verification_type: None,
                    },
                    action: ActionText {
                        text: toy_action_text(a),
                        author_index: idx,
                        step: idx,
                        provenance: Provenance::GroundTruth,
                    },
                    engagement: Engagement {
                        followers,
                        replies: rng.random_range(0..50),
                        likes: rng.random_range(0..200),
                    },
                });
            }
            let maj = majority(&counts);
            z = sample_row(&mut rng, &cfg.latent_transition[z * n_a + maj]);
        }
        let event = Event {
            event_id: format!("syn-{}-{e:04}", cfg.seed),
            topic: format!("synthetic event {e}"),
            domain_tag: DomainTag::Synthetic,
            timeline,
        };
        (event, latents)
    });
    let (events, latents): (Vec<_>, Vec<_>) = per_event.into_iter().unzip();
    Ok(SyntheticCorpus {
        corpus: Corpus::new(events, CorpusSource::Synthetic)?,
        latents,
    })
}
