//! Classifiers that turn action texts into [`LabelVector`]s.

use std::sync::Arc;

use serde_json::Value;

use super::{DimensionSchema, LabelVector};
use crate::backends::prompt::render_judge_prompt;
use crate::backends::GenerativeBackend;
use crate::domain::ActionText;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::derive_seed;

/// Result of classifying one batch.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchOutcome {
    Labels(Vec<LabelVector>),
    /// The judge never produced a usable answer; every label is `unknown`.
    Failed,
}

pub trait Judge: Send + Sync {
    /// Actions per request.
    fn batch_size(&self) -> usize;

    fn classify_batch(
        &self,
        topic: &str,
        texts: &[&str],
        schema: &DimensionSchema,
        batch_index: usize,
    ) -> Result<BatchOutcome>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classified {
    pub labels: Vec<LabelVector>,
    pub failed_batches: usize,
}

pub fn classify_actions(
    actions: &[ActionText],
    topic: &str,
    judge: &dyn Judge,
    schema: &DimensionSchema,
) -> Result<Classified> {
    if actions.is_empty() {
        return Err(Error::argument("nothing to classify"));
    }
    let texts: Vec<&str> = actions.iter().map(|a| a.text.as_str()).collect();
    let chunks: Vec<&[&str]> = texts.chunks(judge.batch_size().max(1)).collect();
    let outcomes = par::map_range(chunks.len(), |b| {
        judge.classify_batch(topic, chunks[b], schema, b)
    });
    let mut labels = Vec::with_capacity(actions.len());
    let mut failed_batches = 0;
    for (b, outcome) in outcomes.into_iter().enumerate() {
        match outcome? {
            BatchOutcome::Labels(v) if v.len() == chunks[b].len() => labels.extend(v),
            BatchOutcome::Labels(v) => {
                return Err(Error::Classification {
                    batch: b,
                    message: format!("judge returned {} vectors for {}", v.len(), chunks[b].len()),
                })
            }
            BatchOutcome::Failed => {
                failed_batches += 1;
                labels.extend(chunks[b].iter().map(|_| LabelVector::unknown(schema)));
            }
        }
    }
    Ok(Classified {
        labels,
        failed_batches,
    })
}

/// A keyword rule: if any keyword occurs, assign `label` on `dimension`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordRule {
    pub dimension: String,
    pub label: String,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockJudge {
    /// Toy actions `a<k>` map to label `k` of one dimension; all other
    /// dimensions stay `unknown`.
    Identity { dimension: usize },
    /// First matching rule per dimension wins; otherwise the fallback label
    /// (if any) is used.
    Keywords {
        rules: Vec<KeywordRule>,
        fallback: Vec<(String, String)>,
    },
}

impl MockJudge {
    /// Simple deterministic rules for the opinion schema.
    pub fn opinion_keywords() -> Self {
        let rule = |d: &str, l: &str, kw: &[&str]| KeywordRule {
            dimension: d.into(),
            label: l.into(),
            keywords: kw.iter().map(|s| s.to_string()).collect(),
        };
        MockJudge::Keywords {
            rules: vec![
                rule(
                    "rumor",
                    "counter",
                    &["fake", "rumor", "debunk", "not true", "false", "verify"],
                ),
                rule(
                    "sentiment",
                    "angry",
                    &["angry", "outrage", "disgusting", "!!"],
                ),
                rule("sentiment", "happy", &["great", "happy", "congrat", "love"]),
                rule("sentiment", "sad", &["sad", "sorry", "rip", "tragic"]),
                rule("sentiment", "fear", &["scary", "afraid", "fear", "worried"]),
                rule(
                    "sentiment",
                    "surprise",
                    &["wow", "@_@", "unbelievable", "shocking"],
                ),
                rule(
                    "attitude",
                    "positive",
                    &["great", "good", "support", "love"],
                ),
                rule(
                    "attitude",
                    "negative",
                    &["fake", "bad", "angry", "disgusting", "sad"],
                ),
                rule("behavior", "share", &["repost", "//@", "share", "forward"]),
                rule("stance", "support", &["support", "agree", "true"]),
                rule(
                    "stance",
                    "oppose",
                    &["fake", "oppose", "disagree", "not true"],
                ),
                rule(
                    "belief",
                    "doubt",
                    &["fake", "doubt", "really?", "not true", "?"],
                ),
                rule(
                    "subjectivity",
                    "objective",
                    &["repost", "//@", "report", "according"],
                ),
                rule("intent", "question", &["?"]),
                rule(
                    "intent",
                    "promotion",
                    &["repost", "share", "forward", "//@"],
                ),
            ],
            fallback: [
                ("rumor", "spread"),
                ("sentiment", "calm"),
                ("attitude", "neutral"),
                ("behavior", "comment"),
                ("stance", "neutral"),
                ("belief", "believe"),
                ("subjectivity", "subjective"),
                ("intent", "opinion"),
            ]
            .iter()
            .map(|(d, l)| (d.to_string(), l.to_string()))
            .collect(),
        }
    }

    fn classify_one(&self, text: &str, schema: &DimensionSchema) -> LabelVector {
        let mut out = LabelVector::unknown(schema);
        match self {
            MockJudge::Identity { dimension } => {
                let n = schema
                    .dimensions
                    .get(*dimension)
                    .map_or(0, |d| d.labels.len());
                out.labels[*dimension] = crate::backends::toy::action_symbol(text, n).ok();
            }
            MockJudge::Keywords { rules, fallback } => {
                let lower = text.to_lowercase();
                for (d, dim) in schema.dimensions.iter().enumerate() {
                    let hit = rules
                        .iter()
                        .filter(|r| r.dimension == dim.name)
                        .find(|r| r.keywords.iter().any(|k| lower.contains(k.as_str())))
                        .map(|r| r.label.as_str())
                        .or_else(|| {
                            fallback
                                .iter()
                                .find(|(fd, _)| *fd == dim.name)
                                .map(|(_, l)| l.as_str())
                        });
                    out.labels[d] = hit.and_then(|l| schema.label_index(d, l));
                }
                out.keywords = rules
                    .iter()
                    .flat_map(|r| &r.keywords)
                    .filter(|k| lower.contains(k.as_str()))
                    .cloned()
                    .collect();
                out.keywords.dedup();
            }
        }
        out
    }
}

impl Judge for MockJudge {
    fn batch_size(&self) -> usize {
        64
    }

    fn classify_batch(
        &self,
        _topic: &str,
        texts: &[&str],
        schema: &DimensionSchema,
        _batch_index: usize,
    ) -> Result<BatchOutcome> {
        Ok(BatchOutcome::Labels(
            texts.iter().map(|t| self.classify_one(t, schema)).collect(),
        ))
    }
}

/// Judge wire keys and the schema dimensions they fill.
pub const JUDGE_KEYS: [(&str, &str); 8] = [
    ("rumor", "rumor"),
    ("sentiment_state", "sentiment"),
    ("sentiment_tendency", "attitude"),
    ("behavior_type", "behavior"),
    ("stance", "stance"),
    ("belief_degree", "belief"),
    ("subjectivity", "subjectivity"),
    ("intent_classification", "intent"),
];

/// Parse a bare JSON array of judge objects. `None` if the reply is not an
/// array of `expected` objects.
pub fn parse_judge_reply(
    reply: &str,
    expected: usize,
    schema: &DimensionSchema,
) -> Option<Vec<LabelVector>> {
    let value: Value = serde_json::from_str(reply.trim()).ok()?;
    let items = value.as_array()?;
    if items.len() != expected {
        return None;
    }
    items
        .iter()
        .map(|item| {
            let obj = item.as_object()?;
            let mut lv = LabelVector::unknown(schema);
            for (key, dim_name) in JUDGE_KEYS {
                if let Some(d) = schema.dimension_index(dim_name) {
                    lv.labels[d] = obj
                        .get(key)
                        .and_then(Value::as_str)
                        .and_then(|l| schema.label_index(d, l.trim()));
                }
            }
            lv.keywords = obj
                .get("keywords")
                .and_then(Value::as_array)
                .map(|ks| {
                    ks.iter()
                        .filter_map(Value::as_str)
                        .filter(|k| !k.is_empty())
                        .map(str::to_string)
                        .collect()
                })
                .unwrap_or_default();
            Some(lv)
        })
        .collect()
}

pub struct LlmJudge {
    backend: Arc<dyn GenerativeBackend>,
    pub batch_size: usize,
    pub max_attempts: usize,
    pub seed: u64,
}

impl LlmJudge {
    pub fn new(backend: Arc<dyn GenerativeBackend>) -> Self {
        LlmJudge {
            backend,
            batch_size: 10,
            max_attempts: 3,
            seed: 0,
        }
    }
}

impl Judge for LlmJudge {
    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn classify_batch(
        &self,
        topic: &str,
        texts: &[&str],
        schema: &DimensionSchema,
        batch_index: usize,
    ) -> Result<BatchOutcome> {
        let prompt = render_judge_prompt(topic, texts);
        for attempt in 0..self.max_attempts {
            let seed = derive_seed(self.seed, &[batch_index as u64, attempt as u64]);
            let reply =
                self.backend
                    .generate(&prompt, seed, 0.0)
                    .map_err(|e| Error::Classification {
                        batch: batch_index,
                        message: e.to_string(),
                    })?;
            if let Some(labels) = parse_judge_reply(&reply, texts.len(), schema) {
                return Ok(BatchOutcome::Labels(labels));
            }
            log::warn!(
                "judge batch {batch_index}: unparseable reply on attempt {}",
                attempt + 1
            );
        }
        Ok(BatchOutcome::Failed)
    }
}
