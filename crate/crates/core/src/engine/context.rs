//! What each context strategy lets the policy see.

use serde::{Deserialize, Serialize};

use crate::domain::{ActionText, ContextStrategy, Engagement, MeanFieldState};
use crate::error::{Error, Result};

/// Context handed to the policy. `items` holds the mean-field summary (one
/// entry) for `mean_field`, the selected comments for `recent_k` and
/// `popular_k`, and nothing otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextText {
    pub strategy: ContextStrategy,
    pub items: Vec<String>,
}

impl ContextText {
    pub fn empty(strategy: ContextStrategy) -> Self {
        ContextText {
            strategy,
            items: Vec::new(),
        }
    }

    /// Flat text form.
    pub fn payload(&self) -> String {
        self.items.join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopularityScore {
    pub followers_weight: f64,
    pub replies_weight: f64,
    pub likes_weight: f64,
}

impl Default for PopularityScore {
    fn default() -> Self {
        PopularityScore {
            followers_weight: 1.0,
            replies_weight: 1.0,
            likes_weight: 1.0,
        }
    }
}

impl PopularityScore {
    pub fn validate(&self) -> Result<()> {
        let w = [
            self.followers_weight,
            self.replies_weight,
            self.likes_weight,
        ];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::argument(
                "popularity weights must be finite and non-negative",
            ));
        }
        if w.iter().all(|x| *x == 0.0) {
            return Err(Error::argument(
                "at least one popularity weight must be positive",
            ));
        }
        Ok(())
    }

    pub fn score(&self, e: &Engagement) -> f64 {
        self.followers_weight * e.followers as f64
            + self.replies_weight * e.replies as f64
            + self.likes_weight * e.likes as f64
    }
}

/// A past action with its engagement counters, oldest first in a history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryItem {
    pub action: ActionText,
    pub engagement: Engagement,
}

pub fn build_context(
    strategy: ContextStrategy,
    history: &[HistoryItem],
    mean_field: &MeanFieldState,
    k: usize,
    score: &PopularityScore,
) -> ContextText {
    let items = match strategy {
        ContextStrategy::StateOnly | ContextStrategy::Sft => Vec::new(),
        ContextStrategy::MeanField => vec![mean_field.content.as_prompt_text()],
        ContextStrategy::RecentK => {
            let start = history.len().saturating_sub(k);
            history[start..]
                .iter()
                .map(|h| h.action.text.clone())
                .collect()
        }
        ContextStrategy::PopularK => {
            let mut idx: Vec<usize> = (0..history.len()).collect();
            // highest score first; among equals, the most recent first
            idx.sort_by(|&a, &b| {
                score
                    .score(&history[b].engagement)
                    .total_cmp(&score.score(&history[a].engagement))
                    .then(b.cmp(&a))
            });
            idx.into_iter()
                .take(k)
                .map(|i| history[i].action.text.clone())
                .collect()
        }
    };
    ContextText { strategy, items }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Provenance;

    fn item(text: &str, likes: u64) -> HistoryItem {
        HistoryItem {
            action: ActionText {
                text: text.into(),
                author_index: 0,
                step: 0,
                provenance: Provenance::GroundTruth,
            },
            engagement: Engagement {
                followers: 0,
                replies: 0,
                likes,
            },
        }
    }

    #[test]
    fn recent_k_is_the_suffix() {
        let h = [item("a", 0), item("b", 0), item("c", 0)];
        let c = build_context(
            ContextStrategy::RecentK,
            &h,
            &MeanFieldState::initial(),
            2,
            &PopularityScore::default(),
        );
        assert_eq!(c.items, vec!["b", "c"]);
        let c = build_context(
            ContextStrategy::RecentK,
            &h,
            &MeanFieldState::initial(),
            10,
            &PopularityScore::default(),
        );
        assert_eq!(c.items.len(), 3);
    }

    #[test]
    fn popular_ties_prefer_recent() {
        let h = [item("a", 5), item("b", 9), item("c", 9)];
        let c = build_context(
            ContextStrategy::PopularK,
            &h,
            &MeanFieldState::initial(),
            1,
            &PopularityScore::default(),
        );
        assert_eq!(c.items, vec!["c"]);
    }

    #[test]
    fn state_only_and_sft_are_empty() {
        let h = [item("a", 5)];
        for s in [ContextStrategy::StateOnly, ContextStrategy::Sft] {
            let c = build_context(
                s,
                &h,
                &MeanFieldState::initial(),
                0,
                &PopularityScore::default(),
            );
            assert!(c.items.is_empty());
            assert_eq!(c.payload(), "");
        }
    }

    #[test]
    fn score_validation() {
        let zero = PopularityScore {
            followers_weight: 0.0,
            replies_weight: 0.0,
            likes_weight: 0.0,
        };
        assert!(zero.validate().is_err());
        assert!(PopularityScore::default().validate().is_ok());
    }
}
