//! Prompt templates for the policy model, the mean-field model and the judge.

use serde::{Deserialize, Serialize};

use crate::domain::{ActionText, AgentState, ContextStrategy, MeanFieldState};
use crate::engine::context::ContextText;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Policy,
    MeanField,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub template_id: TemplateId,
}

/// Summary aspects requested from the mean-field model, in priority order.
pub const MEAN_FIELD_ASPECTS: [(&str, &str); 6] = [
    (
        "Stance Distribution",
        "Do users mostly support or oppose the topic?",
    ),
    (
        "Opinion Distribution",
        "Which viewpoints come up most often?",
    ),
    (
        "Emotion Distribution",
        "Which emotions dominate (anger, excitement, doubt, anxiety), and is the overall tone positive, negative or neutral?",
    ),
    (
        "Behavior Distribution",
        "Do users lean toward reposting or toward commenting?",
    ),
    (
        "Perception of Topic Authenticity",
        "How far do users believe or doubt that the topic is true?",
    ),
    (
        "Intent of Comments",
        "Are users mainly asking questions, giving opinions, or spreading information?",
    ),
];

/// Appended to prompts for chat models that would otherwise explain themselves.
pub const FINAL_TEXT_ONLY: &str =
    "Output only the final simulated text without any intermediate reasoning process.";

/// Slot names of the templates. Any of these left as `{name}` in a rendered
/// prompt means a substitution was skipped.
const SLOTS: [&str; 12] = [
    "topic",
    "recent_comment",
    "popular_comment",
    "mean_field",
    "previous_mean_field",
    "user_location",
    "user_description",
    "gender",
    "friends_level",
    "influence_level",
    "activity_level",
    "verified_status",
];

pub fn ensure_rendered(text: &str) -> Result<()> {
    for slot in SLOTS {
        if text.contains(&format!("{{{slot}}}")) {
            return Err(Error::Render(format!("residual placeholder {{{slot}}}")));
        }
    }
    Ok(())
}

fn numbered_comments(comments: &[String]) -> String {
    comments
        .iter()
        .enumerate()
        .map(|(i, c)| format!("Comment {}: {}", i + 1, c))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Policy prompt: topic, the context the strategy allows, and the profile.
pub fn render_policy_prompt(state: &AgentState, context: &ContextText) -> Result<PromptText> {
    let mut text = String::from(
        "You are simulating one user's next action (a repost or a comment) on a social \
         platform, given the user's profile and what the population is currently saying.\n\n\
         Inputs:\n",
    );
    text.push_str(&format!("- Discussion Topic: {}\n", state.topic));
    match context.strategy {
        ContextStrategy::RecentK => {
            text.push_str("- Recent Comments:\n");
            text.push_str(&numbered_comments(&context.items));
            text.push('\n');
        }
        ContextStrategy::PopularK => {
            text.push_str("- Popular Comments:\n");
            text.push_str(&numbered_comments(&context.items));
            text.push('\n');
        }
        ContextStrategy::MeanField => {
            let summary = context.items.first().map(String::as_str).unwrap_or("");
            text.push_str(&format!("- Current Mean Field: {summary}\n"));
        }
        ContextStrategy::StateOnly | ContextStrategy::Sft => {}
    }
    text.push_str(&format!("- User Profile: {}\n\n", state.rendered_state));
    text.push_str("Write the text this user posts.\n");
    text.push_str(FINAL_TEXT_ONLY);
    ensure_rendered(&text)?;
    Ok(PromptText {
        text,
        template_id: TemplateId::Policy,
    })
}

/// Mean-field prompt: topic, previous summary and the numbered comments.
pub fn render_meanfield_prompt(
    topic: &str,
    previous: &MeanFieldState,
    actions: &[ActionText],
    word_cap: usize,
) -> Result<PromptText> {
    if actions.is_empty() {
        return Err(Error::argument(
            "mean-field prompt needs at least one action",
        ));
    }
    let mut text = String::from(
        "You are summarizing how user comments on one discussion topic are distributed.\n\nInputs:\n",
    );
    text.push_str(&format!("- Discussion Topic: {topic}\n"));
    text.push_str(&format!(
        "- Previous Mean Field: {}\n",
        previous.content.as_prompt_text()
    ));
    text.push_str("- Recent User Comments:\n");
    let comments: Vec<String> = actions.iter().map(|a| a.text.clone()).collect();
    text.push_str(&numbered_comments(&comments));
    text.push_str("\n\nSummarize the discussion along these six aspects, most important first:\n");
    for (i, (name, question)) in MEAN_FIELD_ASPECTS.iter().enumerate() {
        text.push_str(&format!("{}. {name}: {question}\n", i + 1));
    }
    text.push_str(&format!(
        "\nKeep the summary to approximately {word_cap} words, clearly structured and focused on the key points."
    ));
    ensure_rendered(&text)?;
    Ok(PromptText {
        text,
        template_id: TemplateId::MeanField,
    })
}

/// Judge prompt covering one batch of comments.
pub fn render_judge_prompt(topic: &str, comments: &[&str]) -> PromptText {
    let mut text = String::from(
        "Role: you analyse public-opinion content.\n\
         Task: classify each user comment below on the listed dimensions, with respect to this topic.\n\n",
    );
    text.push_str(&format!("Discussion Topic: {topic}\n\n"));
    text.push_str(
        "For each comment return one JSON object with these keys:\n\
         1. \"rumor\": one of [\"spread\", \"counter\"]; counter = refutes, doubts or asks to verify the topic, spread = everything else.\n\
         2. \"sentiment_state\": one of [\"angry\", \"calm\", \"happy\", \"sad\", \"fear\", \"surprise\"]; plain reposts are calm. The emoji \"@_@\" usually signals surprise.\n\
         3. \"sentiment_tendency\": one of [\"positive\", \"negative\", \"neutral\"]; watch for sarcasm.\n\
         4. \"behavior_type\": one of [\"comment\", \"share\"]; share = mainly forwarding.\n\
         5. \"stance\": one of [\"support\", \"oppose\", \"neutral\"].\n\
         6. \"belief_degree\": one of [\"believe\", \"doubt\"].\n\
         7. \"keywords\": array of important keywords, or [\"\"] if the comment is meaningless.\n\
         8. \"subjectivity\": one of [\"subjective\", \"objective\"].\n\
         9. \"intent_classification\": one of [\"question\", \"promotion\", \"opinion\"].\n\n",
    );
    text.push_str(&format!(
        "The following are {} user comments:\n",
        comments.len()
    ));
    for (i, c) in comments.iter().enumerate() {
        text.push_str(&format!("Comment {}: \"{}\"\n", i + 1, c));
    }
    text.push_str(&format!(
        "\nReturn only a JSON array with exactly {} objects, in comment order, and nothing else.",
        comments.len()
    ));
    PromptText {
        text,
        template_id: TemplateId::Judge,
    }
}
