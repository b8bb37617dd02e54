use serde::{Deserialize, Serialize};

use crate::domain::{ActionText, Provenance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    /// Replace the first `count` actions of the step with scripted texts.
    SeedAgents,
    /// Feed texts to the next mean-field update without scoring them.
    Broadcast,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intervention {
    pub step: usize,
    pub kind: InterventionKind,
    pub actions: Vec<String>,
    #[serde(default)]
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionSchedule {
    pub entries: Vec<Intervention>,
}

/// Outcome of applying the schedule at one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Applied {
    pub actions: Vec<ActionText>,
    pub broadcasts: Vec<ActionText>,
}

impl InterventionSchedule {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Field-path errors for the service layer.
    pub fn validate(&self, horizon: usize, batch_size: usize) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.step >= horizon {
                return Err(Error::argument(format!(
                    "entries[{i}].step: {} is outside the horizon {horizon}",
                    e.step
                )));
            }
            if e.actions.is_empty() || e.actions.iter().any(|t| t.trim().is_empty()) {
                return Err(Error::argument(format!(
                    "entries[{i}].actions: needs at least one non-empty text"
                )));
            }
            if e.kind == InterventionKind::SeedAgents && e.count > batch_size {
                return Err(Error::argument(format!(
                    "entries[{i}].count: {} exceeds batch size {batch_size}",
                    e.count
                )));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.step)
    }

    pub fn first_step(&self) -> Option<usize> {
        self.steps().min()
    }
}

/// Apply every schedule entry for step `t` to that step's actions.
pub fn apply_interventions(
    schedule: &InterventionSchedule,
    t: usize,
    generated: Vec<ActionText>,
) -> Result<Applied> {
    let mut actions = generated;
    let mut broadcasts = Vec::new();
    for entry in schedule.entries.iter().filter(|e| e.step == t) {
        match entry.kind {
            InterventionKind::SeedAgents => {
                if entry.count > actions.len() {
                    return Err(Error::argument(format!(
                        "seed_agents count {} exceeds the {} agents active at step {t}",
                        entry.count,
                        actions.len()
                    )));
                }
                for (j, slot) in actions.iter_mut().take(entry.count).enumerate() {
                    slot.text = entry.actions[j % entry.actions.len()].clone();
                    slot.provenance = Provenance::Injected;
                }
            }
            InterventionKind::Broadcast => {
                broadcasts.extend(entry.actions.iter().map(|text| ActionText {
                    text: text.clone(),
                    author_index: 0,
                    step: t,
                    provenance: Provenance::Injected,
                }));
            }
        }
    }
    Ok(Applied {
        actions,
        broadcasts,
    })
}
