//! The embedded assessment mechanism: per-action classification and score.
//!
//! Scoring is a single forward pass over a session log. Each action is
//! matched greedily to the earliest ready unmatched step; otherwise it is
//! redundant (repeats an already-matched step), hazardous (fired a hazard
//! event) or irrelevant, in that order of precedence.

use serde::{Deserialize, Serialize};

use crate::domain::KindRegistry;
use crate::engine::WorldState;
use crate::formats::Penalties;
use crate::procedure::Procedure;
use crate::session::LogEntry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionClass {
    Productive,
    Redundant,
    Irrelevant,
    Hazardous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionClassification {
    pub tick: u64,
    pub class: ActionClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_step: Option<String>,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub score: u32,
    pub classifications: Vec<ActionClassification>,
    pub steps_matched: usize,
    pub steps_total: usize,
    pub penalty_total: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("inconsistent log at entry {index}: {reason}")]
pub struct InconsistentLog {
    pub index: usize,
    pub reason: String,
}

/// Unrounded score before the floor: `100·matched/total − penalties`.
pub fn raw_score(steps_matched: usize, steps_total: usize, penalty_total: f64) -> f64 {
    let ratio = if steps_total == 0 {
        0.0
    } else {
        100.0 * steps_matched as f64 / steps_total as f64
    };
    ratio - penalty_total
}

pub fn final_score(steps_matched: usize, steps_total: usize, penalty_total: f64) -> u32 {
    raw_score(steps_matched, steps_total, penalty_total).round().max(0.0) as u32
}

/// Replay position for incremental scoring. The world is advanced by each
/// entry's recorded state delta, so no engine is needed.
#[derive(Debug, Clone)]
pub struct Cursor<'a> {
    pub world: WorldState,
    pub matched: Vec<String>,
    pub penalty_total: f64,
    pub entries: usize,
    procedure: &'a Procedure,
    registry: &'a KindRegistry,
    penalties: Penalties,
}

impl<'a> Cursor<'a> {
    pub fn new(initial: WorldState, procedure: &'a Procedure, registry: &'a KindRegistry, penalties: Penalties) -> Self {
        Cursor {
            world: initial,
            matched: Vec::new(),
            penalty_total: 0.0,
            entries: 0,
            procedure,
            registry,
            penalties,
        }
    }

    /// A cursor positioned after `entries` log entries.
    pub fn resume(
        world: WorldState,
        matched: Vec<String>,
        penalty_total: f64,
        entries: usize,
        procedure: &'a Procedure,
        registry: &'a KindRegistry,
        penalties: Penalties,
    ) -> Self {
        Cursor {
            world,
            matched,
            penalty_total,
            entries,
            procedure,
            registry,
            penalties,
        }
    }

    pub fn raw_score(&self) -> f64 {
        raw_score(self.matched.len(), self.procedure.steps.len(), self.penalty_total)
    }

    pub fn score(&self) -> u32 {
        final_score(self.matched.len(), self.procedure.steps.len(), self.penalty_total)
    }

    pub fn completed(&self) -> bool {
        self.matched.len() == self.procedure.steps.len()
    }
}

/// Classifies one log entry and advances the cursor past it.
pub fn classify_action(cursor: &mut Cursor, entry: &LogEntry) -> Result<ActionClassification, InconsistentLog> {
    let index = cursor.entries;
    let fail = |reason: String| InconsistentLog { index, reason };
    if entry.tick != cursor.world.tick {
        return Err(fail(format!("tick {} where {} was expected", entry.tick, cursor.world.tick)));
    }
    let before = &cursor.world;
    let classified = |class, matched_step, penalty| ActionClassification {
        tick: entry.tick,
        class,
        matched_step,
        penalty,
    };

    if entry.result.rejected.is_some() {
        if !entry.result.state_delta.is_empty() {
            return Err(fail("a rejected action carries a state delta".into()));
        }
        cursor.entries += 1;
        cursor.penalty_total += cursor.penalties.irrelevant;
        return Ok(classified(ActionClass::Irrelevant, None, cursor.penalties.irrelevant));
    }

    let after = entry.result.apply_delta(before).map_err(fail)?;
    let procedure = cursor.procedure;
    let registry = cursor.registry;
    let out = if let Some(i) = procedure.match_ready(&cursor.matched, &entry.action, before, &after, registry) {
        let id = procedure.steps[i].id.clone();
        cursor.matched.push(id.clone());
        classified(ActionClass::Productive, Some(id), 0.0)
    } else {
        let repeats = procedure
            .steps
            .iter()
            .filter(|s| cursor.matched.contains(&s.id))
            .any(|s| s.matcher.matches(&entry.action, before, registry));
        let (class, penalty) = if repeats {
            (ActionClass::Redundant, cursor.penalties.redundant)
        } else if entry.result.has_hazard() {
            (ActionClass::Hazardous, cursor.penalties.hazardous)
        } else {
            (ActionClass::Irrelevant, cursor.penalties.irrelevant)
        };
        cursor.penalty_total += penalty;
        classified(class, None, penalty)
    };
    cursor.world = after;
    cursor.entries += 1;
    Ok(out)
}

/// Scores a whole log; the fold of [`classify_action`] from `initial`.
pub fn score_log(
    initial: &WorldState,
    log: &[LogEntry],
    procedure: &Procedure,
    registry: &KindRegistry,
    penalties: Penalties,
) -> Result<EvaluationReport, InconsistentLog> {
    let mut cursor = Cursor::new(initial.clone(), procedure, registry, penalties);
    let classifications = log
        .iter()
        .map(|entry| classify_action(&mut cursor, entry))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvaluationReport {
        score: cursor.score(),
        classifications,
        steps_matched: cursor.matched.len(),
        steps_total: procedure.steps.len(),
        penalty_total: cursor.penalty_total,
    })
}
