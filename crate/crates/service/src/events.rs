//! The per-session event history that `GET /sessions/{id}/events` replays.

use serde::{Deserialize, Serialize};
use vlab_core::engine::Action;
use vlab_core::session::SubmitOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    Action,
    RuleEvent,
    StepMatched,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub seq: u64,
    pub tick: u64,
    #[serde(rename = "type")]
    pub event_type: EventType,
    pub payload: serde_json::Value,
}

/// Events produced by one submitted action, in intra-tick order: the action
/// itself, its rule events, matched steps, then completion.
pub fn events_for(next_seq: u64, tick: u64, action: &Action, outcome: &SubmitOutcome, was_completed: bool) -> Vec<StreamEvent> {
    let mut out = Vec::new();
    let mut push = |event_type, payload| {
        out.push(StreamEvent {
            seq: next_seq + out.len() as u64,
            tick,
            event_type,
            payload,
        })
    };
    let (fired, delta) = match &outcome.result {
        Some(r) => (r.fired_rules.clone(), r.state_delta.clone()),
        None => (Vec::new(), Vec::new()),
    };
    push(
        EventType::Action,
        serde_json::json!({
            "action": action,
            "accepted": outcome.accepted,
            "reason": outcome.reason,
            "fired_rules": fired,
            "state_delta": delta,
        }),
    );
    if let Some(r) = &outcome.result {
        for e in &r.events {
            push(EventType::RuleEvent, serde_json::to_value(e).expect("events serialize"));
        }
    }
    for step in &outcome.newly_matched {
        push(EventType::StepMatched, serde_json::json!({ "step_id": step }));
    }
    if outcome.completed && !was_completed {
        push(EventType::Completed, serde_json::json!({}));
    }
    out
}
