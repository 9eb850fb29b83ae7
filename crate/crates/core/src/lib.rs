//! Headless virtual-laboratory scenario engine.
//!
//! Scenario content (kinds, rules, procedures, scenes) lives in scenario
//! packs and scene files; this crate parses and validates them, runs the
//! deterministic transition engine, implements the Instruction, Evaluation
//! and Experimentation session modes, scores Evaluation logs, and wraps
//! sessions as a reset/step environment for learning agents.

pub mod assessment;
pub mod bundled;
pub mod canonical;
pub mod domain;
pub mod engine;
pub mod env;
pub mod formats;
pub mod procedure;
pub mod rules;
pub mod session;
#[cfg(feature = "testkit")]
pub mod testkit;
pub mod value;

pub use assessment::{classify_action, score_log, ActionClass, ActionClassification, Cursor, EvaluationReport};
pub use domain::{kind_is_a, resolve_kind, validate_entity, Affordance, Entity, KindDef, KindRegistry, Violation, Zone};
pub use engine::{apply_action, init_world, legal_actions, state_hash, Action, Direction, TransitionResult, WorldState};
pub use formats::{parse_pack, parse_scene, validate_pack, validate_scene, write_pack, write_scene, ScenarioPack, SceneFile};
pub use session::{LogEntry, LogRecord, Mode, Session, SessionReport, Suggest, Suggestion};
pub use value::Value;
