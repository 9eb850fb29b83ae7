//! Reset/step environment over Evaluation-mode sessions, for learning agents.
//!
//! The action space is a catalog fixed at reset: every legal action of the
//! initial world, with amount slots expanded over the configured grid.
//! Actions that are illegal later in the episode stay in the catalog and cost
//! one irrelevant-action penalty.
//!
//! Each step is rewarded with the change of the unrounded running score
//! divided by 100. The step that ends the episode also carries the
//! difference between the reported (rounded, floored) score and the running
//! one, so an episode's rewards sum to exactly `score / 100`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assessment::{final_score, ActionClassification, Cursor};
use crate::domain::{KindRegistry, ValueType};
use crate::engine::{legal_actions, Action, WorldState};
use crate::formats::{ScenarioPack, SceneFile};
use crate::procedure::Procedure;
use crate::session::{Mode, Session, SessionError, SessionReport};
use crate::value::Value;

pub const DEFAULT_MAX_STEPS: usize = 100;

#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub scene: SceneFile,
    pub pack: Arc<ScenarioPack>,
    pub procedure_id: String,
    pub max_steps: usize,
    pub amount_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("action index {index} is outside the catalog of {len} actions")]
    IndexOutOfRange { index: i64, len: usize },
    #[error("the episode is done; reset to start a new one")]
    EpisodeDone,
    #[error("the environment has not been reset")]
    NotReset,
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error(transparent)]
    Session(#[from] SessionError),
}

impl EnvError {
    pub fn code(&self) -> &'static str {
        match self {
            EnvError::IndexOutOfRange { .. } => "index_out_of_range",
            EnvError::EpisodeDone => "episode_done",
            EnvError::NotReset => "not_reset",
            EnvError::Config(_) => "invalid_config",
            EnvError::Session(_) => "session_error",
        }
    }
}

/// Distinct matcher amounts of a procedure, ascending.
pub fn default_amount_grid(procedure: &Procedure) -> Vec<f64> {
    let mut grid: Vec<f64> = procedure
        .steps
        .iter()
        .filter_map(|s| s.matcher.amount.map(|a| a.value))
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.is_empty() {
        grid.push(1.0);
    }
    grid
}

impl EnvConfig {
    /// Default scene, [`DEFAULT_MAX_STEPS`] and the procedure's own amounts.
    pub fn new(pack: Arc<ScenarioPack>, procedure_id: &str) -> Result<Self, EnvError> {
        let procedure = pack
            .procedure(procedure_id)
            .ok_or_else(|| SessionError::UnknownProcedure(procedure_id.to_string()))?;
        Ok(EnvConfig {
            scene: pack.default_scene.clone(),
            amount_grid: default_amount_grid(procedure),
            procedure_id: procedure_id.to_string(),
            max_steps: DEFAULT_MAX_STEPS,
            pack,
        })
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.max_steps < 1 {
            return Err(EnvError::Config("max_steps must be at least 1".into()));
        }
        if self.amount_grid.is_empty() {
            return Err(EnvError::Config("amount_grid is empty".into()));
        }
        if self.amount_grid.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(EnvError::Config("amounts must be finite and >= 0".into()));
        }
        if self.amount_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EnvError::Config("amount_grid must be strictly increasing".into()));
        }
        if self.pack.procedure(&self.procedure_id).is_none() {
            return Err(SessionError::UnknownProcedure(self.procedure_id.clone()).into());
        }
        Ok(())
    }
}

/// Encodes a world as a flat vector: entities by id, features by name,
/// then one slot per procedure step. String features are not encoded.
pub fn observe(world: &WorldState, registry: &KindRegistry, procedure: &Procedure, matched: &[String]) -> Vec<f64> {
    let mut out = Vec::new();
    for entity in world.entities.values() {
        let Ok(kind) = registry.resolve(&entity.kind) else { continue };
        for (name, spec) in &kind.features {
            let Some(value) = entity.state.get(name) else { continue };
            let slot = match (spec.value_type, value) {
                (ValueType::Bool, Value::Bool(b)) => f64::from(u8::from(*b)),
                (ValueType::Int | ValueType::Real, v) => {
                    let x = v.as_f64().unwrap_or(0.0);
                    match spec.bounds() {
                        Some((lo, hi)) if hi > lo => (x - lo) / (hi - lo),
                        Some(_) => 0.0,
                        None => x,
                    }
                }
                (ValueType::Enum, Value::Text(s)) => {
                    let n = spec.enum_values.len();
                    let idx = spec.enum_values.iter().position(|e| e == s).unwrap_or(0);
                    if n > 1 {
                        idx as f64 / (n - 1) as f64
                    } else {
                        0.0
                    }
                }
                _ => continue,
            };
            out.push(slot);
        }
    }
    out.extend(
        procedure
            .steps
            .iter()
            .map(|s| if matched.contains(&s.id) { 1.0 } else { 0.0 }),
    );
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub classification: ActionClassification,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub completed: bool,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug)]
pub struct Env {
    config: EnvConfig,
    session: Option<Session>,
    catalog: Vec<Action>,
    steps: usize,
    done: bool,
    matched: Vec<String>,
    penalty_total: f64,
    running: f64,
}

impl Env {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Env {
            config,
            session: None,
            catalog: Vec::new(),
            steps: 0,
            done: false,
            matched: Vec::new(),
            penalty_total: 0.0,
            running: 0.0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    fn procedure(&self) -> &Procedure {
        self.config.pack.procedure(&self.config.procedure_id).expect("validated")
    }

    pub fn catalog(&self) -> &[Action] {
        &self.catalog
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn reset(&mut self) -> Result<(Vec<f64>, Vec<Action>), EnvError> {
        let session = Session::start(
            &self.config.scene,
            self.config.pack.clone(),
            Mode::Evaluation,
            Some(&self.config.procedure_id),
        )?;
        let mut catalog = Vec::new();
        for legal in legal_actions(session.world(), &self.config.pack) {
            if legal.amount_slot {
                for amount in &self.config.amount_grid {
                    let mut a = legal.action.clone();
                    a.params.amount = Some(*amount);
                    catalog.push(a);
                }
            } else {
                catalog.push(legal.action);
            }
        }
        self.catalog = catalog;
        self.session = Some(session);
        self.steps = 0;
        self.done = false;
        self.matched.clear();
        self.penalty_total = 0.0;
        self.running = 0.0;
        Ok((self.observation(), self.catalog.clone()))
    }

    pub fn observation(&self) -> Vec<f64> {
        match &self.session {
            Some(s) => observe(s.world(), &self.config.pack.kinds, self.procedure(), &self.matched),
            None => Vec::new(),
        }
    }

    pub fn step(&mut self, index: i64) -> Result<StepOutput, EnvError> {
        if self.session.is_none() {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let action = usize::try_from(index)
            .ok()
            .and_then(|i| self.catalog.get(i))
            .cloned()
            .ok_or(EnvError::IndexOutOfRange {
                index,
                len: self.catalog.len(),
            })?;

        let pack = self.config.pack.clone();
        let procedure = pack.procedure(&self.config.procedure_id).expect("validated");
        let session = self.session.as_mut().expect("checked");
        let before = session.world().clone();
        let entries = session.log().len();
        let outcome = session.submit_action(&action)?;
        let entry = session.log().last().expect("evaluation sessions log every action");

        let mut cursor = Cursor::resume(
            before,
            std::mem::take(&mut self.matched),
            self.penalty_total,
            entries,
            procedure,
            &pack.kinds,
            pack.penalties(),
        );
        let classification = crate::assessment::classify_action(&mut cursor, entry)
            .expect("a session's own log is consistent");
        self.matched = cursor.matched.clone();
        self.penalty_total = cursor.penalty_total;
        self.steps += 1;

        let raw = cursor.raw_score();
        let mut reward = (raw - self.running) / 100.0;
        self.running = raw;
        self.done = cursor.completed() || self.steps >= self.config.max_steps;
        if self.done {
            let score = final_score(self.matched.len(), procedure.steps.len(), self.penalty_total);
            reward += (f64::from(score) - raw) / 100.0;
        }
        Ok(StepOutput {
            observation: self.observation(),
            reward,
            done: self.done,
            info: StepInfo {
                classification,
                accepted: outcome.accepted,
                reason: outcome.reason,
                completed: outcome.completed,
                steps: self.steps,
            },
        })
    }

    /// Finishes the underlying session and returns its report.
    pub fn finish(&mut self) -> Option<SessionReport> {
        self.session.as_mut().map(Session::finish)
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
enum Request {
    Reset,
    Step { action: i64 },
    Finish,
}

/// Line protocol: one JSON request per line, one JSON reply per line.
/// Requests are `{"op":"reset"}`, `{"op":"step","action":i}` and
/// `{"op":"finish"}`, which returns the session report.
pub fn handle_line(env: &mut Env, line: &str) -> serde_json::Value {
    let error = |code: &str, message: String| serde_json::json!({"error": code, "message": message});
    let request: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return error("bad_request", e.to_string()),
    };
    match request {
        Request::Reset => match env.reset() {
            Ok((observation, catalog)) => serde_json::json!({
                "observation": observation,
                "catalog": catalog,
                "steps_total": env.procedure().steps.len(),
            }),
            Err(e) => error(e.code(), e.to_string()),
        },
        Request::Step { action } => match env.step(action) {
            Ok(out) => serde_json::to_value(out).expect("step outputs serialize"),
            Err(e) => error(e.code(), e.to_string()),
        },
        Request::Finish => match env.finish() {
            Some(report) => serde_json::json!({ "report": report }),
            None => error(EnvError::NotReset.code(), EnvError::NotReset.to_string()),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    fn tbe_env() -> Env {
        let pack = Arc::new(bundled::tbe_pack());
        let mut config = EnvConfig::new(pack, "tbe-10x").unwrap();
        config.amount_grid = vec![17.4, 54.0];
        Env::new(config).unwrap()
    }

    #[test]
    fn catalog_expands_amounts() {
        let mut env = tbe_env();
        let (obs, catalog) = env.reset().unwrap();
        assert!(catalog.contains(&Action::use_with("boric_acid_bottle", "scale", Some(17.4))));
        assert!(catalog.contains(&Action::use_with("boric_acid_bottle", "scale", Some(54.0))));
        let (obs2, catalog2) = env.reset().unwrap();
        assert_eq!(obs, obs2);
        assert_eq!(catalog, catalog2);
        assert!(obs.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn productive_and_irrelevant_rewards() {
        let mut env = tbe_env();
        let (_, catalog) = env.reset().unwrap();
        let power = catalog.iter().position(|a| *a == Action::press("scale_power")).unwrap() as i64;
        let lamp = catalog.iter().position(|a| *a == Action::press("bench_lamp")).unwrap() as i64;
        let out = env.step(power).unwrap();
        assert!((out.reward - 100.0 / 13.0 / 100.0).abs() < 1e-4);
        assert!((out.reward - 0.0769).abs() < 1e-4);
        let out = env.step(lamp).unwrap();
        assert!((out.reward + 0.01).abs() < 1e-12);
    }

    #[test]
    fn errors_by_state() {
        let mut env = tbe_env();
        assert_eq!(env.step(0), Err(EnvError::NotReset));
        env.reset().unwrap();
        assert!(matches!(env.step(-1), Err(EnvError::IndexOutOfRange { .. })));
        assert!(matches!(env.step(100_000), Err(EnvError::IndexOutOfRange { .. })));
        let mut config = env.config().clone();
        config.max_steps = 1;
        let mut short = Env::new(config).unwrap();
        short.reset().unwrap();
        assert!(short.step(0).unwrap().done);
        assert_eq!(short.step(0), Err(EnvError::EpisodeDone));
    }

    #[test]
    fn config_validation() {
        let mut config = tbe_env().config().clone();
        config.amount_grid = vec![2.0, 1.0];
        assert!(Env::new(config.clone()).is_err());
        config.amount_grid = vec![];
        assert!(Env::new(config.clone()).is_err());
        config.amount_grid = vec![1.0];
        config.max_steps = 0;
        assert!(Env::new(config).is_err());
    }

    #[test]
    fn line_protocol() {
        let mut env = tbe_env();
        assert_eq!(handle_line(&mut env, r#"{"op":"step","action":0}"#)["error"], "not_reset");
        let reply = handle_line(&mut env, r#"{"op":"reset"}"#);
        assert!(reply["observation"].is_array());
        assert_eq!(handle_line(&mut env, r#"{"op":"step","action":99999}"#)["error"], "index_out_of_range");
        assert!(handle_line(&mut env, r#"{"op":"step","action":0}"#)["reward"].is_number());
        assert_eq!(handle_line(&mut env, "nope")["error"], "bad_request");
    }
}
