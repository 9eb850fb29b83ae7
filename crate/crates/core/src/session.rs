//! Sessions and the three playing modes.
//!
//! * Instruction: only the suggested move is accepted; anything else is
//!   rejected with the current hint and leaves no trace.
//! * Evaluation: every action is applied and logged, and the log is scored
//!   when the session finishes. Actions the engine refuses are logged as
//!   rejections (no state change, no tick) so that the assessment can
//!   penalize them.
//! * Experimentation: free play without a procedure or score.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assessment::{score_log, EvaluationReport, InconsistentLog};
use crate::domain::{Affordance, Entity};
use crate::engine::{apply_action, init_world, state_hash, Action, EngineError, TransitionResult, WorldState};
use crate::formats::{PackRef, ScenarioPack, SceneFile, SCENE_FORMAT};
use crate::procedure::Procedure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Instruction,
    Evaluation,
    Experimentation,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Instruction => "instruction",
            Mode::Evaluation => "evaluation",
            Mode::Experimentation => "experimentation",
        }
    }

    pub fn needs_procedure(self) -> bool {
        self != Mode::Experimentation
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "instruction" => Ok(Mode::Instruction),
            "evaluation" => Ok(Mode::Evaluation),
            "experimentation" => Ok(Mode::Experimentation),
            other => Err(format!("unknown mode \"{other}\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("unknown procedure \"{0}\"")]
    UnknownProcedure(String),
    #[error("{0}")]
    ModeArgMismatch(String),
    #[error("operation needs instruction mode but the session is in {0} mode")]
    WrongMode(Mode),
    #[error("session is finished")]
    SessionFinished,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Replay(#[from] InconsistentLog),
}

/// One logged action. `tick` is the world tick the action was applied at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub tick: u64,
    pub action: Action,
    pub result: TransitionResult,
    pub newly_matched: Vec<String>,
}

/// The line-delimited replay record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRecord {
    pub tick: u64,
    pub action: Action,
    pub fired_rules: Vec<String>,
    pub newly_matched: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected: Option<String>,
}

impl From<&LogEntry> for LogRecord {
    fn from(e: &LogEntry) -> Self {
        LogRecord {
            tick: e.tick,
            action: e.action.clone(),
            fired_rules: e.result.fired_rules.clone(),
            newly_matched: e.newly_matched.clone(),
            rejected: e.result.rejected.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub step_id: String,
    pub hint_text: String,
    pub action: Option<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Suggest {
    Next(Suggestion),
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<TransitionResult>,
    pub newly_matched: Vec<String>,
    pub completed: bool,
    /// Whether the attempt was appended to the session log.
    pub logged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub procedure_id: Option<String>,
    pub steps_matched: usize,
    pub steps_total: usize,
    pub action_count: usize,
    pub final_state_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvaluationReport>,
}

#[derive(Debug, Clone)]
pub struct Session {
    mode: Mode,
    pack: Arc<ScenarioPack>,
    procedure: Option<Procedure>,
    initial: WorldState,
    world: WorldState,
    focus: Option<String>,
    matched: Vec<String>,
    log: Vec<LogEntry>,
    report: Option<SessionReport>,
}

impl Session {
    pub fn start(
        scene: &SceneFile,
        pack: Arc<ScenarioPack>,
        mode: Mode,
        procedure_id: Option<&str>,
    ) -> Result<Session, SessionError> {
        let procedure = match (mode.needs_procedure(), procedure_id) {
            (true, None) => {
                return Err(SessionError::ModeArgMismatch(format!("{mode} mode needs a procedure")));
            }
            (false, Some(_)) => {
                return Err(SessionError::ModeArgMismatch(format!("{mode} mode takes no procedure")));
            }
            (true, Some(id)) => Some(
                pack.procedure(id)
                    .cloned()
                    .ok_or_else(|| SessionError::UnknownProcedure(id.to_string()))?,
            ),
            (false, None) => None,
        };
        let world = init_world(scene, &pack)?;
        Ok(Session {
            mode,
            pack,
            procedure,
            initial: world.clone(),
            world,
            focus: None,
            matched: Vec::new(),
            log: Vec::new(),
            report: None,
        })
    }

    /// Starts on the pack's default scene.
    pub fn start_default(pack: Arc<ScenarioPack>, mode: Mode, procedure_id: Option<&str>) -> Result<Session, SessionError> {
        let scene = pack.default_scene.clone();
        Session::start(&scene, pack, mode, procedure_id)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn pack(&self) -> &Arc<ScenarioPack> {
        &self.pack
    }

    pub fn procedure(&self) -> Option<&Procedure> {
        self.procedure.as_ref()
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn initial_world(&self) -> &WorldState {
        &self.initial
    }

    pub fn focus(&self) -> Option<&str> {
        self.focus.as_deref()
    }

    pub fn matched_steps(&self) -> &[String] {
        &self.matched
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn is_finished(&self) -> bool {
        self.report.is_some()
    }

    pub fn report(&self) -> Option<&SessionReport> {
        self.report.as_ref()
    }

    pub fn state_hash(&self) -> String {
        state_hash(&self.world)
    }

    pub fn completed(&self) -> bool {
        self.procedure
            .as_ref()
            .is_some_and(|p| self.matched.len() == p.steps.len())
    }

    fn suggestion(&self) -> Suggest {
        let Some(p) = &self.procedure else { return Suggest::Completed };
        match p.next_ready(&self.matched) {
            None => Suggest::Completed,
            Some(i) => {
                let step = &p.steps[i];
                Suggest::Next(Suggestion {
                    step_id: step.id.clone(),
                    hint_text: step.hint_text.clone(),
                    action: step.matcher.concretize(&self.world, &self.pack.kinds),
                })
            }
        }
    }

    pub fn suggest_next(&self) -> Result<Suggest, SessionError> {
        if self.mode != Mode::Instruction {
            return Err(SessionError::WrongMode(self.mode));
        }
        Ok(self.suggestion())
    }

    /// The current suggestion in Instruction mode, `None` otherwise.
    pub fn current_suggestion(&self) -> Option<Suggestion> {
        match self.suggest_next() {
            Ok(Suggest::Next(s)) => Some(s),
            _ => None,
        }
    }

    fn commit(&mut self, action: &Action, world: WorldState, result: TransitionResult, newly_matched: Vec<String>) -> SubmitOutcome {
        if action.verb == Affordance::Zoom {
            self.focus = Some(action.subject.clone());
        }
        self.log.push(LogEntry {
            tick: self.world.tick,
            action: action.clone(),
            result: result.clone(),
            newly_matched: newly_matched.clone(),
        });
        self.matched.extend(newly_matched.iter().cloned());
        self.world = world;
        SubmitOutcome {
            accepted: true,
            reason: None,
            result: Some(result),
            newly_matched,
            completed: self.completed(),
            logged: true,
        }
    }

    pub fn submit_action(&mut self, action: &Action) -> Result<SubmitOutcome, SessionError> {
        if self.is_finished() {
            return Err(SessionError::SessionFinished);
        }
        let registry = &self.pack.kinds;
        if self.mode == Mode::Instruction {
            let procedure = self.procedure.as_ref().expect("instruction sessions have a procedure");
            let Some(i) = procedure.next_ready(&self.matched) else {
                return Ok(self.refuse("the procedure is already completed".into()));
            };
            let step = &procedure.steps[i];
            let hint = format!("not the suggested move; {}", step.hint_text);
            if !step.matcher.matches(action, &self.world, registry) {
                return Ok(self.refuse(hint));
            }
            let (world, result) = match apply_action(&self.world, &self.pack, action) {
                Ok(t) => t,
                Err(e) => return Ok(self.refuse(format!("{e}; {}", step.hint_text))),
            };
            if !step.post_conditions_hold(action, &world) {
                return Ok(self.refuse(hint));
            }
            let id = step.id.clone();
            return Ok(self.commit(action, world, result, vec![id]));
        }

        match apply_action(&self.world, &self.pack, action) {
            Err(e) => {
                let reason = e.to_string();
                self.log.push(LogEntry {
                    tick: self.world.tick,
                    action: action.clone(),
                    result: TransitionResult::rejection(reason.clone()),
                    newly_matched: Vec::new(),
                });
                Ok(SubmitOutcome {
                    accepted: false,
                    reason: Some(reason),
                    result: None,
                    newly_matched: Vec::new(),
                    completed: self.completed(),
                    logged: true,
                })
            }
            Ok((world, result)) => {
                let newly = match (self.mode, &self.procedure) {
                    (Mode::Evaluation, Some(p)) => p
                        .match_ready(&self.matched, action, &self.world, &world, registry)
                        .map(|i| vec![p.steps[i].id.clone()])
                        .unwrap_or_default(),
                    _ => Vec::new(),
                };
                Ok(self.commit(action, world, result, newly))
            }
        }
    }

    fn refuse(&self, reason: String) -> SubmitOutcome {
        SubmitOutcome {
            accepted: false,
            reason: Some(reason),
            result: None,
            newly_matched: Vec::new(),
            completed: self.completed(),
            logged: false,
        }
    }

    fn build_report(&self) -> SessionReport {
        let evaluation = match (self.mode, &self.procedure) {
            (Mode::Evaluation, Some(p)) => Some(
                score_log(&self.initial, &self.log, p, &self.pack.kinds, self.pack.penalties())
                    .expect("a session's own log is consistent"),
            ),
            _ => None,
        };
        SessionReport {
            mode: self.mode,
            procedure_id: self.procedure.as_ref().map(|p| p.id.clone()),
            steps_matched: self.matched.len(),
            steps_total: self.procedure.as_ref().map_or(0, |p| p.steps.len()),
            action_count: self.log.len(),
            final_state_hash: self.state_hash(),
            evaluation,
        }
    }

    /// Freezes the session. Calling it again returns the same report.
    pub fn finish(&mut self) -> SessionReport {
        if self.report.is_none() {
            self.report = Some(self.build_report());
        }
        self.report.clone().expect("just set")
    }

    pub fn log_records(&self) -> Vec<LogRecord> {
        self.log.iter().map(LogRecord::from).collect()
    }

    /// Line-delimited canonical JSON, one record per line.
    pub fn export_log(&self) -> String {
        export_records(&self.log_records())
    }
}

pub fn export_records(records: &[LogRecord]) -> String {
    records
        .iter()
        .map(|r| crate::canonical::to_canonical_line(r) + "\n")
        .collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("record {index}: {reason}")]
    Inconsistent { index: usize, reason: String },
}

pub fn parse_records(text: &str) -> Result<Vec<LogRecord>, ReplayError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ReplayError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Re-executes recorded actions from `scene`, checking ticks, fired rules
/// and rejections against the record.
pub fn replay(scene: &SceneFile, pack: &ScenarioPack, records: &[LogRecord]) -> Result<WorldState, ReplayError> {
    let mut world = init_world(scene, pack).map_err(|e| ReplayError::Inconsistent {
        index: 0,
        reason: e.to_string(),
    })?;
    for (index, r) in records.iter().enumerate() {
        let fail = |reason: String| ReplayError::Inconsistent { index, reason };
        if r.tick != world.tick {
            return Err(fail(format!("tick {} where {} was expected", r.tick, world.tick)));
        }
        match (apply_action(&world, pack, &r.action), &r.rejected) {
            (Ok((next, result)), None) => {
                if result.fired_rules != r.fired_rules {
                    return Err(fail(format!(
                        "fired rules {:?} differ from recorded {:?}",
                        result.fired_rules, r.fired_rules
                    )));
                }
                world = next;
            }
            (Err(_), Some(_)) => {}
            (Ok(_), Some(_)) => return Err(fail("recorded as rejected but the engine accepts it".into())),
            (Err(e), None) => return Err(fail(format!("recorded as applied but the engine refuses it: {e}"))),
        }
    }
    Ok(world)
}

/// Snapshot of a world as a scene file referencing `pack_ref`.
pub fn world_to_scene(world: &WorldState, pack_ref: PackRef) -> SceneFile {
    SceneFile {
        format_version: SCENE_FORMAT.to_string(),
        scene_id: world.scene_id.clone(),
        pack_ref,
        zones: world.zones.clone(),
        entities: world.entities.values().cloned().collect::<Vec<Entity>>(),
    }
}
