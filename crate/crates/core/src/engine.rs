//! Deterministic world-state transitions.
//!
//! [`apply_action`] runs the built-in verb semantics (unless a matching rule
//! overrides them), then fires every rule whose trigger matches, most-derived
//! subject kind first and ties in declaration order. Every numeric write is
//! clamped to the feature's range. The function is pure: the input world is
//! never modified and a failed action returns an error with no new world.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::canonical::{sha256_hex, to_canonical_string};
use crate::domain::{Affordance, Entity, FeatureSpec, KindRegistry, ResolvedKind, Violation, Zone};
use crate::formats::{validate_scene, ScenarioPack, SceneFile};
use crate::rules::{ActionParam, Condition, EffectOp, EffectValue, Rule, Severity, Target};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub scene_id: String,
    pub zones: Vec<Zone>,
    pub entities: BTreeMap<String, Entity>,
    pub tick: u64,
}

impl WorldState {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn has_zone(&self, id: &str) -> bool {
        self.zones.iter().any(|z| z.id == id)
    }

    pub fn value(&self, entity: &str, feature: &str) -> Option<&Value> {
        self.entities.get(entity)?.state.get(feature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Cw,
    Ccw,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Cw => "cw",
            Direction::Ccw => "ccw",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amount: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_zone: Option<String>,
}

impl ActionParams {
    pub fn is_empty(&self) -> bool {
        self.direction.is_none() && self.amount.is_none() && self.target_zone.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    pub verb: Affordance,
    pub subject: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner: Option<String>,
    #[serde(default, skip_serializing_if = "ActionParams::is_empty")]
    pub params: ActionParams,
}

impl Action {
    fn bare(verb: Affordance, subject: &str) -> Self {
        Action {
            verb,
            subject: subject.to_string(),
            partner: None,
            params: ActionParams::default(),
        }
    }

    pub fn press(subject: &str) -> Self {
        Action::bare(Affordance::Press, subject)
    }

    pub fn pull(subject: &str) -> Self {
        Action::bare(Affordance::Pull, subject)
    }

    pub fn zoom(subject: &str) -> Self {
        Action::bare(Affordance::Zoom, subject)
    }

    pub fn rotate(subject: &str, direction: Direction) -> Self {
        let mut a = Action::bare(Affordance::Rotate, subject);
        a.params.direction = Some(direction);
        a
    }

    pub fn move_to(subject: &str, zone: &str) -> Self {
        let mut a = Action::bare(Affordance::Move, subject);
        a.params.target_zone = Some(zone.to_string());
        a
    }

    pub fn use_with(subject: &str, partner: &str, amount: Option<f64>) -> Self {
        let mut a = Action::bare(Affordance::UseWith, subject);
        a.partner = Some(partner.to_string());
        a.params.amount = amount;
        a
    }
}

/// Renders the terminal command form, e.g. `use boric_acid_bottle scale 17.4`.
impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.verb {
            Affordance::UseWith => {
                write!(f, "use {} {}", self.subject, self.partner.as_deref().unwrap_or("?"))?;
                if let Some(a) = self.params.amount {
                    write!(f, " {a:?}")?;
                }
                Ok(())
            }
            Affordance::Rotate => write!(
                f,
                "rotate {} {}",
                self.subject,
                self.params.direction.map(Direction::as_str).unwrap_or("?")
            ),
            Affordance::Move => write!(
                f,
                "move {} {}",
                self.subject,
                self.params.target_zone.as_deref().unwrap_or("?")
            ),
            verb => write!(f, "{} {}", verb, self.subject),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ParseActionError(String);

/// Parses the command form produced by `Display`: `press x`, `pull x`,
/// `zoom x`, `rotate x cw|ccw`, `move x zone`, `use a b [amount]`.
impl FromStr for Action {
    type Err = ParseActionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let words: Vec<&str> = s.split_whitespace().collect();
        let err = |m: &str| Err(ParseActionError(m.to_string()));
        match words.as_slice() {
            ["press", x] => Ok(Action::press(x)),
            ["pull", x] => Ok(Action::pull(x)),
            ["zoom", x] => Ok(Action::zoom(x)),
            ["rotate", x, "cw"] => Ok(Action::rotate(x, Direction::Cw)),
            ["rotate", x, "ccw"] => Ok(Action::rotate(x, Direction::Ccw)),
            ["rotate", ..] => err("usage: rotate <id> cw|ccw"),
            ["move", x, zone] => Ok(Action::move_to(x, zone)),
            ["move", ..] => err("usage: move <id> <zone>"),
            ["use" | "use_with", a, b] => Ok(Action::use_with(a, b, None)),
            ["use" | "use_with", a, b, amount] => match amount.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Action::use_with(a, b, Some(v))),
                _ => err(&format!("\"{amount}\" is not a number")),
            },
            ["use" | "use_with", ..] => err("usage: use <id> <id> [amount]"),
            [verb @ ("press" | "pull" | "zoom"), ..] => err(&format!("usage: {verb} <id>")),
            [] => err("empty command"),
            [verb, ..] => err(&format!("unknown verb \"{verb}\"")),
        }
    }
}

/// Pseudo-feature name under which zone changes appear in a state delta.
pub const ZONE_FEATURE: &str = "zone";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateChange {
    pub entity: String,
    pub feature: String,
    pub old: Value,
    pub new: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub rule: String,
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionResult {
    pub fired_rules: Vec<String>,
    pub events: Vec<Event>,
    pub state_delta: Vec<StateChange>,
    /// Set when a session logged the attempt without applying it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected: Option<String>,
}

impl TransitionResult {
    pub fn rejection(reason: impl Into<String>) -> Self {
        TransitionResult {
            rejected: Some(reason.into()),
            ..Default::default()
        }
    }

    pub fn has_hazard(&self) -> bool {
        self.events.iter().any(|e| e.severity == Severity::Hazard)
    }

    /// Replays the delta on `pre`, checking every recorded old value.
    pub fn apply_delta(&self, pre: &WorldState) -> Result<WorldState, String> {
        let mut world = pre.clone();
        for change in &self.state_delta {
            let entity = world
                .entities
                .get_mut(&change.entity)
                .ok_or_else(|| format!("delta names unknown entity {}", change.entity))?;
            if change.feature == ZONE_FEATURE {
                if change.old.as_text() != Some(entity.zone.as_str()) {
                    return Err(format!("{} is not in zone {}", change.entity, change.old));
                }
                entity.zone = change
                    .new
                    .as_text()
                    .ok_or_else(|| "zone changes carry text values".to_string())?
                    .to_string();
                continue;
            }
            let slot = entity
                .state
                .get_mut(&change.feature)
                .ok_or_else(|| format!("delta names unknown feature {}.{}", change.entity, change.feature))?;
            if *slot != change.old {
                return Err(format!(
                    "{}.{} is {} but the delta expects {}",
                    change.entity, change.feature, slot, change.old
                ));
            }
            *slot = change.new.clone();
        }
        world.tick += 1;
        Ok(world)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("unknown entity \"{0}\"")]
    UnknownEntity(String),
    #[error("unknown zone \"{0}\"")]
    UnknownZone(String),
    #[error("{entity} ({kind}) does not afford {verb}")]
    VerbNotAfforded {
        entity: String,
        kind: String,
        verb: Affordance,
    },
    #[error("{verb} requires parameter {param}")]
    MissingParam { verb: Affordance, param: &'static str },
    #[error("{verb} does not take parameter {param}")]
    UnexpectedParam { verb: Affordance, param: &'static str },
    #[error("amount must be a finite number >= 0, got {0}")]
    InvalidAmount(f64),
    #[error("{entity} is already in zone {zone}")]
    AlreadyInZone { entity: String, zone: String },
    #[error("{0} cannot be used with itself")]
    SelfUse(String),
    #[error("rule {rule} cannot write {entity}.{feature}: {reason}")]
    InvalidWrite {
        rule: String,
        entity: String,
        feature: String,
        reason: String,
    },
    #[error("scene does not validate against pack: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
}

/// Builds the initial world for a scene. The scene must validate against the
/// pack; numeric state values are normalized to their feature types.
pub fn init_world(scene: &SceneFile, pack: &ScenarioPack) -> Result<WorldState, EngineError> {
    let violations = validate_scene(scene, pack);
    if !violations.is_empty() {
        return Err(EngineError::Validation(violations));
    }
    let registry = &pack.kinds;
    let entities = scene
        .entities
        .iter()
        .map(|e| (e.id.clone(), normalize_entity(registry, e)))
        .collect();
    Ok(WorldState {
        scene_id: scene.scene_id.clone(),
        zones: scene.zones.clone(),
        entities,
        tick: 0,
    })
}

pub(crate) fn normalize_entity(registry: &KindRegistry, entity: &Entity) -> Entity {
    let mut e = entity.clone();
    if let Ok(kind) = registry.resolve(&entity.kind) {
        for (name, value) in e.state.iter_mut() {
            if let Some(coerced) = kind.features.get(name).and_then(|s| s.coerce(value)) {
                *value = coerced;
            }
        }
    }
    e
}

/// One entry of [`legal_actions`]. When `amount_slot` is set the action is a
/// template: the caller supplies `params.amount`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegalAction {
    pub action: Action,
    pub amount_slot: bool,
}

fn kind_of<'a>(world: &WorldState, registry: &'a KindRegistry, id: &str) -> Option<&'a ResolvedKind> {
    registry.resolve(&world.entities.get(id)?.kind).ok()
}

fn trigger_matches(rule: &Rule, verb: Affordance, subject: &ResolvedKind, partner: Option<&ResolvedKind>) -> bool {
    if rule.trigger.verb != verb || !subject.is_a(&rule.trigger.subject_kind) {
        return false;
    }
    match (&rule.trigger.partner_kind, partner) {
        (None, _) => true,
        (Some(k), Some(p)) => p.is_a(k),
        (Some(_), None) => false,
    }
}

/// Enumerates what can be done in `world`, ordered by subject id, verb,
/// partner id and zone id. Amounts are never enumerated.
pub fn legal_actions(world: &WorldState, pack: &ScenarioPack) -> Vec<LegalAction> {
    let registry = &pack.kinds;
    let mut out = Vec::new();
    for (id, entity) in &world.entities {
        let Ok(kind) = registry.resolve(&entity.kind) else { continue };
        for verb in kind.affordances.iter().copied() {
            match verb {
                Affordance::Press | Affordance::Pull | Affordance::Zoom => out.push(LegalAction {
                    action: Action::bare(verb, id),
                    amount_slot: false,
                }),
                Affordance::Rotate => {
                    for dir in [Direction::Cw, Direction::Ccw] {
                        out.push(LegalAction {
                            action: Action::rotate(id, dir),
                            amount_slot: false,
                        });
                    }
                }
                Affordance::Move => {
                    let mut zones: Vec<&str> = world
                        .zones
                        .iter()
                        .map(|z| z.id.as_str())
                        .filter(|z| *z != entity.zone)
                        .collect();
                    zones.sort_unstable();
                    for zone in zones {
                        out.push(LegalAction {
                            action: Action::move_to(id, zone),
                            amount_slot: false,
                        });
                    }
                }
                Affordance::UseWith => {
                    for (pid, _) in world.entities.iter().filter(|(pid, _)| *pid != id) {
                        let Some(pkind) = kind_of(world, registry, pid) else { continue };
                        let matching: Vec<&Rule> = pack
                            .rules
                            .iter()
                            .filter(|r| trigger_matches(r, verb, kind, Some(pkind)))
                            .collect();
                        if matching.is_empty() {
                            continue;
                        }
                        out.push(LegalAction {
                            action: Action::use_with(id, pid, None),
                            amount_slot: matching.iter().any(|r| r.uses_amount()),
                        });
                    }
                }
            }
        }
    }
    out
}

fn check_params(action: &Action) -> Result<(), EngineError> {
    let verb = action.verb;
    let p = &action.params;
    let missing = |param| Err(EngineError::MissingParam { verb, param });
    let unexpected = |param| Err(EngineError::UnexpectedParam { verb, param });
    let wants_partner = verb == Affordance::UseWith;
    match (wants_partner, &action.partner) {
        (true, None) => return missing("partner"),
        (false, Some(_)) => return unexpected("partner"),
        _ => {}
    }
    match (verb == Affordance::Rotate, p.direction) {
        (true, None) => return missing("direction"),
        (false, Some(_)) => return unexpected("direction"),
        _ => {}
    }
    match (verb == Affordance::Move, &p.target_zone) {
        (true, None) => return missing("target_zone"),
        (false, Some(_)) => return unexpected("target_zone"),
        _ => {}
    }
    if let Some(amount) = p.amount {
        if verb != Affordance::UseWith {
            return unexpected("amount");
        }
        if !(amount.is_finite() && amount >= 0.0) {
            return Err(EngineError::InvalidAmount(amount));
        }
    }
    Ok(())
}

/// Mutable working copy used while one action is being applied.
struct Transition<'a> {
    world: WorldState,
    registry: &'a KindRegistry,
    action: &'a Action,
    /// (entity, feature) -> value before this action, in first-write order.
    touched: Vec<((String, String), Value)>,
}

impl<'a> Transition<'a> {
    fn target_id(&self, target: &Target) -> Option<String> {
        match target {
            Target::Subject => Some(self.action.subject.clone()),
            Target::Partner => self.action.partner.clone(),
            Target::Entity(id) => Some(id.clone()),
        }
    }

    fn read(&self, target: &Target, feature: &str) -> Option<&Value> {
        let id = self.target_id(target)?;
        self.world.value(&id, feature)
    }

    fn spec(&self, entity: &str, feature: &str) -> Option<FeatureSpec> {
        let kind = kind_of(&self.world, self.registry, entity)?;
        kind.features.get(feature).cloned()
    }

    fn write(&mut self, entity: &str, feature: &str, value: Value) {
        let e = self.world.entities.get_mut(entity).expect("writes target existing entities");
        let slot = e.state.get_mut(feature).expect("writes target existing features");
        let key = (entity.to_string(), feature.to_string());
        if !self.touched.iter().any(|(k, _)| *k == key) {
            self.touched.push((key, slot.clone()));
        }
        *slot = value;
    }

    fn condition_holds(&self, c: &Condition) -> bool {
        self.read(&c.target, &c.feature).is_some_and(|v| c.holds(v))
    }

    fn builtin(&mut self) {
        let subject = self.action.subject.clone();
        let current = |w: &WorldState, f: &str| w.value(&subject, f).cloned();
        match self.action.verb {
            Affordance::Press => {
                if let Some(Value::Bool(on)) = current(&self.world, "on") {
                    self.write(&subject, "on", Value::Bool(!on));
                }
            }
            Affordance::Rotate => {
                if let (Some(Value::Int(pos)), Some(spec)) =
                    (current(&self.world, "position"), self.spec(&subject, "position"))
                {
                    let step = match self.action.params.direction {
                        Some(Direction::Ccw) => -1,
                        _ => 1,
                    };
                    let next = spec.clamp(Value::Int(pos.saturating_add(step)));
                    self.write(&subject, "position", next);
                }
            }
            Affordance::Pull => {
                if let Some(Value::Bool(_)) = current(&self.world, "connected") {
                    self.write(&subject, "connected", Value::Bool(false));
                }
            }
            Affordance::Move => {
                let zone = self.action.params.target_zone.clone().expect("checked");
                self.world.entities.get_mut(&subject).expect("checked").zone = zone;
            }
            Affordance::Zoom | Affordance::UseWith => {}
        }
    }

    fn fire(&mut self, rule: &Rule) -> Result<(), EngineError> {
        let invalid = |entity: &str, feature: &str, reason: String| EngineError::InvalidWrite {
            rule: rule.name.clone(),
            entity: entity.to_string(),
            feature: feature.to_string(),
            reason,
        };
        for effect in &rule.effects {
            let Some(entity) = self.target_id(&effect.target) else { continue };
            let Some(spec) = self.spec(&entity, &effect.feature) else {
                return Err(invalid(&entity, &effect.feature, "no such feature".into()));
            };
            let operand = match &effect.value {
                EffectValue::Literal(v) => v.clone(),
                EffectValue::Param(p) => {
                    let ActionParam::Amount = p.param;
                    let amount = self.action.params.amount.ok_or(EngineError::MissingParam {
                        verb: self.action.verb,
                        param: "amount",
                    })?;
                    Value::Real(if p.negate { -amount } else { amount })
                }
                EffectValue::Feature(r) => {
                    let v = self
                        .read(&r.from, &r.feature)
                        .cloned()
                        .ok_or_else(|| invalid(&entity, &effect.feature, format!("cannot read {}.{}", r.from, r.feature)))?;
                    if r.negate {
                        match v {
                            Value::Int(i) => Value::Int(-i),
                            Value::Real(x) => Value::Real(-x),
                            other => return Err(invalid(&entity, &effect.feature, format!("cannot negate {other}"))),
                        }
                    } else {
                        v
                    }
                }
            };
            let old = self.world.value(&entity, &effect.feature).cloned().expect("spec implies value");
            let new = match effect.op {
                EffectOp::Set => spec
                    .coerce(&operand)
                    .ok_or_else(|| invalid(&entity, &effect.feature, format!("{} does not fit {}", operand, spec.value_type.as_str())))?,
                EffectOp::Add => match (&old, &operand) {
                    (Value::Int(a), Value::Int(b)) => Value::Int(a.saturating_add(*b)),
                    (Value::Real(a), b) if b.as_f64().is_some() => Value::Real(a + b.as_f64().unwrap_or(0.0)),
                    _ => {
                        return Err(invalid(&entity, &effect.feature, format!("cannot add {operand} to {old}")));
                    }
                },
            };
            let new = spec.clamp(new);
            spec.check(&new)
                .map_err(|p| invalid(&entity, &effect.feature, spec.describe_problem(&p)))?;
            self.write(&entity, &effect.feature, new);
        }
        Ok(())
    }

    fn render(&self, template: &str) -> String {
        let amount = self
            .action
            .params
            .amount
            .map(|a| Value::Real(a).to_string())
            .unwrap_or_default();
        template
            .replace("{amount}", &amount)
            .replace("{subject}", &self.action.subject)
            .replace("{partner}", self.action.partner.as_deref().unwrap_or(""))
    }
}

pub fn apply_action(
    world: &WorldState,
    pack: &ScenarioPack,
    action: &Action,
) -> Result<(WorldState, TransitionResult), EngineError> {
    let registry = &pack.kinds;
    let subject = world
        .entity(&action.subject)
        .ok_or_else(|| EngineError::UnknownEntity(action.subject.clone()))?;
    let subject_kind = registry
        .resolve(&subject.kind)
        .map_err(|_| EngineError::UnknownEntity(action.subject.clone()))?;
    if !subject_kind.affords(action.verb) {
        return Err(EngineError::VerbNotAfforded {
            entity: subject.id.clone(),
            kind: subject.kind.clone(),
            verb: action.verb,
        });
    }
    check_params(action)?;
    let partner_kind = match &action.partner {
        Some(pid) => {
            if *pid == action.subject {
                return Err(EngineError::SelfUse(pid.clone()));
            }
            Some(kind_of(world, registry, pid).ok_or_else(|| EngineError::UnknownEntity(pid.clone()))?)
        }
        None => None,
    };
    if let Some(zone) = &action.params.target_zone {
        if !world.has_zone(zone) {
            return Err(EngineError::UnknownZone(zone.clone()));
        }
        if *zone == subject.zone {
            return Err(EngineError::AlreadyInZone {
                entity: subject.id.clone(),
                zone: zone.clone(),
            });
        }
    }

    let mut matching: Vec<(usize, usize, &Rule)> = pack
        .rules
        .iter()
        .enumerate()
        .filter(|(_, r)| trigger_matches(r, action.verb, subject_kind, partner_kind))
        .map(|(i, r)| {
            let depth = registry.resolve(&r.trigger.subject_kind).map(|k| k.depth()).unwrap_or(0);
            (depth, i, r)
        })
        .collect();
    matching.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    let old_zone = subject.zone.clone();
    let mut t = Transition {
        world: world.clone(),
        registry,
        action,
        touched: Vec::new(),
    };
    if !matching.iter().any(|(_, _, r)| r.override_default) {
        t.builtin();
    }

    let mut result = TransitionResult::default();
    for (_, _, rule) in &matching {
        if !rule.conditions.iter().all(|c| t.condition_holds(c)) {
            continue;
        }
        t.fire(rule)?;
        result.fired_rules.push(rule.name.clone());
        for spec in &rule.events {
            result.events.push(Event {
                rule: rule.name.clone(),
                severity: spec.severity,
                message: t.render(&spec.message),
            });
        }
    }

    let mut world = t.world;
    let new_zone = &world.entities[&action.subject].zone;
    if *new_zone != old_zone {
        result.state_delta.push(StateChange {
            entity: action.subject.clone(),
            feature: ZONE_FEATURE.to_string(),
            old: Value::Text(old_zone),
            new: Value::Text(new_zone.clone()),
        });
    }
    for ((entity, feature), old) in t.touched {
        let new = world.entities[&entity].state[&feature].clone();
        if new != old {
            result.state_delta.push(StateChange { entity, feature, old, new });
        }
    }
    world.tick += 1;
    Ok((world, result))
}

/// SHA-256 over the canonical serialization of the entities, sorted by id.
pub fn state_hash(world: &WorldState) -> String {
    let entities: Vec<&Entity> = world.entities.values().collect();
    sha256_hex(to_canonical_string(&entities).as_bytes())
}
