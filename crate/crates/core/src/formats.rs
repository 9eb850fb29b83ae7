//! Scene files (`.vscene`) and scenario packs (`.vpack`).
//!
//! Input is any JSON document; unknown keys are rejected. Output is always
//! the canonical form from [`crate::canonical`]. Parsing reports the first
//! problem only, located by line/column (syntax) or by document path
//! (schema and cross-reference problems). [`validate_pack`] and
//! [`validate_scene`] list every problem.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::canonical::to_canonical_string;
use crate::domain::{
    is_identifier, validate_entity, Affordance, Entity, FeatureSpec, KindRegistry, ValueType, Violation,
    ViolationCode, Zone,
};
use crate::procedure::{EntityRef, Procedure, StepOrdering};
use crate::rules::{EffectOp, EffectValue, Rule, Target};
use crate::value::Value;

pub const SCENE_FORMAT: &str = "vlab-scene/1";
pub const PACK_FORMAT: &str = "vlab-pack/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackRef {
    pub pack_id: String,
    pub version: String,
}

impl fmt::Display for PackRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.pack_id, self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub format_version: String,
    pub scene_id: String,
    pub pack_ref: PackRef,
    pub zones: Vec<Zone>,
    pub entities: Vec<Entity>,
}

impl SceneFile {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }
}

/// Assessment penalty constants. Packs may override any of them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Penalties {
    #[serde(default = "Penalties::default_irrelevant")]
    pub irrelevant: f64,
    #[serde(default = "Penalties::default_redundant")]
    pub redundant: f64,
    #[serde(default = "Penalties::default_hazardous")]
    pub hazardous: f64,
}

impl Penalties {
    fn default_irrelevant() -> f64 {
        1.0
    }
    fn default_redundant() -> f64 {
        2.0
    }
    fn default_hazardous() -> f64 {
        5.0
    }
}

impl Default for Penalties {
    fn default() -> Self {
        Penalties {
            irrelevant: 1.0,
            redundant: 2.0,
            hazardous: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioPack {
    pub format_version: String,
    pub pack_id: String,
    pub version: String,
    pub kinds: KindRegistry,
    pub rules: Vec<Rule>,
    pub procedures: Vec<Procedure>,
    pub default_scene: SceneFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assessment: Option<Penalties>,
}

impl ScenarioPack {
    pub fn pack_ref(&self) -> PackRef {
        PackRef {
            pack_id: self.pack_id.clone(),
            version: self.version.clone(),
        }
    }

    pub fn procedure(&self, id: &str) -> Option<&Procedure> {
        self.procedures.iter().find(|p| p.id == id)
    }

    pub fn penalties(&self) -> Penalties {
        self.assessment.unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported format version \"{found}\" (expected \"{expected}\")")]
    UnsupportedVersion { found: String, expected: &'static str },
    #[error("schema error at {path}: {reason}")]
    Schema { path: String, reason: String },
    #[error("document does not validate: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

impl FormatError {
    fn from_violation(v: &Violation) -> Self {
        FormatError::Schema {
            path: if v.path.is_empty() { "(root)".into() } else { v.path.clone() },
            reason: v.message.clone(),
        }
    }
}

fn line_col(text: &[u8], offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let column = before.iter().rev().take_while(|&&b| b != b'\n').count() + 1;
    (line, column)
}

fn parse_document<T: DeserializeOwned>(bytes: &[u8], expected: &'static str) -> Result<T, FormatError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let (line, column) = line_col(bytes, e.valid_up_to());
        FormatError::Syntax {
            line,
            column,
            message: "invalid UTF-8".into(),
        }
    })?;
    let json: serde_json::Value = serde_json::from_str(text).map_err(|e| {
        let full = e.to_string();
        let message = match full.rfind(" at line ") {
            Some(i) => full[..i].to_string(),
            None => full,
        };
        FormatError::Syntax {
            line: e.line(),
            column: e.column().max(1),
            message,
        }
    })?;
    if let Some(serde_json::Value::String(found)) = json.get("format_version") {
        if found != expected {
            return Err(FormatError::UnsupportedVersion {
                found: found.clone(),
                expected,
            });
        }
    }
    serde_path_to_error::deserialize(json).map_err(|e| {
        let path = e.path().to_string();
        FormatError::Schema {
            path: if path == "." { "(root)".into() } else { path },
            reason: e.into_inner().to_string(),
        }
    })
}

/// Parses and structurally checks a scene. Kinds are not resolved here since
/// that needs the referenced pack; see [`validate_scene`].
pub fn parse_scene(bytes: &[u8]) -> Result<SceneFile, FormatError> {
    let scene = parse_scene_unchecked(bytes)?;
    match scene_structure_violations(&scene).first() {
        Some(v) => Err(FormatError::from_violation(v)),
        None => Ok(scene),
    }
}

/// Syntax and schema only.
pub fn parse_scene_unchecked(bytes: &[u8]) -> Result<SceneFile, FormatError> {
    parse_document(bytes, SCENE_FORMAT)
}

/// Parses a pack and runs full cross-reference validation.
pub fn parse_pack(bytes: &[u8]) -> Result<ScenarioPack, FormatError> {
    let pack = parse_pack_unchecked(bytes)?;
    match validate_pack(&pack).first() {
        Some(v) => Err(FormatError::from_violation(v)),
        None => Ok(pack),
    }
}

pub fn parse_pack_unchecked(bytes: &[u8]) -> Result<ScenarioPack, FormatError> {
    parse_document(bytes, PACK_FORMAT)
}

pub fn write_scene(scene: &SceneFile) -> Result<String, FormatError> {
    let violations = scene_structure_violations(scene);
    if !violations.is_empty() {
        return Err(FormatError::Invalid(violations));
    }
    Ok(to_canonical_string(scene))
}

pub fn write_pack(pack: &ScenarioPack) -> Result<String, FormatError> {
    let violations = validate_pack(pack);
    if !violations.is_empty() {
        return Err(FormatError::Invalid(violations));
    }
    Ok(to_canonical_string(pack))
}

fn v(code: ViolationCode, path: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation::new(code, path, message)
}

fn check_identifier(out: &mut Vec<Violation>, path: String, s: &str) {
    if !is_identifier(s) {
        out.push(v(ViolationCode::InvalidIdentifier, path, format!("\"{s}\" is not an identifier")));
    }
}

/// Checks that need no pack: header, identifiers, uniqueness, zone references.
pub fn scene_structure_violations(scene: &SceneFile) -> Vec<Violation> {
    let mut out = Vec::new();
    if scene.format_version != SCENE_FORMAT {
        out.push(v(
            ViolationCode::InvalidValue,
            "format_version",
            format!("expected \"{SCENE_FORMAT}\""),
        ));
    }
    check_identifier(&mut out, "scene_id".into(), &scene.scene_id);
    check_identifier(&mut out, "pack_ref.pack_id".into(), &scene.pack_ref.pack_id);
    if scene.pack_ref.version.is_empty() {
        out.push(v(ViolationCode::InvalidValue, "pack_ref.version", "version is empty"));
    }
    let mut zones = BTreeSet::new();
    for (i, zone) in scene.zones.iter().enumerate() {
        check_identifier(&mut out, format!("zones[{i}].id"), &zone.id);
        if !zones.insert(zone.id.as_str()) {
            out.push(v(
                ViolationCode::DuplicateId,
                format!("zones[{i}].id"),
                format!("zone \"{}\" is declared twice", zone.id),
            ));
        }
    }
    let mut ids = BTreeSet::new();
    for (i, e) in scene.entities.iter().enumerate() {
        check_identifier(&mut out, format!("entities[{i}].id"), &e.id);
        if !ids.insert(e.id.as_str()) {
            out.push(v(
                ViolationCode::DuplicateId,
                format!("entities[{i}].id"),
                format!("entity \"{}\" is declared twice", e.id),
            ));
        }
        if !zones.contains(e.zone.as_str()) {
            out.push(v(
                ViolationCode::UnknownZone,
                format!("entities[{i}].zone"),
                format!("zone \"{}\" is not declared in zones", e.zone),
            ));
        }
        for name in e.state.keys() {
            if crate::domain::RESERVED_FEATURES.contains(&name.as_str()) {
                out.push(v(
                    ViolationCode::ExtraFeature,
                    format!("entities[{i}].state.{name}"),
                    format!("\"{name}\" is reserved"),
                ));
            }
        }
    }
    out
}

/// Structure, pack reference and per-entity kind checks.
fn scene_core_violations(scene: &SceneFile, pack: &ScenarioPack) -> Vec<Violation> {
    let mut out = scene_structure_violations(scene);
    if scene.pack_ref != pack.pack_ref() {
        out.push(v(
            ViolationCode::PackMismatch,
            "pack_ref",
            format!(
                "scene references pack {} (version {}) but the pack is {} (version {})",
                scene.pack_ref.pack_id, scene.pack_ref.version, pack.pack_id, pack.version
            ),
        ));
    }
    for (i, e) in scene.entities.iter().enumerate() {
        let prefix = format!("entities[{i}]");
        out.extend(
            validate_entity(&pack.kinds, e)
                .into_iter()
                .filter(|x| !(x.code == ViolationCode::InvalidIdentifier && x.path == "id"))
                .map(|x| x.under(&prefix)),
        );
    }
    out
}

/// Validates a scene against a pack, including that every entity the pack's
/// rules and procedures name exists in the scene with a compatible kind.
pub fn validate_scene(scene: &SceneFile, pack: &ScenarioPack) -> Vec<Violation> {
    let mut out = scene_core_violations(scene, pack);
    for (id, origin) in pack_entity_references(pack) {
        match (scene.entity(&id), pack.default_scene.entity(&id)) {
            (None, _) => out.push(v(
                ViolationCode::UnknownEntity,
                "entities",
                format!("{origin} needs entity \"{id}\" which the scene does not define"),
            )),
            (Some(found), Some(expected)) => {
                if !pack.kinds.resolve(&found.kind).is_ok_and(|k| k.is_a(&expected.kind)) {
                    out.push(v(
                        ViolationCode::TypeMismatch,
                        "entities",
                        format!(
                            "{origin} needs entity \"{id}\" of kind {} but the scene has {}",
                            expected.kind, found.kind
                        ),
                    ));
                }
            }
            (Some(_), None) => {}
        }
    }
    out
}

/// Entity ids named by rules and procedures, with a description of where.
fn pack_entity_references(pack: &ScenarioPack) -> BTreeMap<String, String> {
    let mut refs = BTreeMap::new();
    let mut add = |id: &str, origin: String| {
        refs.entry(id.to_string()).or_insert(origin);
    };
    for rule in &pack.rules {
        let origin = format!("rule \"{}\"", rule.name);
        let targets = rule
            .conditions
            .iter()
            .map(|c| &c.target)
            .chain(rule.effects.iter().map(|e| &e.target))
            .chain(rule.effects.iter().filter_map(|e| match &e.value {
                EffectValue::Feature(r) => Some(&r.from),
                _ => None,
            }));
        for t in targets {
            if let Target::Entity(id) = t {
                add(id, origin.clone());
            }
        }
    }
    for p in &pack.procedures {
        for step in &p.steps {
            let origin = format!("step \"{}\" of procedure \"{}\"", step.id, p.id);
            for r in std::iter::once(&step.matcher.subject).chain(step.matcher.partner.iter()) {
                if let EntityRef::Id(id) = r {
                    add(id, origin.clone());
                }
            }
            for c in &step.post_conditions {
                if let Target::Entity(id) = &c.target {
                    add(id, origin.clone());
                }
            }
        }
    }
    refs
}

struct PackCtx<'a> {
    pack: &'a ScenarioPack,
    entity_kinds: BTreeMap<&'a str, &'a str>,
}

impl<'a> PackCtx<'a> {
    fn feature(&self, kind: &str, feature: &str) -> Option<&'a FeatureSpec> {
        self.pack.kinds.resolve(kind).ok()?.features.get(feature)
    }

    fn entity_kind(&self, id: &str) -> Option<&'a str> {
        self.entity_kinds.get(id).copied()
    }

    /// Looks up a feature on the kind a target denotes, reporting problems.
    fn target_feature(
        &self,
        out: &mut Vec<Violation>,
        path: &str,
        target: &Target,
        subject: Option<&str>,
        partner: Option<&str>,
        feature: &str,
        code: ViolationCode,
    ) -> Option<&'a FeatureSpec> {
        let kind = match target {
            Target::Subject => subject?.to_string(),
            Target::Partner => match partner {
                Some(k) => k.to_string(),
                None => {
                    out.push(v(code, format!("{path}.target"), "partner target without a partner"));
                    return None;
                }
            },
            Target::Entity(id) => match self.entity_kind(id) {
                Some(k) => k.to_string(),
                None => {
                    out.push(v(
                        ViolationCode::UnknownEntity,
                        format!("{path}.target"),
                        format!("entity \"{id}\" is not in default_scene"),
                    ));
                    return None;
                }
            },
        };
        let spec = self.feature(&kind, feature);
        if spec.is_none() {
            out.push(v(
                ViolationCode::UnknownFeature,
                format!("{path}.feature"),
                format!("kind {kind} has no feature \"{feature}\""),
            ));
        }
        spec
    }
}

fn numeric_fits(dst: &FeatureSpec, src: ValueType) -> bool {
    match dst.value_type {
        ValueType::Int => src == ValueType::Int,
        ValueType::Real => src.is_numeric(),
        _ => false,
    }
}

fn literal_type(value: &Value) -> Option<ValueType> {
    match value {
        Value::Int(_) => Some(ValueType::Int),
        Value::Real(_) => Some(ValueType::Real),
        _ => None,
    }
}

fn validate_rule(ctx: &PackCtx, i: usize, rule: &Rule, names: &mut BTreeSet<String>, out: &mut Vec<Violation>) {
    let path = format!("rules[{i}]");
    check_identifier(out, format!("{path}.name"), &rule.name);
    if !names.insert(rule.name.clone()) {
        out.push(v(
            ViolationCode::DuplicateId,
            format!("{path}.name"),
            format!("rule \"{}\" is declared twice", rule.name),
        ));
    }
    let registry = &ctx.pack.kinds;
    let unknown_kind = |field: &str, kind: &str| {
        v(
            ViolationCode::UnknownKind,
            format!("{path}.trigger.{field}"),
            format!("rule \"{}\" references unknown kind \"{kind}\"", rule.name),
        )
    };
    let trigger = &rule.trigger;
    let Ok(subject) = registry.resolve(&trigger.subject_kind) else {
        out.push(unknown_kind("subject_kind", &trigger.subject_kind));
        return;
    };
    if !subject.affords(trigger.verb) {
        out.push(v(
            ViolationCode::InvalidRule,
            format!("{path}.trigger.verb"),
            format!("kind {} does not afford {}", subject.name, trigger.verb),
        ));
    }
    if let Some(pk) = &trigger.partner_kind {
        if trigger.verb != Affordance::UseWith {
            out.push(v(
                ViolationCode::InvalidRule,
                format!("{path}.trigger.partner_kind"),
                "partner_kind only applies to use_with",
            ));
        }
        if registry.resolve(pk).is_err() {
            out.push(unknown_kind("partner_kind", pk));
            return;
        }
    }
    let subject_kind = Some(trigger.subject_kind.as_str());
    let partner_kind = trigger.partner_kind.as_deref();

    for (j, c) in rule.conditions.iter().enumerate() {
        let cpath = format!("{path}.conditions[{j}]");
        if let Some(spec) = ctx.target_feature(out, &cpath, &c.target, subject_kind, partner_kind, &c.feature, ViolationCode::InvalidRule) {
            if let Err(reason) = c.check_against(spec) {
                out.push(v(ViolationCode::InvalidRule, cpath, reason));
            }
        }
    }

    for (j, e) in rule.effects.iter().enumerate() {
        let epath = format!("{path}.effects[{j}]");
        let Some(spec) = ctx.target_feature(out, &epath, &e.target, subject_kind, partner_kind, &e.feature, ViolationCode::InvalidRule) else {
            continue;
        };
        let mut bad = |reason: String| out.push(v(ViolationCode::InvalidRule, format!("{epath}.value"), reason));
        if e.op == EffectOp::Add && !spec.value_type.is_numeric() {
            bad(format!("add needs a numeric feature; {} is {}", spec.name, spec.value_type.as_str()));
            continue;
        }
        match &e.value {
            EffectValue::Literal(lit) => match e.op {
                EffectOp::Set => match spec.coerce(lit) {
                    None => bad(format!("{} is {} but the effect sets {}", spec.name, spec.value_type.as_str(), lit.type_name())),
                    Some(val) => {
                        let enum_ok = spec.value_type != ValueType::Enum
                            || val.as_text().is_some_and(|s| spec.enum_values.iter().any(|x| x == s));
                        let finite = val.as_f64().is_none_or(f64::is_finite);
                        if !enum_ok || !finite {
                            bad(format!("{lit} is not a legal value of {}", spec.name));
                        }
                    }
                },
                EffectOp::Add => match literal_type(lit) {
                    Some(t) if numeric_fits(spec, t) && lit.as_f64().is_some_and(f64::is_finite) => {}
                    _ => bad(format!("cannot add {lit} to {} feature {}", spec.value_type.as_str(), spec.name)),
                },
            },
            EffectValue::Param(_) => {
                if trigger.verb != Affordance::UseWith {
                    bad("param.amount is only available to use_with rules".into());
                } else if spec.value_type != ValueType::Real {
                    bad(format!("amounts are real but {} is {}", spec.name, spec.value_type.as_str()));
                }
            }
            EffectValue::Feature(r) => {
                let mut inner = Vec::new();
                let src = ctx.target_feature(&mut inner, &format!("{epath}.value"), &r.from, subject_kind, partner_kind, &r.feature, ViolationCode::InvalidRule);
                out.append(&mut inner);
                let Some(src) = src else { continue };
                let mut bad = |reason: String| out.push(v(ViolationCode::InvalidRule, format!("{epath}.value"), reason));
                if r.negate && !src.value_type.is_numeric() {
                    bad(format!("cannot negate {} feature {}", src.value_type.as_str(), src.name));
                    continue;
                }
                let ok = match e.op {
                    EffectOp::Add => numeric_fits(spec, src.value_type),
                    EffectOp::Set => {
                        src.value_type == spec.value_type
                            && (spec.value_type != ValueType::Enum
                                || src.enum_values.iter().all(|x| spec.enum_values.contains(x)))
                            || (spec.value_type == ValueType::Real && src.value_type == ValueType::Int)
                    }
                };
                if !ok {
                    bad(format!(
                        "{} feature {} cannot feed {} feature {}",
                        src.value_type.as_str(),
                        src.name,
                        spec.value_type.as_str(),
                        spec.name
                    ));
                }
            }
        }
    }

    for (j, ev) in rule.events.iter().enumerate() {
        if ev.message.trim().is_empty() {
            out.push(v(ViolationCode::InvalidRule, format!("{path}.events[{j}].message"), "event message is empty"));
        }
    }
}

fn validate_procedure(ctx: &PackCtx, i: usize, p: &Procedure, ids: &mut BTreeSet<String>, out: &mut Vec<Violation>) {
    let path = format!("procedures[{i}]");
    check_identifier(out, format!("{path}.id"), &p.id);
    if !ids.insert(p.id.clone()) {
        out.push(v(ViolationCode::DuplicateId, format!("{path}.id"), format!("procedure \"{}\" is declared twice", p.id)));
    }
    if p.title.trim().is_empty() {
        out.push(v(ViolationCode::InvalidValue, format!("{path}.title"), "title is empty"));
    }
    if p.steps.is_empty() {
        out.push(v(ViolationCode::InvalidStep, format!("{path}.steps"), "a procedure needs at least one step"));
    }
    let registry = &ctx.pack.kinds;
    let scene = &ctx.pack.default_scene;
    let mut step_ids = BTreeSet::new();
    for (j, step) in p.steps.iter().enumerate() {
        let spath = format!("{path}.steps[{j}]");
        check_identifier(out, format!("{spath}.id"), &step.id);
        if !step_ids.insert(step.id.as_str()) {
            out.push(v(ViolationCode::DuplicateId, format!("{spath}.id"), format!("step \"{}\" is declared twice", step.id)));
        }
        if step.hint_text.trim().is_empty() {
            out.push(v(ViolationCode::InvalidValue, format!("{spath}.hint_text"), "hint_text is empty"));
        }
        let m = &step.matcher;
        let resolve_ref = |field: &str, r: &EntityRef, out: &mut Vec<Violation>| -> Option<String> {
            let rpath = format!("{spath}.matcher.{field}");
            match r {
                EntityRef::Id(id) => match ctx.entity_kind(id) {
                    Some(k) => Some(k.to_string()),
                    None => {
                        out.push(v(
                            ViolationCode::UnknownEntity,
                            rpath,
                            format!("step \"{}\" references entity \"{id}\" which default_scene does not define", step.id),
                        ));
                        None
                    }
                },
                EntityRef::Kind(k) => {
                    if registry.resolve(k).is_err() {
                        out.push(v(ViolationCode::UnknownKind, rpath, format!("step \"{}\" references unknown kind \"{k}\"", step.id)));
                        return None;
                    }
                    let any = scene
                        .entities
                        .iter()
                        .any(|e| registry.resolve(&e.kind).is_ok_and(|ek| ek.is_a(k)));
                    if !any {
                        out.push(v(ViolationCode::InvalidStep, rpath, format!("no entity of kind {k} in default_scene")));
                    }
                    Some(k.clone())
                }
            }
        };
        let subject_kind = resolve_ref("subject", &m.subject, out);
        let partner_kind = m.partner.as_ref().and_then(|r| resolve_ref("partner", r, out));
        if let Some(k) = &subject_kind {
            if registry.resolve(k).is_ok_and(|rk| !rk.affords(m.verb)) {
                out.push(v(ViolationCode::InvalidStep, format!("{spath}.matcher.verb"), format!("kind {k} does not afford {}", m.verb)));
            }
        }
        let mut bad = |field: &str, reason: &str| out.push(v(ViolationCode::InvalidStep, format!("{spath}.matcher.{field}"), reason));
        match (m.verb == Affordance::UseWith, &m.partner) {
            (true, None) => bad("partner", "use_with steps name a partner"),
            (false, Some(_)) => bad("partner", "only use_with steps name a partner"),
            _ => {}
        }
        if m.direction.is_some() && m.verb != Affordance::Rotate {
            bad("direction", "only rotate steps constrain direction");
        }
        if let Some(zone) = &m.target_zone {
            if m.verb != Affordance::Move {
                bad("target_zone", "only move steps constrain target_zone");
            } else if !scene.zones.iter().any(|z| &z.id == zone) {
                out.push(v(ViolationCode::UnknownZone, format!("{spath}.matcher.target_zone"), format!("zone \"{zone}\" is not in default_scene")));
            }
        }
        if let Some(a) = m.amount {
            if m.verb != Affordance::UseWith {
                out.push(v(ViolationCode::InvalidStep, format!("{spath}.matcher.amount"), "only use_with steps constrain amount"));
            } else if !(a.value.is_finite() && a.value >= 0.0 && a.tolerance.is_finite() && a.tolerance >= 0.0) {
                out.push(v(ViolationCode::InvalidStep, format!("{spath}.matcher.amount"), "amount and tolerance must be finite and >= 0"));
            }
        }
        for (k, c) in step.post_conditions.iter().enumerate() {
            let cpath = format!("{spath}.post_conditions[{k}]");
            if let Some(spec) = ctx.target_feature(out, &cpath, &c.target, subject_kind.as_deref(), partner_kind.as_deref(), &c.feature, ViolationCode::InvalidStep) {
                if let Err(reason) = c.check_against(spec) {
                    out.push(v(ViolationCode::InvalidStep, cpath, reason));
                }
            }
        }
        if !step.requires.is_empty() && p.ordering == StepOrdering::Total {
            out.push(v(ViolationCode::InvalidStep, format!("{spath}.requires"), "requires needs ordering \"partial\""));
        }
        for (k, r) in step.requires.iter().enumerate() {
            if p.step_index(r).is_none() {
                out.push(v(ViolationCode::UnknownStep, format!("{spath}.requires[{k}]"), format!("unknown step \"{r}\"")));
            }
        }
    }
    if p.ordering == StepOrdering::Partial {
        if let Some(cycle) = p.prerequisite_cycle() {
            out.push(v(
                ViolationCode::CyclicPrerequisites,
                format!("{path}.steps"),
                format!("cyclic prerequisites: {}", cycle.join(" -> ")),
            ));
        }
    }
}

/// Every problem with a pack, in document order: header, kinds, rules,
/// procedures, assessment, default scene.
pub fn validate_pack(pack: &ScenarioPack) -> Vec<Violation> {
    let mut out = Vec::new();
    if pack.format_version != PACK_FORMAT {
        out.push(v(ViolationCode::InvalidValue, "format_version", format!("expected \"{PACK_FORMAT}\"")));
    }
    check_identifier(&mut out, "pack_id".into(), &pack.pack_id);
    if pack.version.is_empty() {
        out.push(v(ViolationCode::InvalidValue, "version", "version is empty"));
    }
    out.extend(pack.kinds.violations());

    let ctx = PackCtx {
        pack,
        entity_kinds: pack
            .default_scene
            .entities
            .iter()
            .map(|e| (e.id.as_str(), e.kind.as_str()))
            .collect(),
    };
    let mut names = BTreeSet::new();
    for (i, rule) in pack.rules.iter().enumerate() {
        validate_rule(&ctx, i, rule, &mut names, &mut out);
    }
    let mut ids = BTreeSet::new();
    for (i, p) in pack.procedures.iter().enumerate() {
        validate_procedure(&ctx, i, p, &mut ids, &mut out);
    }
    if let Some(pen) = &pack.assessment {
        for (name, x) in [("irrelevant", pen.irrelevant), ("redundant", pen.redundant), ("hazardous", pen.hazardous)] {
            if !(x.is_finite() && x >= 0.0) {
                out.push(v(ViolationCode::InvalidValue, format!("assessment.{name}"), "penalties must be finite and >= 0"));
            }
        }
    }
    out.extend(
        scene_core_violations(&pack.default_scene, pack)
            .into_iter()
            .map(|x| x.under("default_scene")),
    );
    out
}
