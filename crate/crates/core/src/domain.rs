//! Entity kinds, their inheritance hierarchy, and instance validation.
//!
//! A [`KindRegistry`] always contains the built-in roots (`Switch`, `Knob`,
//! `Plug`, `Container`, `Item`) plus whatever kinds a scenario pack declares.
//! A kind inherits every feature and affordance of its parent chain. A child
//! may add features and affordances, override a feature's default, and narrow
//! its range; it may not change a feature's type or widen its range.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::value::{Num, Value};

/// Feature names with engine-defined meaning that kinds may not declare.
pub const RESERVED_FEATURES: &[&str] = &["zone"];

/// The closed verb vocabulary. There is deliberately no pick-up verb: objects
/// are moved between zones instead of being stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Affordance {
    Move,
    Press,
    Pull,
    Rotate,
    UseWith,
    Zoom,
}

impl Affordance {
    pub const ALL: [Affordance; 6] = [
        Affordance::Press,
        Affordance::Rotate,
        Affordance::Pull,
        Affordance::Zoom,
        Affordance::Move,
        Affordance::UseWith,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Affordance::Press => "press",
            Affordance::Rotate => "rotate",
            Affordance::Pull => "pull",
            Affordance::Zoom => "zoom",
            Affordance::Move => "move",
            Affordance::UseWith => "use_with",
        }
    }
}

impl fmt::Display for Affordance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown verb \"{0}\"")]
pub struct UnknownVerb(pub String);

impl FromStr for Affordance {
    type Err = UnknownVerb;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Affordance::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| UnknownVerb(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Bool,
    Int,
    Real,
    Enum,
    String,
}

impl ValueType {
    pub fn is_numeric(self) -> bool {
        matches!(self, ValueType::Int | ValueType::Real)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ValueType::Bool => "bool",
            ValueType::Int => "int",
            ValueType::Real => "real",
            ValueType::Enum => "enum",
            ValueType::String => "string",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub value_type: ValueType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[Num; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
    #[serde(default, rename = "values", skip_serializing_if = "Vec::is_empty")]
    pub enum_values: Vec<String>,
    pub default: Value,
}

impl FeatureSpec {
    pub fn bool(name: &str, default: bool) -> Self {
        FeatureSpec {
            name: name.to_string(),
            value_type: ValueType::Bool,
            range: None,
            units: None,
            enum_values: Vec::new(),
            default: Value::Bool(default),
        }
    }

    pub fn int(name: &str, min: i64, max: i64, default: i64) -> Self {
        FeatureSpec {
            name: name.to_string(),
            value_type: ValueType::Int,
            range: Some([Num::Int(min), Num::Int(max)]),
            units: None,
            enum_values: Vec::new(),
            default: Value::Int(default),
        }
    }

    pub fn real(name: &str, min: f64, max: f64, default: f64, units: Option<&str>) -> Self {
        FeatureSpec {
            name: name.to_string(),
            value_type: ValueType::Real,
            range: Some([Num::Real(min), Num::Real(max)]),
            units: units.map(str::to_string),
            enum_values: Vec::new(),
            default: Value::Real(default),
        }
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        self.range.map(|[lo, hi]| (lo.get(), hi.get()))
    }

    /// Converts a value into this feature's representation where the
    /// conversion is lossless (an integer literal for a real feature).
    pub fn coerce(&self, value: &Value) -> Option<Value> {
        match (self.value_type, value) {
            (ValueType::Bool, Value::Bool(_)) => Some(value.clone()),
            (ValueType::Int, Value::Int(_)) => Some(value.clone()),
            (ValueType::Real, Value::Real(_)) => Some(value.clone()),
            (ValueType::Real, Value::Int(i)) => Some(Value::Real(*i as f64)),
            (ValueType::Enum | ValueType::String, Value::Text(_)) => Some(value.clone()),
            _ => None,
        }
    }

    /// Checks that `value` is a legal state value for this feature.
    pub fn check(&self, value: &Value) -> Result<(), ValueProblem> {
        let Some(value) = self.coerce(value) else {
            return Err(ValueProblem::TypeMismatch {
                expected: self.value_type,
                found: value.type_name(),
            });
        };
        match &value {
            Value::Real(r) if !r.is_finite() => return Err(ValueProblem::NotFinite),
            Value::Int(_) | Value::Real(_) => {
                if let (Some((lo, hi)), Some(v)) = (self.bounds(), value.as_f64()) {
                    if v < lo || v > hi {
                        return Err(ValueProblem::OutOfRange);
                    }
                }
            }
            Value::Text(s) if self.value_type == ValueType::Enum => {
                if !self.enum_values.iter().any(|e| e == s) {
                    return Err(ValueProblem::NotInEnum);
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Clamps a numeric value into range; other values pass through.
    pub fn clamp(&self, value: Value) -> Value {
        let Some((lo, hi)) = self.bounds() else {
            return value;
        };
        match value {
            Value::Int(i) => Value::Int(i.clamp(lo as i64, hi as i64)),
            Value::Real(r) => Value::Real(r.clamp(lo, hi)),
            other => other,
        }
    }

    pub fn describe_problem(&self, problem: &ValueProblem) -> String {
        match problem {
            ValueProblem::TypeMismatch { expected, found } => {
                format!("{} expects {} but found {}", self.name, expected.as_str(), found)
            }
            ValueProblem::NotFinite => format!("{} must be finite", self.name),
            ValueProblem::OutOfRange => {
                let [lo, hi] = self.range.expect("out of range implies a range");
                format!("{} out of range [{},{}]", self.name, lo, hi)
            }
            ValueProblem::NotInEnum => format!(
                "{} must be one of [{}]",
                self.name,
                self.enum_values.join(",")
            ),
        }
    }

    fn self_check(&self) -> Result<(), String> {
        if !is_identifier(&self.name) {
            return Err("feature name is not an identifier".into());
        }
        if RESERVED_FEATURES.contains(&self.name.as_str()) {
            return Err(format!("\"{}\" is a reserved feature name", self.name));
        }
        match self.value_type {
            ValueType::Int | ValueType::Real => {
                if let Some([lo, hi]) = self.range {
                    if !(lo.get().is_finite() && hi.get().is_finite()) {
                        return Err("range bounds must be finite".into());
                    }
                    if lo.get() > hi.get() {
                        return Err(format!("range [{lo},{hi}] has min > max"));
                    }
                    if self.value_type == ValueType::Int && !(lo.is_integral() && hi.is_integral())
                    {
                        return Err("int range bounds must be integers".into());
                    }
                }
                if !self.enum_values.is_empty() {
                    return Err("only enum features list values".into());
                }
            }
            ValueType::Enum => {
                if self.range.is_some() {
                    return Err("enum features have no range".into());
                }
                if self.enum_values.is_empty() {
                    return Err("enum features need at least one value".into());
                }
                let distinct: BTreeSet<_> = self.enum_values.iter().collect();
                if distinct.len() != self.enum_values.len() {
                    return Err("enum values must be distinct".into());
                }
            }
            ValueType::Bool | ValueType::String => {
                if self.range.is_some() || !self.enum_values.is_empty() {
                    return Err(format!("{} features have no range or values", self.value_type.as_str()));
                }
            }
        }
        if self.units.is_some() && self.value_type != ValueType::Real {
            return Err("units are only annotated on real features".into());
        }
        self.check(&self.default)
            .map_err(|p| format!("default: {}", self.describe_problem(&p)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValueProblem {
    TypeMismatch { expected: ValueType, found: &'static str },
    NotFinite,
    OutOfRange,
    NotInEnum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindDef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, rename = "abstract", skip_serializing_if = "is_false")]
    pub is_abstract: bool,
    #[serde(default)]
    pub features: Vec<FeatureSpec>,
    #[serde(default)]
    pub affordances: BTreeSet<Affordance>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// A kind with its ancestor chain merged in.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedKind {
    pub name: String,
    /// The kind itself first, its root last.
    pub ancestry: Vec<String>,
    pub is_abstract: bool,
    pub features: BTreeMap<String, FeatureSpec>,
    pub affordances: BTreeSet<Affordance>,
}

impl ResolvedKind {
    /// Number of ancestors above this kind; roots have depth 0.
    pub fn depth(&self) -> usize {
        self.ancestry.len() - 1
    }

    pub fn is_a(&self, ancestor: &str) -> bool {
        self.ancestry.iter().any(|a| a == ancestor)
    }

    pub fn affords(&self, verb: Affordance) -> bool {
        self.affordances.contains(&verb)
    }

    /// The state of a fresh instance: every feature at its default.
    pub fn default_state(&self) -> BTreeMap<String, Value> {
        self.features
            .iter()
            .map(|(name, spec)| (name.clone(), spec.coerce(&spec.default).unwrap_or(spec.default.clone())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DomainError {
    #[error("unknown kind \"{0}\"")]
    UnknownKind(String),
    #[error("cyclic inheritance: {}", .0.join(" -> "))]
    CyclicInheritance(Vec<String>),
    #[error("illegal override of feature \"{feature}\" in kind \"{kind}\": {reason}")]
    IllegalOverride {
        kind: String,
        feature: String,
        reason: String,
    },
    #[error("invalid feature \"{feature}\" in kind \"{kind}\": {reason}")]
    InvalidFeature {
        kind: String,
        feature: String,
        reason: String,
    },
}

/// Immutable registry of kinds. Built-in roots are always present.
#[derive(Debug, Clone)]
pub struct KindRegistry {
    declared: Vec<KindDef>,
    defs: BTreeMap<String, KindDef>,
    resolved: BTreeMap<String, Result<Arc<ResolvedKind>, DomainError>>,
}

pub const BUILTIN_KINDS: &[&str] = &["Container", "Item", "Knob", "Plug", "Switch"];

pub fn builtin_kinds() -> Vec<KindDef> {
    use Affordance::*;
    vec![
        KindDef {
            name: "Switch".into(),
            parent: None,
            is_abstract: false,
            features: vec![FeatureSpec::bool("on", false)],
            affordances: [Press].into(),
        },
        KindDef {
            name: "Knob".into(),
            parent: None,
            is_abstract: false,
            features: vec![FeatureSpec::int("position", 0, 100, 0)],
            affordances: [Rotate].into(),
        },
        KindDef {
            name: "Plug".into(),
            parent: None,
            is_abstract: false,
            features: vec![FeatureSpec::bool("connected", false)],
            affordances: [Pull, UseWith].into(),
        },
        KindDef {
            name: "Container".into(),
            parent: None,
            is_abstract: true,
            features: Vec::new(),
            affordances: [Move, UseWith].into(),
        },
        KindDef {
            name: "Item".into(),
            parent: None,
            is_abstract: false,
            features: Vec::new(),
            affordances: [Move, UseWith, Zoom].into(),
        },
    ]
}

impl Default for KindRegistry {
    fn default() -> Self {
        KindRegistry::new(Vec::new())
    }
}

impl PartialEq for KindRegistry {
    fn eq(&self, other: &Self) -> bool {
        self.declared == other.declared
    }
}

impl KindRegistry {
    /// Builds a registry from pack-declared kinds. Resolution problems are
    /// recorded per kind and surface through [`resolve_kind`] and
    /// [`KindRegistry::violations`]; construction itself never fails.
    pub fn new(declared: Vec<KindDef>) -> Self {
        let mut defs: BTreeMap<String, KindDef> = builtin_kinds()
            .into_iter()
            .map(|k| (k.name.clone(), k))
            .collect();
        for def in &declared {
            defs.entry(def.name.clone()).or_insert_with(|| def.clone());
        }
        let resolved = defs
            .keys()
            .map(|name| (name.clone(), resolve_uncached(&defs, name).map(Arc::new)))
            .collect();
        KindRegistry {
            declared,
            defs,
            resolved,
        }
    }

    pub fn declared(&self) -> &[KindDef] {
        &self.declared
    }

    pub fn contains(&self, name: &str) -> bool {
        self.defs.contains_key(name)
    }

    pub fn def(&self, name: &str) -> Option<&KindDef> {
        self.defs.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.defs.keys().map(String::as_str)
    }

    pub fn resolve(&self, name: &str) -> Result<&ResolvedKind, DomainError> {
        match self.resolved.get(name) {
            Some(Ok(kind)) => Ok(kind),
            Some(Err(e)) => Err(e.clone()),
            None => Err(DomainError::UnknownKind(name.to_string())),
        }
    }

    /// Registry-level problems in kind-name order: duplicate or built-in
    /// redefinitions and every kind that fails to resolve.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, def) in self.declared.iter().enumerate() {
            let path = format!("kinds[{i}]");
            if !is_identifier(&def.name) {
                out.push(Violation::new(
                    ViolationCode::InvalidIdentifier,
                    format!("{path}.name"),
                    format!("\"{}\" is not an identifier", def.name),
                ));
            }
            if BUILTIN_KINDS.contains(&def.name.as_str()) {
                out.push(Violation::new(
                    ViolationCode::DuplicateId,
                    format!("{path}.name"),
                    format!("kind \"{}\" redefines a built-in root", def.name),
                ));
            } else if !seen.insert(def.name.as_str()) {
                out.push(Violation::new(
                    ViolationCode::DuplicateId,
                    format!("{path}.name"),
                    format!("kind \"{}\" is declared twice", def.name),
                ));
            }
        }
        for (name, res) in &self.resolved {
            if let Err(e) = res {
                let path = self
                    .declared
                    .iter()
                    .position(|d| &d.name == name)
                    .map(|i| format!("kinds[{i}]"))
                    .unwrap_or_else(|| format!("kinds.{name}"));
                out.push(Violation::from_domain(path, e));
            }
        }
        out
    }
}

impl From<Vec<KindDef>> for KindRegistry {
    fn from(v: Vec<KindDef>) -> Self {
        KindRegistry::new(v)
    }
}

impl From<KindRegistry> for Vec<KindDef> {
    fn from(r: KindRegistry) -> Self {
        r.declared
    }
}

impl Serialize for KindRegistry {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.declared.serialize(s)
    }
}

impl<'de> Deserialize<'de> for KindRegistry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Vec::<KindDef>::deserialize(d).map(KindRegistry::new)
    }
}

fn resolve_uncached(defs: &BTreeMap<String, KindDef>, name: &str) -> Result<ResolvedKind, DomainError> {
    // Walk up to the root, watching for cycles.
    let mut chain: Vec<&KindDef> = Vec::new();
    let mut cursor = Some(name);
    while let Some(current) = cursor {
        let def = defs
            .get(current)
            .ok_or_else(|| DomainError::UnknownKind(current.to_string()))?;
        if let Some(pos) = chain.iter().position(|d| d.name == current) {
            let mut cycle: Vec<String> = chain[pos..].iter().map(|d| d.name.clone()).collect();
            cycle.push(current.to_string());
            return Err(DomainError::CyclicInheritance(cycle));
        }
        chain.push(def);
        cursor = def.parent.as_deref();
    }

    let mut features: BTreeMap<String, FeatureSpec> = BTreeMap::new();
    let mut affordances = BTreeSet::new();
    for def in chain.iter().rev() {
        let mut own = BTreeSet::new();
        for spec in &def.features {
            if !own.insert(spec.name.as_str()) {
                return Err(DomainError::InvalidFeature {
                    kind: def.name.clone(),
                    feature: spec.name.clone(),
                    reason: "declared twice in the same kind".into(),
                });
            }
            let merged = match features.get(&spec.name) {
                Some(inherited) => merge_override(&def.name, inherited, spec)?,
                None => spec.clone(),
            };
            merged.self_check().map_err(|reason| DomainError::InvalidFeature {
                kind: def.name.clone(),
                feature: spec.name.clone(),
                reason,
            })?;
            features.insert(spec.name.clone(), merged);
        }
        affordances.extend(def.affordances.iter().copied());
    }

    Ok(ResolvedKind {
        name: name.to_string(),
        ancestry: chain.iter().map(|d| d.name.clone()).collect(),
        is_abstract: chain[0].is_abstract,
        features,
        affordances,
    })
}

fn merge_override(kind: &str, inherited: &FeatureSpec, child: &FeatureSpec) -> Result<FeatureSpec, DomainError> {
    let illegal = |reason: String| DomainError::IllegalOverride {
        kind: kind.to_string(),
        feature: child.name.clone(),
        reason,
    };
    if inherited.value_type != child.value_type {
        return Err(illegal(format!(
            "type changes from {} to {}",
            inherited.value_type.as_str(),
            child.value_type.as_str()
        )));
    }
    let range = match (inherited.range, child.range) {
        (Some(outer), Some(inner)) => {
            if inner[0].get() < outer[0].get() || inner[1].get() > outer[1].get() {
                return Err(illegal(format!(
                    "range [{},{}] widens inherited [{},{}]",
                    inner[0], inner[1], outer[0], outer[1]
                )));
            }
            Some(inner)
        }
        (None, inner) => inner,
        (outer, None) => outer,
    };
    let enum_values = if child.enum_values.is_empty() {
        inherited.enum_values.clone()
    } else {
        if let Some(extra) = child.enum_values.iter().find(|v| !inherited.enum_values.contains(v)) {
            return Err(illegal(format!("enum value \"{extra}\" is not inherited")));
        }
        child.enum_values.clone()
    };
    Ok(FeatureSpec {
        name: child.name.clone(),
        value_type: child.value_type,
        range,
        units: child.units.clone().or_else(|| inherited.units.clone()),
        enum_values,
        default: child.default.clone(),
    })
}

/// Returns the flattened kind: all inherited features and affordances merged,
/// child overrides applied, features ordered by name.
pub fn resolve_kind(registry: &KindRegistry, name: &str) -> Result<ResolvedKind, DomainError> {
    registry.resolve(name).cloned()
}

/// Reflexive ancestor test along the parent chain.
pub fn kind_is_a(registry: &KindRegistry, name: &str, ancestor: &str) -> Result<bool, DomainError> {
    if !registry.contains(ancestor) {
        return Err(DomainError::UnknownKind(ancestor.to_string()));
    }
    Ok(registry.resolve(name)?.is_a(ancestor))
}

/// Identifiers: an ASCII letter or underscore, then letters, digits, `_`, `-` or `.`.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    s.len() <= 128 && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Zone {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entity {
    pub id: String,
    pub kind: String,
    pub zone: String,
    pub state: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    UnknownKind,
    CyclicInheritance,
    IllegalOverride,
    InvalidFeature,
    AbstractKind,
    MissingFeature,
    ExtraFeature,
    TypeMismatch,
    OutOfRange,
    InvalidValue,
    InvalidIdentifier,
    DuplicateId,
    UnknownZone,
    UnknownEntity,
    UnknownFeature,
    UnknownStep,
    CyclicPrerequisites,
    InvalidRule,
    InvalidStep,
    PackMismatch,
}

/// One validation finding. Violations are data, not failures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(code: ViolationCode, path: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            code,
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn from_domain(path: impl Into<String>, err: &DomainError) -> Self {
        let code = match err {
            DomainError::UnknownKind(_) => ViolationCode::UnknownKind,
            DomainError::CyclicInheritance(_) => ViolationCode::CyclicInheritance,
            DomainError::IllegalOverride { .. } => ViolationCode::IllegalOverride,
            DomainError::InvalidFeature { .. } => ViolationCode::InvalidFeature,
        };
        Violation::new(code, path, err.to_string())
    }

    pub fn under(mut self, prefix: &str) -> Self {
        self.path = if self.path.is_empty() {
            prefix.to_string()
        } else {
            format!("{prefix}.{}", self.path)
        };
        self
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Checks one entity against its kind. Kind problems come first, then state
/// problems ordered by feature name. Paths are relative to the entity.
pub fn validate_entity(registry: &KindRegistry, entity: &Entity) -> Vec<Violation> {
    let mut out = Vec::new();
    if !is_identifier(&entity.id) {
        out.push(Violation::new(
            ViolationCode::InvalidIdentifier,
            "id",
            format!("\"{}\" is not an identifier", entity.id),
        ));
    }
    let kind = match registry.resolve(&entity.kind) {
        Ok(kind) => kind,
        Err(e) => {
            out.push(Violation::from_domain("kind", &e));
            return out;
        }
    };
    if kind.is_abstract {
        out.push(Violation::new(
            ViolationCode::AbstractKind,
            "kind",
            format!("kind \"{}\" is abstract and cannot be instantiated", kind.name),
        ));
    }
    let names: BTreeSet<&String> = kind.features.keys().chain(entity.state.keys()).collect();
    for name in names {
        let path = format!("state.{name}");
        match (kind.features.get(name), entity.state.get(name)) {
            (Some(_), None) => out.push(Violation::new(
                ViolationCode::MissingFeature,
                path,
                format!("missing feature {name}"),
            )),
            (None, Some(_)) => out.push(Violation::new(
                ViolationCode::ExtraFeature,
                path,
                format!("feature {name} is not defined by kind \"{}\"", kind.name),
            )),
            (Some(spec), Some(value)) => {
                if let Err(problem) = spec.check(value) {
                    let code = match problem {
                        ValueProblem::TypeMismatch { .. } => ViolationCode::TypeMismatch,
                        ValueProblem::OutOfRange => ViolationCode::OutOfRange,
                        ValueProblem::NotFinite | ValueProblem::NotInEnum => ViolationCode::InvalidValue,
                    };
                    out.push(Violation::new(code, path, spec.describe_problem(&problem)));
                }
            }
            (None, None) => unreachable!(),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn light_knob_registry() -> KindRegistry {
        KindRegistry::new(vec![
            KindDef {
                name: "LightIntensityKnob".into(),
                parent: Some("Knob".into()),
                is_abstract: false,
                features: vec![FeatureSpec::int("position", 1, 100, 1)],
                affordances: BTreeSet::new(),
            },
            KindDef {
                name: "PhotonicMicroscope_LightIntensityKnob".into(),
                parent: Some("LightIntensityKnob".into()),
                is_abstract: false,
                features: vec![FeatureSpec::int("position", 1, 24, 1)],
                affordances: BTreeSet::new(),
            },
        ])
    }

    #[test]
    fn grandchild_inherits_rotate_and_narrowed_position() {
        let reg = light_knob_registry();
        let k = resolve_kind(&reg, "PhotonicMicroscope_LightIntensityKnob").unwrap();
        let pos = &k.features["position"];
        assert_eq!(pos.value_type, ValueType::Int);
        assert_eq!(pos.bounds(), Some((1.0, 24.0)));
        assert!(k.affords(Affordance::Rotate));
        assert_eq!(
            k.ancestry,
            ["PhotonicMicroscope_LightIntensityKnob", "LightIntensityKnob", "Knob"]
        );
    }

    #[test]
    fn root_resolves_to_its_own_definition() {
        let reg = KindRegistry::default();
        let k = resolve_kind(&reg, "Knob").unwrap();
        let def = builtin_kinds().into_iter().find(|d| d.name == "Knob").unwrap();
        assert_eq!(k.features.values().cloned().collect::<Vec<_>>(), def.features);
        assert_eq!(k.affordances, def.affordances);
        assert_eq!(k.depth(), 0);
    }

    #[test]
    fn two_level_narrowing() {
        let reg = KindRegistry::new(vec![
            KindDef {
                name: "BaseKnob".into(),
                parent: None,
                is_abstract: false,
                features: vec![FeatureSpec::int("position", 1, 24, 1)],
                affordances: [Affordance::Rotate].into(),
            },
            KindDef {
                name: "LightIntensityKnob".into(),
                parent: Some("BaseKnob".into()),
                is_abstract: false,
                features: vec![FeatureSpec::int("position", 1, 10, 1)],
                affordances: BTreeSet::new(),
            },
        ]);
        let k = resolve_kind(&reg, "LightIntensityKnob").unwrap();
        assert_eq!(k.features["position"].bounds(), Some((1.0, 10.0)));
    }

    #[test]
    fn widening_and_type_change_are_illegal() {
        let widen = KindRegistry::new(vec![KindDef {
            name: "Wide".into(),
            parent: Some("Knob".into()),
            is_abstract: false,
            features: vec![FeatureSpec::int("position", -5, 100, 0)],
            affordances: BTreeSet::new(),
        }]);
        assert!(matches!(
            resolve_kind(&widen, "Wide"),
            Err(DomainError::IllegalOverride { .. })
        ));
        let retype = KindRegistry::new(vec![KindDef {
            name: "Retype".into(),
            parent: Some("Switch".into()),
            is_abstract: false,
            features: vec![FeatureSpec::int("on", 0, 1, 0)],
            affordances: BTreeSet::new(),
        }]);
        assert!(matches!(
            resolve_kind(&retype, "Retype"),
            Err(DomainError::IllegalOverride { .. })
        ));
    }

    #[test]
    fn cycles_and_unknown_parents() {
        let reg = KindRegistry::new(vec![
            KindDef {
                name: "A".into(),
                parent: Some("B".into()),
                is_abstract: false,
                features: vec![],
                affordances: BTreeSet::new(),
            },
            KindDef {
                name: "B".into(),
                parent: Some("A".into()),
                is_abstract: false,
                features: vec![],
                affordances: BTreeSet::new(),
            },
            KindDef {
                name: "Orphan".into(),
                parent: Some("Nowhere".into()),
                is_abstract: false,
                features: vec![],
                affordances: BTreeSet::new(),
            },
        ]);
        assert_eq!(
            resolve_kind(&reg, "A"),
            Err(DomainError::CyclicInheritance(vec!["A".into(), "B".into(), "A".into()]))
        );
        assert_eq!(
            resolve_kind(&reg, "Orphan"),
            Err(DomainError::UnknownKind("Nowhere".into()))
        );
        assert_eq!(
            resolve_kind(&reg, "Missing"),
            Err(DomainError::UnknownKind("Missing".into()))
        );
        let codes: Vec<_> = reg.violations().into_iter().map(|v| v.code).collect();
        assert_eq!(
            codes,
            [
                ViolationCode::CyclicInheritance,
                ViolationCode::CyclicInheritance,
                ViolationCode::UnknownKind
            ]
        );
    }

    #[test]
    fn is_a_relation() {
        let reg = light_knob_registry();
        assert!(kind_is_a(&reg, "PhotonicMicroscope_LightIntensityKnob", "Knob").unwrap());
        assert!(!kind_is_a(&reg, "Knob", "Switch").unwrap());
        for name in reg.names() {
            assert!(kind_is_a(&reg, name, name).unwrap());
        }
        assert!(matches!(
            kind_is_a(&reg, "Knob", "Nope"),
            Err(DomainError::UnknownKind(_))
        ));
    }

    #[test]
    fn entity_validation() {
        let reg = light_knob_registry();
        let mut e = Entity {
            id: "light_knob".into(),
            kind: "PhotonicMicroscope_LightIntensityKnob".into(),
            zone: "bench".into(),
            state: [("position".to_string(), Value::Int(25))].into(),
        };
        let v = validate_entity(&reg, &e);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].message, "position out of range [1,24]");
        assert_eq!(v[0].code, ViolationCode::OutOfRange);

        e.state.insert("position".into(), Value::Int(12));
        assert!(validate_entity(&reg, &e).is_empty());

        e.state.remove("position");
        e.state.insert("colour".into(), Value::Text("red".into()));
        let v = validate_entity(&reg, &e);
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].code, ViolationCode::ExtraFeature);
        assert_eq!(v[1].code, ViolationCode::MissingFeature);
    }

    #[test]
    fn abstract_kinds_cannot_be_instantiated() {
        let reg = KindRegistry::default();
        let e = Entity {
            id: "c".into(),
            kind: "Container".into(),
            zone: "z".into(),
            state: BTreeMap::new(),
        };
        let v = validate_entity(&reg, &e);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].code, ViolationCode::AbstractKind);
    }

    #[test]
    fn verbs_parse_and_pickup_does_not() {
        for verb in Affordance::ALL {
            assert_eq!(verb.as_str().parse::<Affordance>().unwrap(), verb);
        }
        assert!("pickup".parse::<Affordance>().is_err());
        assert!("pick_up".parse::<Affordance>().is_err());
    }
}
