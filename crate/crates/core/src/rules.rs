//! Declarative behavior rules: trigger, conditions, effects, events.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{Affordance, FeatureSpec, ValueType};
use crate::value::Value;

/// Which entity a condition or effect addresses. `Entity` names a scene
/// entity directly; in JSON it is written `"entity:<id>"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Subject,
    Partner,
    Entity(String),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Subject => f.write_str("subject"),
            Target::Partner => f.write_str("partner"),
            Target::Entity(id) => write!(f, "entity:{id}"),
        }
    }
}

impl TryFrom<String> for Target {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        match s.as_str() {
            "subject" => Ok(Target::Subject),
            "partner" => Ok(Target::Partner),
            other => match other.strip_prefix("entity:") {
                Some(id) if !id.is_empty() => Ok(Target::Entity(id.to_string())),
                _ => Err(format!(
                    "target must be \"subject\", \"partner\" or \"entity:<id>\", found \"{other}\""
                )),
            },
        }
    }
}

impl Serialize for Target {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Target {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Target::try_from(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompareOp {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl CompareOp {
    pub fn is_ordering(self) -> bool {
        !matches!(self, CompareOp::Eq | CompareOp::Ne)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "==",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
        }
    }
}

/// A state predicate. Used in rule conditions and procedure post-conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub target: Target,
    pub feature: String,
    pub op: CompareOp,
    pub value: Value,
    /// Absolute tolerance for numeric `==` / `!=`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl Condition {
    pub fn holds(&self, actual: &Value) -> bool {
        match (actual.as_f64(), self.value.as_f64()) {
            (Some(a), Some(b)) => {
                let tol = self.tolerance.unwrap_or(0.0);
                match self.op {
                    CompareOp::Eq => (a - b).abs() <= tol,
                    CompareOp::Ne => (a - b).abs() > tol,
                    CompareOp::Lt => a < b,
                    CompareOp::Le => a <= b,
                    CompareOp::Gt => a > b,
                    CompareOp::Ge => a >= b,
                }
            }
            _ => match self.op {
                CompareOp::Eq => actual == &self.value,
                CompareOp::Ne => actual != &self.value,
                _ => false,
            },
        }
    }

    /// Static check of this predicate against the addressed feature.
    pub fn check_against(&self, spec: &FeatureSpec) -> Result<(), String> {
        if self.op.is_ordering() && !spec.value_type.is_numeric() {
            return Err(format!(
                "operator {} needs a numeric feature; {} is {}",
                self.op.symbol(),
                spec.name,
                spec.value_type.as_str()
            ));
        }
        if spec.coerce(&self.value).is_none() {
            return Err(format!(
                "{} is {} but the condition compares against {}",
                spec.name,
                spec.value_type.as_str(),
                self.value.type_name()
            ));
        }
        if spec.value_type == ValueType::Enum {
            if let Some(s) = self.value.as_text() {
                if !spec.enum_values.iter().any(|v| v == s) {
                    return Err(format!("\"{s}\" is not a value of {}", spec.name));
                }
            }
        }
        match self.tolerance {
            Some(t) if !(t.is_finite() && t >= 0.0) => Err("tolerance must be finite and >= 0".into()),
            Some(_) if !spec.value_type.is_numeric() => Err("tolerance only applies to numeric features".into()),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{} {} {}", self.target, self.feature, self.op.symbol(), self.value)?;
        if let Some(t) = self.tolerance {
            write!(f, " ±{t}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectOp {
    Set,
    Add,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionParam {
    Amount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRef {
    pub param: ActionParam,
    #[serde(default, skip_serializing_if = "crate::rules::is_false")]
    pub negate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRef {
    pub from: Target,
    pub feature: String,
    #[serde(default, skip_serializing_if = "crate::rules::is_false")]
    pub negate: bool,
}

pub(crate) fn is_false(b: &bool) -> bool {
    !*b
}

/// Right-hand side of an effect: a literal, the action's amount, or another
/// feature's current value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EffectValue {
    Literal(Value),
    Param(ParamRef),
    Feature(FeatureRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Effect {
    pub target: Target,
    pub feature: String,
    pub op: EffectOp,
    pub value: EffectValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Hazard,
}

/// An event a rule emits when it fires. `{amount}`, `{subject}` and
/// `{partner}` in the message are substituted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trigger {
    pub verb: Affordance,
    pub subject_kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner_kind: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub name: String,
    pub trigger: Trigger,
    /// Suppresses the built-in verb semantics when this rule's trigger matches.
    #[serde(default, rename = "override", skip_serializing_if = "is_false")]
    pub override_default: bool,
    #[serde(default)]
    pub conditions: Vec<Condition>,
    #[serde(default)]
    pub effects: Vec<Effect>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
}

impl Rule {
    pub fn uses_amount(&self) -> bool {
        self.effects
            .iter()
            .any(|e| matches!(e.value, EffectValue::Param(ParamRef { param: ActionParam::Amount, .. })))
    }
}
