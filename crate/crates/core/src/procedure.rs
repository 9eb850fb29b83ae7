//! Training procedures: ordered steps with action matchers and post-conditions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{Affordance, KindRegistry};
use crate::engine::{Action, Direction, WorldState};
use crate::rules::{Condition, Target};

/// Slack added to amount tolerances so that values written as decimals
/// (17.5 against 17.4 ± 0.1) match the way a reader expects.
pub const AMOUNT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepOrdering {
    #[default]
    Total,
    Partial,
}

fn is_total(o: &StepOrdering) -> bool {
    *o == StepOrdering::Total
}

/// Either a specific entity id or, written `kind:<Kind>`, any entity whose
/// kind is (or derives from) that kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntityRef {
    Id(String),
    Kind(String),
}

impl EntityRef {
    pub fn matches(&self, id: &str, world: &WorldState, registry: &KindRegistry) -> bool {
        match self {
            EntityRef::Id(x) => x == id,
            EntityRef::Kind(k) => world
                .entity(id)
                .and_then(|e| registry.resolve(&e.kind).ok())
                .is_some_and(|kind| kind.is_a(k)),
        }
    }

    /// Lowest-id entity the reference can denote.
    pub fn concretize(&self, world: &WorldState, registry: &KindRegistry) -> Option<String> {
        match self {
            EntityRef::Id(x) => world.entity(x).map(|e| e.id.clone()),
            EntityRef::Kind(_) => world
                .entities
                .keys()
                .find(|id| self.matches(id, world, registry))
                .cloned(),
        }
    }
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityRef::Id(id) => f.write_str(id),
            EntityRef::Kind(k) => write!(f, "kind:{k}"),
        }
    }
}

impl Serialize for EntityRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EntityRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.strip_prefix("kind:") {
            Some("") => Err(serde::de::Error::custom("\"kind:\" needs a kind name")),
            Some(k) => Ok(EntityRef::Kind(k.to_string())),
            None if s.is_empty() => Err(serde::de::Error::custom("entity reference is empty")),
            None => Ok(EntityRef::Id(s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmountConstraint {
    pub value: f64,
    #[serde(default)]
    pub tolerance: f64,
}

impl AmountConstraint {
    pub fn accepts(&self, amount: f64) -> bool {
        (amount - self.value).abs() <= self.tolerance + AMOUNT_EPSILON
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matcher {
    pub verb: Affordance,
    pub subject: EntityRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner: Option<EntityRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_zone: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amount: Option<AmountConstraint>,
}

impl Matcher {
    pub fn matches(&self, action: &Action, world: &WorldState, registry: &KindRegistry) -> bool {
        if action.verb != self.verb || !self.subject.matches(&action.subject, world, registry) {
            return false;
        }
        match (&self.partner, &action.partner) {
            (Some(want), Some(got)) if want.matches(got, world, registry) => {}
            (None, _) => {}
            _ => return false,
        }
        if self.direction.is_some() && self.direction != action.params.direction {
            return false;
        }
        if self.target_zone.is_some() && self.target_zone != action.params.target_zone {
            return false;
        }
        match (self.amount, action.params.amount) {
            (Some(c), Some(a)) => c.accepts(a),
            (Some(_), None) => false,
            (None, _) => true,
        }
    }

    /// The concrete action a student would perform for this matcher.
    pub fn concretize(&self, world: &WorldState, registry: &KindRegistry) -> Option<Action> {
        let subject = self.subject.concretize(world, registry)?;
        let partner = match &self.partner {
            Some(p) => Some(p.concretize(world, registry)?),
            None => None,
        };
        let mut action = match self.verb {
            Affordance::Press => Action::press(&subject),
            Affordance::Pull => Action::pull(&subject),
            Affordance::Zoom => Action::zoom(&subject),
            Affordance::Rotate => Action::rotate(&subject, self.direction.unwrap_or(Direction::Cw)),
            Affordance::Move => Action::move_to(&subject, self.target_zone.as_deref()?),
            Affordance::UseWith => Action::use_with(&subject, partner.as_deref()?, None),
        };
        action.params.amount = self.amount.map(|c| c.value);
        Some(action)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub id: String,
    pub hint_text: String,
    pub matcher: Matcher,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub post_conditions: Vec<Condition>,
    /// Prerequisite step ids; only meaningful for partial ordering.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub requires: Vec<String>,
}

impl Step {
    /// Post-conditions evaluated on the world after the action's effects.
    pub fn post_conditions_hold(&self, action: &Action, after: &WorldState) -> bool {
        self.post_conditions.iter().all(|c| {
            let id = match &c.target {
                Target::Subject => Some(action.subject.as_str()),
                Target::Partner => action.partner.as_deref(),
                Target::Entity(id) => Some(id.as_str()),
            };
            id.and_then(|id| after.value(id, &c.feature))
                .is_some_and(|v| c.holds(v))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Procedure {
    pub id: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "is_total")]
    pub ordering: StepOrdering,
    pub steps: Vec<Step>,
}

impl Procedure {
    pub fn step_index(&self, id: &str) -> Option<usize> {
        self.steps.iter().position(|s| s.id == id)
    }

    pub fn prerequisites(&self, index: usize) -> Vec<usize> {
        match self.ordering {
            StepOrdering::Total => index.checked_sub(1).into_iter().collect(),
            StepOrdering::Partial => self.steps[index]
                .requires
                .iter()
                .filter_map(|r| self.step_index(r))
                .collect(),
        }
    }

    /// Unmatched steps whose prerequisites are all matched, in index order.
    pub fn ready_steps<'a>(&'a self, matched: &'a [String]) -> impl Iterator<Item = usize> + 'a {
        (0..self.steps.len()).filter(move |&i| {
            !matched.contains(&self.steps[i].id)
                && self
                    .prerequisites(i)
                    .into_iter()
                    .all(|p| matched.contains(&self.steps[p].id))
        })
    }

    pub fn next_ready(&self, matched: &[String]) -> Option<usize> {
        self.ready_steps(matched).next()
    }

    /// Earliest ready step that `action` satisfies, judged on the pre-action
    /// world for the matcher and the post-action world for post-conditions.
    pub fn match_ready(
        &self,
        matched: &[String],
        action: &Action,
        before: &WorldState,
        after: &WorldState,
        registry: &KindRegistry,
    ) -> Option<usize> {
        self.ready_steps(matched).find(|&i| {
            let step = &self.steps[i];
            step.matcher.matches(action, before, registry) && step.post_conditions_hold(action, after)
        })
    }

    /// Whether the prerequisite graph has a cycle; returns one if so.
    pub fn prerequisite_cycle(&self) -> Option<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        fn visit(p: &Procedure, i: usize, marks: &mut [Mark], stack: &mut Vec<usize>) -> Option<Vec<String>> {
            match marks[i] {
                Mark::Done => return None,
                Mark::Active => {
                    let start = stack.iter().position(|&s| s == i).unwrap_or(0);
                    let mut cycle: Vec<String> = stack[start..].iter().map(|&s| p.steps[s].id.clone()).collect();
                    cycle.push(p.steps[i].id.clone());
                    return Some(cycle);
                }
                Mark::New => {}
            }
            marks[i] = Mark::Active;
            stack.push(i);
            for req in p.prerequisites(i) {
                if let Some(c) = visit(p, req, marks, stack) {
                    return Some(c);
                }
            }
            stack.pop();
            marks[i] = Mark::Done;
            None
        }
        let mut marks = vec![Mark::New; self.steps.len()];
        (0..self.steps.len()).find_map(|i| visit(self, i, &mut marks, &mut Vec::new()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(id: &str, subject: &str, requires: &[&str]) -> Step {
        Step {
            id: id.into(),
            hint_text: format!("do {id}"),
            matcher: Matcher {
                verb: Affordance::Press,
                subject: EntityRef::Id(subject.into()),
                partner: None,
                direction: None,
                target_zone: None,
                amount: None,
            },
            post_conditions: vec![],
            requires: requires.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn entity_ref_string_forms() {
        let refs: Vec<EntityRef> = serde_json::from_str(r#"["scale","kind:Knob"]"#).unwrap();
        assert_eq!(refs, [EntityRef::Id("scale".into()), EntityRef::Kind("Knob".into())]);
        assert_eq!(serde_json::to_string(&refs).unwrap(), r#"["scale","kind:Knob"]"#);
        assert!(serde_json::from_str::<EntityRef>(r#""kind:""#).is_err());
    }

    #[test]
    fn amount_tolerance_is_inclusive() {
        let c = AmountConstraint { value: 17.4, tolerance: 0.1 };
        assert!(c.accepts(17.5));
        assert!(c.accepts(17.3));
        assert!(!c.accepts(17.51));
    }

    #[test]
    fn partial_order_readiness() {
        let p = Procedure {
            id: "p".into(),
            title: "p".into(),
            ordering: StepOrdering::Partial,
            steps: vec![step("a", "x", &[]), step("b", "y", &[]), step("c", "z", &["a", "b"])],
        };
        assert_eq!(p.ready_steps(&[]).collect::<Vec<_>>(), [0, 1]);
        assert_eq!(p.next_ready(&[]), Some(0));
        assert_eq!(p.ready_steps(&["b".into()]).collect::<Vec<_>>(), [0]);
        assert_eq!(p.ready_steps(&["a".into(), "b".into()]).collect::<Vec<_>>(), [2]);
        assert!(p.prerequisite_cycle().is_none());
    }

    #[test]
    fn total_order_readiness_and_cycles() {
        let p = Procedure {
            id: "p".into(),
            title: "p".into(),
            ordering: StepOrdering::Total,
            steps: vec![step("a", "x", &[]), step("b", "y", &[])],
        };
        assert_eq!(p.ready_steps(&[]).collect::<Vec<_>>(), [0]);
        let cyclic = Procedure {
            ordering: StepOrdering::Partial,
            steps: vec![step("a", "x", &["b"]), step("b", "y", &["a"])],
            ..p
        };
        assert_eq!(cyclic.prerequisite_cycle(), Some(vec!["a".into(), "b".into(), "a".into()]));
    }
}
