//! Generators and helpers for tests: random valid packs and scenes, random
//! action sequences, and the Instruction-mode walkthrough.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{Affordance, Entity, FeatureSpec, KindDef, KindRegistry, ValueType, Zone};
use crate::engine::{legal_actions, Action, WorldState};
use crate::formats::{PackRef, Penalties, ScenarioPack, SceneFile, PACK_FORMAT, SCENE_FORMAT};
use crate::procedure::{AmountConstraint, EntityRef, Matcher, Procedure, Step, StepOrdering};
use crate::rules::{ActionParam, CompareOp, Condition, Effect, EffectOp, EffectValue, EventSpec, ParamRef, Rule, Severity, Target, Trigger};
use crate::session::{Mode, Session, Suggest};
use crate::value::{Num, Value};

pub use rand::SeedableRng;
pub type Rng64 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Follows every suggestion of an Instruction-mode session until completed.
/// Returns the accepted actions and the session.
pub fn walkthrough(pack: Arc<ScenarioPack>, procedure_id: &str) -> (Vec<Action>, Session) {
    let mut session = Session::start_default(pack, Mode::Instruction, Some(procedure_id)).expect("procedure exists");
    let mut actions = Vec::new();
    while let Suggest::Next(s) = session.suggest_next().expect("instruction mode") {
        let action = s.action.expect("suggestions are concrete");
        let out = session.submit_action(&action).expect("session not finished");
        assert!(out.accepted, "suggested action {action} was rejected: {:?}", out.reason);
        actions.push(action);
        assert!(actions.len() <= 10_000, "walkthrough does not terminate");
    }
    (actions, session)
}

const TEXTS: &[&str] = &["", "plain", "ünïcödé", "quote \" and \\ slash", "tab\tline\nbreak", "日本"];

fn random_real(rng: &mut Rng64, lo: f64, hi: f64) -> f64 {
    match rng.gen_range(0..5) {
        0 => lo,
        1 => hi,
        2 if lo <= 0.1 + 0.2 && 0.1 + 0.2 <= hi => 0.1 + 0.2,
        3 => (rng.gen_range(lo..=hi) * 10.0).round() / 10.0,
        _ => rng.gen_range(lo..=hi),
    }
    .clamp(lo, hi)
}

fn random_value(rng: &mut Rng64, spec: &FeatureSpec) -> Value {
    match spec.value_type {
        ValueType::Bool => Value::Bool(rng.gen()),
        ValueType::Int => {
            let (lo, hi) = spec.bounds().unwrap_or((-1000.0, 1000.0));
            Value::Int(rng.gen_range(lo as i64..=hi as i64))
        }
        ValueType::Real => {
            let (lo, hi) = spec.bounds().unwrap_or((-1e6, 1e6));
            Value::Real(random_real(rng, lo, hi))
        }
        ValueType::Enum => Value::Text(spec.enum_values.choose(rng).expect("non-empty").clone()),
        ValueType::String => Value::Text(TEXTS.choose(rng).expect("non-empty").to_string()),
    }
}

fn random_feature(rng: &mut Rng64, name: String) -> FeatureSpec {
    let mut spec = match rng.gen_range(0..5) {
        0 => FeatureSpec::bool(&name, false),
        1 => {
            let lo = rng.gen_range(-20..=5);
            let hi = lo + rng.gen_range(0..=30);
            FeatureSpec::int(&name, lo, hi, lo)
        }
        2 => {
            let lo = f64::from(rng.gen_range(-100..=0)) / 4.0;
            let hi = lo + f64::from(rng.gen_range(1..=400)) / 8.0;
            let units = ["g", "ml", "°C"].choose(rng).map(|s| s.to_string());
            let mut s = FeatureSpec::real(&name, lo, hi, lo, None);
            s.units = if rng.gen() { units } else { None };
            s
        }
        3 => {
            let all = ["low", "mid", "high", "max"];
            let n = rng.gen_range(1..=all.len());
            FeatureSpec {
                name: name.clone(),
                value_type: ValueType::Enum,
                range: None,
                units: None,
                enum_values: all[..n].iter().map(|s| s.to_string()).collect(),
                default: Value::Text(all[0].into()),
            }
        }
        _ => FeatureSpec {
            name: name.clone(),
            value_type: ValueType::String,
            range: None,
            units: None,
            enum_values: Vec::new(),
            default: Value::Text(String::new()),
        },
    };
    if rng.gen_bool(0.2) && spec.value_type == ValueType::Real {
        spec.range = None;
    }
    spec.default = random_value(rng, &spec);
    spec
}

/// Narrows an inherited numeric feature and picks a new default.
fn narrowed(rng: &mut Rng64, inherited: &FeatureSpec) -> Option<FeatureSpec> {
    let [lo, hi] = inherited.range?;
    let mut spec = inherited.clone();
    spec.range = Some(match (lo, hi) {
        (Num::Int(a), Num::Int(b)) => {
            let na = rng.gen_range(a..=b);
            [Num::Int(na), Num::Int(rng.gen_range(na..=b))]
        }
        _ => {
            let (a, b) = (lo.get(), hi.get());
            let na = ((a + (b - a) * rng.gen_range(0.0..0.5)) * 8.0).round() / 8.0;
            let na = na.clamp(a, b);
            let nb = ((b - (b - na) * rng.gen_range(0.0..0.5)) * 8.0).round() / 8.0;
            [Num::Real(na), Num::Real(nb.clamp(na, b))]
        }
    });
    spec.default = random_value(rng, &spec);
    Some(spec)
}

fn random_kinds(rng: &mut Rng64) -> KindRegistry {
    let mut defs: Vec<KindDef> = Vec::new();
    let count = rng.gen_range(1..=5);
    for i in 0..count {
        let mut parents: Vec<Option<String>> = vec![None, Some("Switch".into()), Some("Knob".into()), Some("Item".into()), Some("Plug".into())];
        parents.extend(defs.iter().map(|d| Some(d.name.clone())));
        let parent = parents.choose(rng).expect("non-empty").clone();
        let registry = KindRegistry::new(defs.clone());
        let inherited = parent
            .as_deref()
            .and_then(|p| registry.resolve(p).ok())
            .map(|k| k.features.clone())
            .unwrap_or_default();
        let mut features: Vec<FeatureSpec> = (0..rng.gen_range(0..=3))
            .map(|j| random_feature(rng, format!("f{i}_{j}")))
            .collect();
        for spec in inherited.values() {
            if rng.gen_bool(0.4) {
                if let Some(n) = narrowed(rng, spec) {
                    features.push(n);
                }
            }
        }
        let affordances: BTreeSet<Affordance> = Affordance::ALL
            .into_iter()
            .filter(|_| parent.is_none() && rng.gen_bool(0.4))
            .collect();
        defs.push(KindDef {
            name: format!("Kind{i}"),
            parent,
            is_abstract: rng.gen_bool(0.15),
            features,
            affordances,
        });
    }
    KindRegistry::new(defs)
}

fn random_entities(rng: &mut Rng64, registry: &KindRegistry, zones: &[Zone]) -> Vec<Entity> {
    let mut kinds: Vec<&str> = registry
        .names()
        .filter(|k| registry.resolve(k).is_ok_and(|r| !r.is_abstract))
        .collect();
    kinds.shuffle(rng);
    let mut out = Vec::new();
    for (n, kind) in kinds.iter().enumerate() {
        for m in 0..rng.gen_range(0..=2) {
            let resolved = registry.resolve(kind).expect("resolvable");
            let state: BTreeMap<String, Value> = resolved
                .features
                .iter()
                .map(|(name, spec)| (name.clone(), random_value(rng, spec)))
                .collect();
            out.push(Entity {
                id: format!("e{n}_{m}"),
                kind: kind.to_string(),
                zone: zones.choose(rng).expect("non-empty").id.clone(),
                state,
            });
        }
    }
    out
}

/// A random scene that validates against `pack`'s kinds (but does not have
/// to satisfy the rules' entity references).
pub fn random_scene(rng: &mut Rng64, registry: &KindRegistry, pack_ref: PackRef) -> SceneFile {
    let labels = ["Bench", "Shelf", "Fume hood", "Kühlschrank"];
    let zones: Vec<Zone> = (0..rng.gen_range(1..=3))
        .map(|i| Zone {
            id: format!("z{i}"),
            label: labels[i % labels.len()].to_string(),
        })
        .collect();
    let entities = random_entities(rng, registry, &zones);
    SceneFile {
        format_version: SCENE_FORMAT.into(),
        scene_id: format!("scene{}", rng.gen_range(0..1000)),
        pack_ref,
        zones,
        entities,
    }
}

fn features_of(registry: &KindRegistry, kind: &str) -> Vec<FeatureSpec> {
    registry
        .resolve(kind)
        .map(|k| k.features.values().cloned().collect())
        .unwrap_or_default()
}

fn random_condition(rng: &mut Rng64, target: Target, spec: &FeatureSpec) -> Condition {
    let numeric = spec.value_type.is_numeric();
    let ops = if numeric {
        &[CompareOp::Eq, CompareOp::Ne, CompareOp::Lt, CompareOp::Le, CompareOp::Gt, CompareOp::Ge][..]
    } else {
        &[CompareOp::Eq, CompareOp::Ne][..]
    };
    Condition {
        target,
        feature: spec.name.clone(),
        op: *ops.choose(rng).expect("non-empty"),
        value: random_value(rng, spec),
        tolerance: (numeric && rng.gen_bool(0.3)).then(|| f64::from(rng.gen_range(0..4)) / 4.0),
    }
}

fn random_effect(rng: &mut Rng64, target: Target, spec: &FeatureSpec, verb: Affordance) -> Effect {
    let (op, value) = match spec.value_type {
        ValueType::Int if rng.gen() => (EffectOp::Add, EffectValue::Literal(Value::Int(rng.gen_range(-3..=3)))),
        ValueType::Real if verb == Affordance::UseWith && rng.gen() => (
            EffectOp::Add,
            EffectValue::Param(ParamRef {
                param: ActionParam::Amount,
                negate: rng.gen(),
            }),
        ),
        ValueType::Real if rng.gen() => (EffectOp::Add, EffectValue::Literal(Value::Real(f64::from(rng.gen_range(-8..=8)) / 4.0))),
        _ => (EffectOp::Set, EffectValue::Literal(random_value(rng, spec))),
    };
    Effect {
        target,
        feature: spec.name.clone(),
        op,
        value,
    }
}

/// A random pack that passes `validate_pack`.
pub fn random_pack(rng: &mut Rng64) -> ScenarioPack {
    let kinds = random_kinds(rng);
    let pack_id = format!("pack{}", rng.gen_range(0..1000));
    let version = format!("{}.{}.{}", rng.gen_range(0..3), rng.gen_range(0..10), rng.gen_range(0..10));
    let pack_ref = PackRef {
        pack_id: pack_id.clone(),
        version: version.clone(),
    };
    let scene = random_scene(rng, &kinds, pack_ref);

    let afforded: Vec<(String, Affordance)> = kinds
        .names()
        .filter_map(|k| kinds.resolve(k).ok())
        .flat_map(|k| k.affordances.iter().map(move |a| (k.name.clone(), *a)).collect::<Vec<_>>())
        .collect();
    let all_kinds: Vec<String> = kinds.names().map(str::to_string).collect();
    let mut rules = Vec::new();
    if !afforded.is_empty() {
        for r in 0..rng.gen_range(0..=4) {
            let (subject_kind, verb) = afforded.choose(rng).expect("non-empty").clone();
            let partner_kind = (verb == Affordance::UseWith).then(|| all_kinds.choose(rng).expect("non-empty").clone());
            let subject_features = features_of(&kinds, &subject_kind);
            let mut conditions = Vec::new();
            let mut effects = Vec::new();
            for _ in 0..rng.gen_range(0..=2) {
                if let Some(spec) = subject_features.choose(rng) {
                    conditions.push(random_condition(rng, Target::Subject, spec));
                }
            }
            for _ in 0..rng.gen_range(0..=3) {
                let use_entity = rng.gen_bool(0.3) && !scene.entities.is_empty();
                let (target, features) = if use_entity {
                    let e = scene.entities.choose(rng).expect("non-empty");
                    (Target::Entity(e.id.clone()), features_of(&kinds, &e.kind))
                } else if let (Some(pk), true) = (&partner_kind, rng.gen()) {
                    (Target::Partner, features_of(&kinds, pk))
                } else {
                    (Target::Subject, subject_features.clone())
                };
                if let Some(spec) = features.choose(rng) {
                    effects.push(random_effect(rng, target, spec, verb));
                }
            }
            let events = (0..rng.gen_range(0..=1))
                .map(|_| EventSpec {
                    severity: if rng.gen() { Severity::Info } else { Severity::Hazard },
                    message: "{subject} did something with {amount}".into(),
                })
                .collect();
            rules.push(Rule {
                name: format!("rule{r}"),
                trigger: Trigger {
                    verb,
                    subject_kind,
                    partner_kind,
                },
                override_default: rng.gen_bool(0.2),
                conditions,
                effects,
                events,
            });
        }
    }

    let mut procedures = Vec::new();
    let actors: Vec<(&Entity, Vec<Affordance>)> = scene
        .entities
        .iter()
        .filter_map(|e| {
            let k = kinds.resolve(&e.kind).ok()?;
            let verbs: Vec<Affordance> = k.affordances.iter().copied().collect();
            (!verbs.is_empty()).then_some((e, verbs))
        })
        .collect();
    if !actors.is_empty() {
        for p in 0..rng.gen_range(0..=2) {
            let partial = rng.gen_bool(0.3);
            let mut steps: Vec<Step> = Vec::new();
            for s in 0..rng.gen_range(1..=4) {
                let (entity, verbs) = actors.choose(rng).expect("non-empty");
                let verb = *verbs.choose(rng).expect("non-empty");
                let subject = if rng.gen_bool(0.2) {
                    EntityRef::Kind(entity.kind.clone())
                } else {
                    EntityRef::Id(entity.id.clone())
                };
                let partner = (verb == Affordance::UseWith).then(|| {
                    EntityRef::Id(scene.entities.choose(rng).expect("non-empty").id.clone())
                });
                let matcher = Matcher {
                    verb,
                    subject,
                    partner,
                    direction: (verb == Affordance::Rotate && rng.gen()).then(|| {
                        if rng.gen() {
                            crate::engine::Direction::Cw
                        } else {
                            crate::engine::Direction::Ccw
                        }
                    }),
                    target_zone: (verb == Affordance::Move && rng.gen()).then(|| scene.zones.choose(rng).expect("non-empty").id.clone()),
                    amount: (verb == Affordance::UseWith && rng.gen()).then(|| AmountConstraint {
                        value: f64::from(rng.gen_range(0..400)) / 4.0,
                        tolerance: 0.1,
                    }),
                };
                let post_conditions = features_of(&kinds, &entity.kind)
                    .choose(rng)
                    .filter(|_| rng.gen())
                    .map(|spec| random_condition(rng, Target::Subject, spec))
                    .into_iter()
                    .collect();
                let requires = if partial && s > 0 {
                    steps.iter().filter(|_| rng.gen()).map(|st| st.id.clone()).collect()
                } else {
                    Vec::new()
                };
                steps.push(Step {
                    id: format!("s{s}"),
                    hint_text: format!("Step {s}: {verb} {}", entity.id),
                    matcher,
                    post_conditions,
                    requires,
                });
            }
            procedures.push(Procedure {
                id: format!("proc{p}"),
                title: format!("Procedure {p}"),
                ordering: if partial { StepOrdering::Partial } else { StepOrdering::Total },
                steps,
            });
        }
    }

    ScenarioPack {
        format_version: PACK_FORMAT.into(),
        pack_id,
        version,
        kinds,
        rules,
        procedures,
        default_scene: scene,
        assessment: rng.gen_bool(0.3).then(|| Penalties {
            irrelevant: 1.0,
            redundant: f64::from(rng.gen_range(0..5)),
            hazardous: 5.5,
        }),
    }
}

/// A random action over `world`: a legal action, with a random amount for
/// amount slots and occasionally an outright invalid action.
pub fn random_action(rng: &mut Rng64, world: &WorldState, pack: &ScenarioPack) -> Action {
    let legal = legal_actions(world, pack);
    if legal.is_empty() || rng.gen_bool(0.05) {
        let ids: Vec<&String> = world.entities.keys().collect();
        let subject = ids.choose(rng).map(|s| s.as_str()).unwrap_or("ghost");
        return Action::press(subject);
    }
    let mut pick = legal.choose(rng).expect("non-empty").clone();
    if pick.amount_slot || (pick.action.verb == Affordance::UseWith && rng.gen_bool(0.3)) {
        pick.action.params.amount = Some(f64::from(rng.gen_range(0..2000)) / 10.0);
    }
    pick.action
}
