use proptest::prelude::*;
use vlab_core::canonical::to_canonical_string;
use vlab_core::domain::ViolationCode;
use vlab_core::formats::{
    parse_pack, parse_pack_unchecked, parse_scene, validate_pack, validate_scene, write_pack, write_scene, FormatError,
};
use vlab_core::procedure::EntityRef;
use vlab_core::testkit::{random_pack, rng};
use vlab_core::{bundled, Value};

const TBE_SCENE: &str = include_str!("fixtures/tbe-bench.vscene");
const REALS_SCENE: &str = include_str!("fixtures/reals.vscene");

#[test]
fn golden_files_are_fixed_points() {
    for text in [TBE_SCENE, REALS_SCENE] {
        let scene = parse_scene(text.as_bytes()).unwrap();
        assert_eq!(write_scene(&scene).unwrap(), text);
    }
    for (_, text) in bundled::ALL {
        let pack = parse_pack(text.as_bytes()).unwrap();
        assert_eq!(write_pack(&pack).unwrap(), *text);
    }
}

#[test]
fn reals_keep_their_shortest_form() {
    let scene = parse_scene(REALS_SCENE.as_bytes()).unwrap();
    let state = &scene.entities[0].state;
    assert_eq!(state["mass_g"], Value::Real(0.1 + 0.2));
    assert_eq!(state["tiny"], Value::Real(1e-7));
    let out = write_scene(&scene).unwrap();
    assert!(out.contains("\"mass_g\": 0.30000000000000004,"));
    assert_eq!(write_scene(&parse_scene(out.as_bytes()).unwrap()).unwrap(), out);
}

#[test]
fn bundled_tbe_scene_has_the_instruments() {
    let scene = parse_scene(TBE_SCENE.as_bytes()).unwrap();
    let kinds: Vec<&str> = scene.entities.iter().map(|e| e.kind.as_str()).collect();
    for k in ["ElectronicScale", "MagneticStirrer", "BoricAcidBottle", "TrizmaBaseBottle"] {
        assert!(kinds.contains(&k), "{k} missing");
    }
    assert_eq!(scene, bundled::tbe_pack().default_scene);
}

#[test]
fn bundled_packs_validate_clean() {
    for pack in bundled::all_packs() {
        assert!(validate_pack(&pack).is_empty(), "{}", pack.pack_id);
        assert!(validate_scene(&pack.default_scene, &pack).is_empty());
    }
    let micro = bundled::microscopy_pack();
    assert_eq!(micro.procedures[0].title, "microscoping of a test specimen");
    let tbe = bundled::tbe_pack();
    assert_eq!(tbe.procedures[0].title, "preparation of 500ml of 10X TBE water solution");
}

#[test]
fn key_order_does_not_change_output() {
    // The same document with reversed object keys at every level.
    fn reverse(v: &serde_json::Value) -> String {
        match v {
            serde_json::Value::Object(m) => {
                let mut keys: Vec<&String> = m.keys().collect();
                keys.sort();
                keys.reverse();
                let body: Vec<String> = keys
                    .iter()
                    .map(|k| format!("{}:{}", serde_json::to_string(k).unwrap(), reverse(&m[*k])))
                    .collect();
                format!("{{{}}}", body.join(","))
            }
            serde_json::Value::Array(a) => format!("[{}]", a.iter().map(reverse).collect::<Vec<_>>().join(",")),
            other => other.to_string(),
        }
    }
    let json: serde_json::Value = serde_json::from_str(TBE_SCENE).unwrap();
    let shuffled = reverse(&json);
    assert_ne!(shuffled, TBE_SCENE);
    let a = write_scene(&parse_scene(TBE_SCENE.as_bytes()).unwrap()).unwrap();
    let b = write_scene(&parse_scene(shuffled.as_bytes()).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn generated_packs_round_trip() {
    for seed in 0..150 {
        let pack = random_pack(&mut rng(seed));
        let violations = validate_pack(&pack);
        assert!(violations.is_empty(), "seed {seed}: {violations:?}");
        let text = write_pack(&pack).unwrap();
        let back = parse_pack(text.as_bytes()).unwrap();
        assert_eq!(back, pack, "seed {seed}: structural identity");
        assert_eq!(write_pack(&back).unwrap(), text, "seed {seed}: byte idempotence");

        let scene_text = write_scene(&pack.default_scene).unwrap();
        let scene = parse_scene(scene_text.as_bytes()).unwrap();
        assert_eq!(scene, pack.default_scene);
        assert_eq!(write_scene(&scene).unwrap(), scene_text);
    }
}

#[test]
fn canonical_matches_sort_keys_oracle() {
    // Oracle: serde_json's own pretty printer over a BTreeMap-backed value
    // sorts keys; without `preserve_order` its maps are sorted already.
    for seed in 0..30 {
        let pack = random_pack(&mut rng(1000 + seed));
        let value = serde_json::to_value(&pack).unwrap();
        let oracle = serde_json::to_string_pretty(&value).unwrap() + "\n";
        assert_eq!(to_canonical_string(&pack), oracle);
    }
}

#[test]
fn minimal_pack_without_rules_or_procedures() {
    let text = r#"{"format_version":"vlab-pack/1","pack_id":"empty","version":"0",
        "kinds":[],"rules":[],"procedures":[],
        "default_scene":{"format_version":"vlab-scene/1","scene_id":"s",
          "pack_ref":{"pack_id":"empty","version":"0"},"zones":[],"entities":[]}}"#;
    let pack = parse_pack(text.as_bytes()).unwrap();
    assert!(pack.rules.is_empty() && pack.procedures.is_empty());
}

#[test]
fn rule_with_unknown_kind_names_rule_and_kind() {
    let mut pack = bundled::tbe_pack();
    pack.rules[0].trigger.subject_kind = "Centrifuge".into();
    let name = pack.rules[0].name.clone();
    let text = to_canonical_string(&pack);
    match parse_pack(text.as_bytes()) {
        Err(FormatError::Schema { path, reason }) => {
            assert_eq!(path, "rules[0].trigger.subject_kind");
            assert!(reason.contains(&name) && reason.contains("Centrifuge"), "{reason}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn step_with_missing_entity_is_one_violation() {
    let mut pack = bundled::tbe_pack();
    pack.procedures[0].steps[4].matcher.subject = EntityRef::Id("centrifuge".into());
    let violations = validate_pack(&pack);
    assert_eq!(violations.len(), 1, "{violations:?}");
    assert_eq!(violations[0].code, ViolationCode::UnknownEntity);
    assert_eq!(violations[0].path, "procedures[0].steps[4].matcher.subject");
}

#[test]
fn kind_cycle_is_reported() {
    let text = r#"{"format_version":"vlab-pack/1","pack_id":"cyc","version":"0",
        "kinds":[{"name":"A","parent":"B"},{"name":"B","parent":"A"}],"rules":[],"procedures":[],
        "default_scene":{"format_version":"vlab-scene/1","scene_id":"s",
          "pack_ref":{"pack_id":"cyc","version":"0"},"zones":[],"entities":[]}}"#;
    let pack = parse_pack_unchecked(text.as_bytes()).unwrap();
    let codes: Vec<_> = validate_pack(&pack).into_iter().map(|v| v.code).collect();
    assert!(codes.contains(&ViolationCode::CyclicInheritance), "{codes:?}");
    assert!(parse_pack(text.as_bytes()).is_err());
}

#[test]
fn validation_order_is_deterministic() {
    let mut pack = bundled::microscopy_pack();
    pack.procedures[0].steps[3].matcher.subject = EntityRef::Id("ghost".into());
    pack.rules[2].trigger.subject_kind = "Ghost".into();
    pack.default_scene.entities[0].zone = "attic".into();
    let a = validate_pack(&pack);
    let b = validate_pack(&pack.clone());
    assert_eq!(a, b);
    let paths: Vec<&str> = a.iter().map(|v| v.path.as_str()).collect();
    assert_eq!(paths, ["rules[2].trigger.subject_kind", "procedures[0].steps[3].matcher.subject", "default_scene.entities[0].zone"]);
}

/// Every single-byte corruption of a golden file either parses (possibly
/// to a different but valid document) or yields exactly one located error.
#[test]
fn corruptions_fail_with_a_located_error() {
    let bytes = TBE_SCENE.as_bytes();
    let original = parse_scene(bytes).unwrap();
    let replacements = [b' ', b'x', b'"', b'{', b'9', b',', 0xff];
    let mut unchanged = 0;
    for pos in (0..bytes.len()).step_by(7) {
        for &r in &replacements {
            if bytes[pos] == r {
                continue;
            }
            let mut corrupt = bytes.to_vec();
            corrupt[pos] = r;
            match parse_scene(&corrupt) {
                Ok(scene) if scene == original => unchanged += 1,
                Ok(_) => {}
                Err(FormatError::Syntax { line, column, .. }) => assert!(line >= 1 && column >= 1),
                Err(FormatError::Schema { path, .. }) => assert!(!path.is_empty()),
                Err(FormatError::UnsupportedVersion { .. }) => {}
                Err(FormatError::Invalid(v)) => panic!("parse never reports a list: {v:?}"),
            }
        }
    }
    assert!(unchanged > 0, "whitespace replacements keep the structure");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reals_round_trip_bit_exact(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        let mut scene = parse_scene(REALS_SCENE.as_bytes()).unwrap();
        scene.entities[0].state.insert("mass_g".into(), Value::Real(x));
        let text = write_scene(&scene).unwrap();
        let back = parse_scene(text.as_bytes()).unwrap();
        match &back.entities[0].state["mass_g"] {
            Value::Real(y) => prop_assert_eq!(y.to_bits(), x.to_bits()),
            other => prop_assert!(false, "{:?}", other),
        }
        prop_assert_eq!(write_scene(&back).unwrap(), text);
    }

    #[test]
    fn generated_pack_seeds_round_trip(seed in any::<u64>()) {
        let pack = random_pack(&mut rng(seed));
        prop_assert!(validate_pack(&pack).is_empty());
        let text = write_pack(&pack).unwrap();
        prop_assert_eq!(parse_pack(text.as_bytes()).unwrap(), pack);
    }
}
