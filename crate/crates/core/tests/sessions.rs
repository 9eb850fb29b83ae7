use std::sync::Arc;
use std::time::Instant;

use vlab_core::engine::{init_world, legal_actions, Action};
use vlab_core::formats::{parse_pack, parse_scene, write_scene, ScenarioPack};
use vlab_core::procedure::StepOrdering;
use vlab_core::session::{parse_records, replay, world_to_scene, Mode, Session, Suggest};
use vlab_core::testkit::{random_action, rng, walkthrough};
use vlab_core::{bundled, state_hash, Value};

fn close(world: &vlab_core::WorldState, feature: &str, want: f64) {
    match world.value("beaker", feature) {
        Some(Value::Real(x)) => assert!((x - want).abs() <= 1e-9, "{feature} = {x}"),
        other => panic!("{feature}: {other:?}"),
    }
}

#[test]
fn walkthroughs_complete_and_score_100() {
    let started = Instant::now();
    for (pack, id, limit) in [(bundled::tbe_pack(), "tbe-10x", 20), (bundled::microscopy_pack(), "microscoping", 25)] {
        let pack = Arc::new(pack);
        let steps = pack.procedure(id).unwrap().steps.len();
        let (actions, mut session) = walkthrough(pack.clone(), id);
        assert!(actions.len() <= limit, "{id}: {} actions", actions.len());
        assert_eq!(actions.len(), steps);
        assert!(session.completed());
        assert_eq!(session.suggest_next().unwrap(), Suggest::Completed);
        let ids: Vec<&str> = session.matched_steps().iter().map(String::as_str).collect();
        let all: Vec<&str> = pack.procedure(id).unwrap().steps.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, all, "every step exactly once, in order");
        let instruction_hash = session.finish().final_state_hash;

        let mut eval = Session::start_default(pack.clone(), Mode::Evaluation, Some(id)).unwrap();
        let mut eval_matched = Vec::new();
        for a in &actions {
            let out = eval.submit_action(a).unwrap();
            assert!(out.accepted);
            eval_matched.extend(out.newly_matched);
        }
        assert_eq!(eval_matched, session.matched_steps(), "mode equivalence");
        let report = eval.finish();
        assert_eq!(report.evaluation.as_ref().unwrap().score, 100);
        assert_eq!(report.final_state_hash, instruction_hash);

        let mut exp = Session::start_default(pack.clone(), Mode::Experimentation, None).unwrap();
        for a in &actions {
            assert!(exp.submit_action(a).unwrap().accepted);
        }
        let report = exp.finish();
        assert!(report.evaluation.is_none());
        assert_eq!(report.final_state_hash, instruction_hash);
    }
    assert!(started.elapsed().as_secs_f64() < 1.0, "{:?}", started.elapsed());
}

#[test]
fn tbe_end_state() {
    let (_, session) = walkthrough(Arc::new(bundled::tbe_pack()), "tbe-10x");
    let w = session.world();
    close(w, "boric_acid_g", 17.4);
    close(w, "trizma_g", 54.0);
    close(w, "volume_ml", 500.0);
    assert_eq!(w.value("beaker", "edta_added"), Some(&Value::Bool(true)));
    assert_eq!(w.value("beaker", "dissolved"), Some(&Value::Bool(true)));
}

/// At every prefix of each walkthrough, every legal action other than the
/// suggested one is refused and leaves the world as it was.
#[test]
fn instruction_mode_only_accepts_the_suggestion() {
    let started = Instant::now();
    let mut tried = 0;
    for (pack, id) in [(bundled::tbe_pack(), "tbe-10x"), (bundled::microscopy_pack(), "microscoping")] {
        let pack = Arc::new(pack);
        let (actions, _) = walkthrough(pack.clone(), id);
        let mut session = Session::start_default(pack.clone(), Mode::Instruction, Some(id)).unwrap();
        for suggested in &actions {
            for legal in legal_actions(session.world(), &pack) {
                let mut candidates = vec![legal.action.clone()];
                if legal.amount_slot {
                    let mut near = legal.action.clone();
                    near.params.amount = suggested.params.amount.map(|a| a + 10.0).or(Some(1.0));
                    candidates = vec![near];
                    if legal.action.subject == suggested.subject && legal.action.partner == suggested.partner {
                        let mut with = legal.action.clone();
                        with.params.amount = Some(suggested.params.amount.unwrap_or(1.0) * 2.0 + 3.0);
                        candidates.push(with);
                    }
                }
                for c in candidates.into_iter().filter(|c| c != suggested) {
                    let hash = session.state_hash();
                    let tick = session.world().tick;
                    let out = session.submit_action(&c).unwrap();
                    assert!(!out.accepted, "{id}: {c} accepted instead of {suggested}");
                    assert!(out.reason.is_some());
                    assert_eq!(session.state_hash(), hash);
                    assert_eq!(session.world().tick, tick);
                    tried += 1;
                }
            }
            assert!(session.submit_action(suggested).unwrap().accepted);
        }
        assert!(session.completed());
        assert!(session.log().len() == actions.len(), "refusals are not logged");
    }
    assert!(tried > 500, "{tried}");
    assert!(started.elapsed().as_secs() < 10);
}

#[test]
fn first_tbe_suggestion_is_the_scale() {
    let session = Session::start_default(Arc::new(bundled::tbe_pack()), Mode::Instruction, Some("tbe-10x")).unwrap();
    match session.suggest_next().unwrap() {
        Suggest::Next(s) => {
            assert_eq!(s.step_id, "power_scale");
            assert_eq!(s.action, Some(Action::press("scale_power")));
        }
        Suggest::Completed => panic!(),
    }
}

#[test]
fn trizma_step_matches_after_prerequisites() {
    let pack = Arc::new(bundled::tbe_pack());
    let (actions, _) = walkthrough(pack.clone(), "tbe-10x");
    let i = actions
        .iter()
        .position(|a| a.subject == "trizma_base_bottle" && a.partner.as_deref() == Some("scale"))
        .unwrap();
    let mut s = Session::start_default(pack.clone(), Mode::Evaluation, Some("tbe-10x")).unwrap();
    for a in &actions[..i] {
        s.submit_action(a).unwrap();
    }
    let out = s.submit_action(&Action::use_with("trizma_base_bottle", "scale", Some(54.0))).unwrap();
    assert_eq!(out.newly_matched, [pack.procedures[0].steps[i].id.clone()]);

    // out of order: nothing matches
    let mut s = Session::start_default(pack, Mode::Evaluation, Some("tbe-10x")).unwrap();
    let out = s.submit_action(&Action::use_with("trizma_base_bottle", "scale", Some(54.0))).unwrap();
    assert!(out.newly_matched.is_empty());
}

#[test]
fn partial_order_suggests_the_lowest_ready_step() {
    let mut pack: ScenarioPack = parse_pack(include_bytes!("fixtures/toy.vpack")).unwrap();
    let p = &mut pack.procedures[0];
    p.ordering = StepOrdering::Partial;
    p.steps[0].requires = vec!["press_c".into()];
    let pack = Arc::new(pack);
    let mut s = Session::start_default(pack, Mode::Instruction, Some("abc")).unwrap();
    let next = |s: &Session| match s.suggest_next().unwrap() {
        Suggest::Next(n) => n.step_id,
        Suggest::Completed => "done".into(),
    };
    assert_eq!(next(&s), "press_b");
    assert!(!s.submit_action(&Action::press("a")).unwrap().accepted);
    s.submit_action(&Action::press("b")).unwrap();
    assert_eq!(next(&s), "press_c");
    s.submit_action(&Action::press("c")).unwrap();
    assert_eq!(next(&s), "press_a");
    s.submit_action(&Action::press("a")).unwrap();
    assert_eq!(next(&s), "done");
}

#[test]
fn matched_steps_only_grow_and_finish_is_idempotent() {
    let pack = Arc::new(bundled::microscopy_pack());
    for seed in 0..25 {
        let mut r = rng(seed);
        let mut s = Session::start_default(pack.clone(), Mode::Evaluation, Some("microscoping")).unwrap();
        let mut prev = 0;
        for _ in 0..60 {
            let a = random_action(&mut r, s.world(), &pack);
            s.submit_action(&a).unwrap();
            assert!(s.matched_steps().len() >= prev);
            prev = s.matched_steps().len();
            if s.completed() {
                assert_eq!(prev, pack.procedures[0].steps.len());
            }
        }
        let a = s.finish();
        let b = s.finish();
        assert_eq!(a, b);
        assert!(s.submit_action(&Action::press("power_switch")).is_err());
    }
}

#[test]
fn exported_logs_replay_to_the_same_hash() {
    let pack = bundled::tbe_pack();
    let shared = Arc::new(pack.clone());
    for seed in 0..30 {
        let mut r = rng(seed);
        let mut s = Session::start_default(shared.clone(), Mode::Experimentation, None).unwrap();
        for _ in 0..50 {
            let a = random_action(&mut r, s.world(), &pack);
            s.submit_action(&a).unwrap();
        }
        let text = s.export_log();
        assert!(text.lines().all(|l| !l.is_empty() && !l.contains("  ")));
        let records = parse_records(&text).unwrap();
        let world = replay(&pack.default_scene, &pack, &records).unwrap();
        assert_eq!(state_hash(&world), s.state_hash());

        let mut tampered = records.clone();
        if let Some(rec) = tampered.iter_mut().find(|r| r.rejected.is_none() && !r.fired_rules.is_empty()) {
            rec.fired_rules.clear();
            assert!(replay(&pack.default_scene, &pack, &tampered).is_err());
        }
    }
}

#[test]
fn world_snapshots_reload_to_equal_hashes() {
    let pack = Arc::new(bundled::tbe_pack());
    let (actions, session) = walkthrough(pack.clone(), "tbe-10x");
    assert!(!actions.is_empty());
    let scene = world_to_scene(session.world(), pack.pack_ref());
    let text = write_scene(&scene).unwrap();
    let reloaded = parse_scene(text.as_bytes()).unwrap();
    let world = init_world(&reloaded, &pack).unwrap();
    assert_eq!(state_hash(&world), session.state_hash());
}
