//! Acceptance checks. Each criterion prints one PASS/FAIL line; the binary
//! exits non-zero if any fails.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};
use vlab_core::assessment::{classify_action, score_log, Cursor};
use vlab_core::engine::{apply_action, init_world, legal_actions, Action, Direction, WorldState};
use vlab_core::formats::{parse_pack, parse_scene, validate_pack, write_pack, write_scene, Penalties, ScenarioPack};
use vlab_core::session::{parse_records, replay, LogEntry, Mode, Session, Suggest};
use vlab_core::testkit::{random_action, random_pack, random_scene, rng};
use vlab_core::{bundled, state_hash, Value};
use vlab_service::{serve_listener, AppState};

type Check = Result<(), String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

fn packs() -> [(Arc<ScenarioPack>, &'static str, usize); 2] {
    [
        (Arc::new(bundled::tbe_pack()), "tbe-10x", 20),
        (Arc::new(bundled::microscopy_pack()), "microscoping", 25),
    ]
}

/// Drives an Instruction session by its own suggestions.
fn follow_suggestions(pack: Arc<ScenarioPack>, id: &str, limit: usize) -> Result<(Vec<Action>, Session), String> {
    let mut s = Session::start_default(pack, Mode::Instruction, Some(id)).map_err(|e| e.to_string())?;
    let mut actions = Vec::new();
    while let Suggest::Next(next) = s.suggest_next().map_err(|e| e.to_string())? {
        ensure!(actions.len() < limit, "{id}: more than {limit} actions");
        let a = next.action.ok_or_else(|| format!("step {} has no concrete action", next.step_id))?;
        let out = s.submit_action(&a).map_err(|e| e.to_string())?;
        ensure!(out.accepted, "{id}: suggestion {a} refused: {:?}", out.reason);
        actions.push(a);
    }
    Ok((actions, s))
}

fn walkthrough_completeness() -> Check {
    let started = Instant::now();
    for (pack, id, limit) in packs() {
        let (actions, _) = follow_suggestions(pack.clone(), id, limit)?;
        let mut eval = Session::start_default(pack, Mode::Evaluation, Some(id)).unwrap();
        for a in &actions {
            eval.submit_action(a).unwrap();
        }
        ensure!(eval.completed(), "{id}: evaluation replay incomplete");
        let score = eval.finish().evaluation.map(|e| e.score);
        ensure!(score == Some(100), "{id}: score {score:?}");
    }
    let t = started.elapsed();
    ensure!(t < Duration::from_secs(1), "took {t:?}");
    Ok(())
}

fn tbe_end_state() -> Check {
    let (pack, id, limit) = packs().into_iter().next().unwrap();
    let (_, s) = follow_suggestions(pack, id, limit)?;
    let w = s.world();
    for (f, want) in [("boric_acid_g", 17.4), ("trizma_g", 54.0), ("volume_ml", 500.0)] {
        match w.value("beaker", f) {
            Some(Value::Real(x)) => ensure!((x - want).abs() <= 1e-9, "{f} = {x}"),
            other => return Err(format!("{f}: {other:?}")),
        }
    }
    for f in ["edta_added", "dissolved"] {
        ensure!(w.value("beaker", f) == Some(&Value::Bool(true)), "{f} not true");
    }
    Ok(())
}

fn instruction_soundness() -> Check {
    let started = Instant::now();
    for (pack, id, limit) in packs() {
        let (actions, _) = follow_suggestions(pack.clone(), id, limit)?;
        let mut s = Session::start_default(pack.clone(), Mode::Instruction, Some(id)).unwrap();
        for suggested in &actions {
            for legal in legal_actions(s.world(), &pack) {
                let mut tries = vec![legal.action.clone()];
                if legal.amount_slot {
                    tries.clear();
                    for amount in [0.5, 1.0, 10.0, 100.0, 1000.0] {
                        let mut a = legal.action.clone();
                        a.params.amount = Some(suggested.params.amount.map_or(amount, |x| x + amount * 3.0));
                        tries.push(a);
                    }
                }
                for a in tries.into_iter().filter(|a| a != suggested) {
                    let before = (s.state_hash(), s.world().tick, s.log().len());
                    let out = s.submit_action(&a).unwrap();
                    ensure!(!out.accepted, "{id}: {a} accepted while {suggested} was suggested");
                    ensure!(out.reason.is_some(), "{id}: refusal without reason");
                    ensure!(before == (s.state_hash(), s.world().tick, s.log().len()), "{id}: refusal changed state");
                }
            }
            ensure!(s.submit_action(suggested).unwrap().accepted, "{id}: suggestion refused");
        }
    }
    let t = started.elapsed();
    ensure!(t < Duration::from_secs(10), "took {t:?}");
    Ok(())
}

fn determinism() -> Check {
    for (pack, _, _) in packs() {
        for seed in 0..100 {
            let run = || {
                let mut r = rng(seed);
                let mut s = Session::start_default(pack.clone(), Mode::Experimentation, None).unwrap();
                for _ in 0..50 {
                    let a = random_action(&mut r, s.world(), &pack);
                    s.submit_action(&a).unwrap();
                }
                (s.export_log(), s.state_hash())
            };
            let (a, b) = (run(), run());
            ensure!(a == b, "seed {seed} diverged");
            let records = parse_records(&a.0).unwrap();
            let world = replay(&pack.default_scene, &pack, &records).map_err(|e| e.to_string())?;
            ensure!(state_hash(&world) == a.1, "seed {seed}: log replay hash differs");
        }
    }
    Ok(())
}

fn clamp_safety() -> Check {
    let pack = bundled::microscopy_pack();
    let world = init_world(&pack.default_scene, &pack).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(7);
    for seq in 0..1000 {
        let mut w = world.clone();
        for _ in 0..r.gen_range(1..80) {
            let dir = if r.gen_bool(0.5) { Direction::Cw } else { Direction::Ccw };
            w = apply_action(&w, &pack, &Action::rotate("light_knob", dir)).map_err(|e| e.to_string())?.0;
            match w.value("light_knob", "position") {
                Some(Value::Int(p)) => ensure!((1..=24).contains(p), "sequence {seq}: position {p}"),
                other => return Err(format!("position: {other:?}")),
            }
        }
    }
    Ok(())
}

fn format_round_trip() -> Check {
    for seed in 0..100 {
        let mut r = rng(5000 + seed);
        let pack = random_pack(&mut r);
        ensure!(validate_pack(&pack).is_empty(), "seed {seed}: generated pack invalid");
        let text = write_pack(&pack).unwrap();
        let back = parse_pack(text.as_bytes()).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure!(back == pack, "seed {seed}: pack differs after round trip");
        ensure!(write_pack(&back).unwrap() == text, "seed {seed}: pack bytes differ");

        let scene = random_scene(&mut r, &pack.kinds, pack.default_scene.pack_ref.clone());
        let text = write_scene(&scene).unwrap();
        let back = parse_scene(text.as_bytes()).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure!(back == scene, "seed {seed}: scene differs after round trip");
        ensure!(write_scene(&back).unwrap() == text, "seed {seed}: scene bytes differ");
    }
    Ok(())
}

/// Best score over every assignment of log positions to the toy steps
/// `press a`, `press b`, `press c` (in order, each only on a button's
/// first press). `h` is the alarm.
fn toy_oracle(log: &[u8]) -> i64 {
    let mut seen = HashSet::new();
    let first: Vec<bool> = log.iter().map(|b| seen.insert(*b)).collect();
    let mut best = f64::NEG_INFINITY;
    let mut assigned: Vec<Option<usize>> = Vec::new();
    fn go(log: &[u8], first: &[bool], assigned: &mut Vec<Option<usize>>, best: &mut f64) {
        let pos = assigned.len();
        if pos == log.len() {
            let mut done = [false; 3];
            let mut penalty = 0.0;
            for (p, a) in assigned.iter().enumerate() {
                match a {
                    Some(s) => done[*s] = true,
                    None if (0..3).any(|s| done[s] && b"abc"[s] == log[p]) => penalty += 2.0,
                    None if log[p] == b'h' => penalty += 5.0,
                    None => penalty += 1.0,
                }
            }
            let n = assigned.iter().flatten().count() as f64;
            *best = best.max(100.0 * n / 3.0 - penalty);
            return;
        }
        assigned.push(None);
        go(log, first, assigned, best);
        assigned.pop();
        for s in 0..3 {
            let next = assigned.iter().flatten().count() == s && !assigned.contains(&Some(s));
            if next && first[pos] && b"abc"[s] == log[pos] {
                assigned.push(Some(s));
                go(log, first, assigned, best);
                assigned.pop();
            }
        }
    }
    go(log, &first, &mut assigned, &mut best);
    best.round().max(0.0) as i64
}

fn scoring_oracle() -> Check {
    let pack = parse_pack(include_bytes!("fixtures/toy.vpack")).map_err(|e| e.to_string())?;
    let procedure = &pack.procedures[0];
    let world = init_world(&pack.default_scene, &pack).unwrap();
    let entry = |w: &WorldState, b: u8| {
        let action = Action::press(&(b as char).to_string());
        let (after, result) = apply_action(w, &pack, &action).unwrap();
        (after, LogEntry { tick: w.tick, action, result, newly_matched: Vec::new() })
    };

    fn walk(
        cursor: &Cursor,
        log: &mut Vec<u8>,
        entry: &dyn Fn(&WorldState, u8) -> (WorldState, LogEntry),
        checked: &mut u64,
    ) -> Check {
        let want = toy_oracle(log);
        ensure!(i64::from(cursor.score()) == want, "log {:?}: greedy {} vs oracle {want}", String::from_utf8_lossy(log), cursor.score());
        *checked += 1;
        if log.len() == 8 {
            return Ok(());
        }
        for b in *b"abchx" {
            let (_, e) = entry(&cursor.world, b);
            let mut next = cursor.clone();
            classify_action(&mut next, &e).map_err(|e| e.to_string())?;
            log.push(b);
            walk(&next, log, entry, checked)?;
            log.pop();
        }
        Ok(())
    }
    let cursor = Cursor::new(world.clone(), procedure, &pack.kinds, Penalties::default());
    let mut checked = 0;
    walk(&cursor, &mut Vec::new(), &entry, &mut checked)?;
    ensure!(checked == (0..=8).map(|k| 5u64.pow(k)).sum::<u64>(), "checked {checked} logs");

    let score = |buttons: &[u8]| {
        let mut w = world.clone();
        let mut log = Vec::new();
        for b in buttons {
            let (after, e) = entry(&w, *b);
            w = after;
            log.push(e);
        }
        score_log(&world, &log, procedure, &pack.kinds, Penalties::default()).unwrap().score
    };
    ensure!(score(b"abc") == 100, "perfect log scores {}", score(b"abc"));
    for pos in 0..=3 {
        for k in 1..=5u32 {
            let mut log = b"abc".to_vec();
            for _ in 0..k {
                log.insert(pos, b'x');
            }
            ensure!(score(&log) == 100 - k, "{k} irrelevant at {pos}: {}", score(&log));
        }
    }
    Ok(())
}

fn ml_env_consistency() -> Check {
    use vlab_core::env::{Env, EnvConfig};
    for episode in 0..50u64 {
        let (pack, id, _) = packs().into_iter().nth((episode % 2) as usize).unwrap();
        let (guide, _) = follow_suggestions(pack.clone(), id, 25)?;
        let mut r = rng(900 + episode);
        let mut config = EnvConfig::new(pack, id).map_err(|e| e.to_string())?;
        config.max_steps = r.gen_range(3..90);
        let mut env = Env::new(config).map_err(|e| e.to_string())?;
        let (obs, catalog) = env.reset().map_err(|e| e.to_string())?;
        let guided = episode % 3 == 0;
        let mut guide = guide.iter();
        let mut sum = 0.0;
        loop {
            let index = match guide.next().filter(|_| guided && r.gen_bool(0.85)) {
                Some(a) => catalog.iter().position(|c| c == a).ok_or("walkthrough action missing from catalog")?,
                None => r.gen_range(0..catalog.len()),
            };
            let out = env.step(index as i64).map_err(|e| e.to_string())?;
            ensure!(out.observation.len() == obs.len(), "episode {episode}: observation length changed");
            sum += out.reward;
            if out.done {
                break;
            }
        }
        let score = env.finish().and_then(|r| r.evaluation).ok_or("no evaluation report")?.score;
        ensure!((sum - f64::from(score) / 100.0).abs() <= 1e-9, "episode {episode}: rewards {sum}, score {score}");
    }
    Ok(())
}

#[derive(Clone)]
struct Api {
    http: reqwest::Client,
    base: String,
}

impl Api {
    async fn create(&self, body: Json) -> Result<String, String> {
        let v = self.post("/sessions".into(), body).await;
        v["session_id"].as_str().map(str::to_string).ok_or(format!("create failed: {v}"))
    }

    async fn post(&self, path: String, body: Json) -> Json {
        let r = self.http.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap();
        r.json().await.unwrap()
    }

    async fn get(&self, path: String) -> String {
        self.http.get(format!("{}{path}", self.base)).send().await.unwrap().text().await.unwrap()
    }
}

async fn service_conformance() -> Check {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(serve_listener(listener, AppState::new(None, 256).0, std::future::pending()));

    let api = Api { http: reqwest::Client::new(), base };
    for (pack, id) in [("tbe", "tbe-10x"), ("microscopy", "microscoping")] {
        let guide = api.create(json!({"pack_id": pack, "mode": "instruction", "procedure_id": id})).await?;
        let eval = api.create(json!({"pack_id": pack, "mode": "evaluation", "procedure_id": id})).await?;
        for _ in 0..25 {
            let state: Json = serde_json::from_str(&api.get(format!("/sessions/{guide}/state")).await).unwrap();
            if state["completed"] == true {
                break;
            }
            let action = state["suggestion"]["action"].clone();
            let out = api.post(format!("/sessions/{guide}/actions"), action.clone()).await;
            ensure!(out["accepted"] == true, "{id}: suggestion refused: {out}");
            api.post(format!("/sessions/{eval}/actions"), action).await;
        }
        let state: Json = serde_json::from_str(&api.get(format!("/sessions/{eval}/state")).await).unwrap();
        ensure!(state["completed"] == true, "{id}: evaluation session not completed");
        api.post(format!("/sessions/{eval}/finish"), json!({})).await;
        let report: Json = serde_json::from_str(&api.get(format!("/sessions/{eval}/report")).await).unwrap();
        ensure!(report["evaluation"]["score"] == 100, "{id}: report {report}");
    }

    // concurrent fuzz: every session's log and hash must match a local
    // replay of exactly the actions sent to it
    let pack = Arc::new(bundled::tbe_pack());
    let mut tasks = Vec::new();
    for k in 0..8u64 {
        let (pack, api) = (pack.clone(), api.clone());
        tasks.push(tokio::spawn(async move {
            let sid = api.create(json!({"pack_id": "tbe", "mode": "experimentation"})).await?;
            let mut local = Session::start_default(pack.clone(), Mode::Experimentation, None).unwrap();
            let mut r = rng(4000 + k);
            for _ in 0..40 {
                let a = random_action(&mut r, local.world(), &pack);
                local.submit_action(&a).unwrap();
                api.post(format!("/sessions/{sid}/actions"), serde_json::to_value(&a).unwrap()).await;
                tokio::task::yield_now().await;
            }
            let state: Json = serde_json::from_str(&api.get(format!("/sessions/{sid}/state")).await).unwrap();
            let log = api.get(format!("/sessions/{sid}/log")).await;
            ensure!(state["state_hash"] == local.state_hash().as_str(), "session {k}: hash differs from local replay");
            ensure!(parse_records(&log).map_err(|e| e.to_string())? == local.log_records(), "session {k}: log differs");
            Ok::<(), String>(())
        }));
    }
    for t in tasks {
        t.await.map_err(|e| e.to_string())??;
    }
    Ok(())
}

fn main() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let checks: Vec<Criterion> = vec![
        ("walkthrough completeness", Box::new(walkthrough_completeness)),
        ("tbe end-state exactness", Box::new(tbe_end_state)),
        ("instruction soundness", Box::new(instruction_soundness)),
        ("determinism", Box::new(determinism)),
        ("clamp safety", Box::new(clamp_safety)),
        ("format round-trip", Box::new(format_round_trip)),
        ("scoring oracle", Box::new(scoring_oracle)),
        ("ml-env consistency", Box::new(ml_env_consistency)),
        ("service conformance", Box::new(move || rt.block_on(service_conformance()))),
    ];
    let mut failed = 0;
    for (name, check) in &checks {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(()) => println!("PASS {name} ({:.2?})", started.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
