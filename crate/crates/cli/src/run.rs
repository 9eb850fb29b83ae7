//! The line-based terminal session behind `vlab run`.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use vlab_core::canonical::to_canonical_string;
use vlab_core::engine::Action;
use vlab_core::formats::{ScenarioPack, SceneFile};
use vlab_core::rules::Severity;
use vlab_core::session::{Mode, Session};

use crate::content::Failure;

const HELP: &str = "commands: press <id> | rotate <id> cw|ccw | pull <id> | zoom <id> | move <id> <zone> | use <a> <b> [amount] | state | hint | finish";

pub fn run(
    pack: Arc<ScenarioPack>,
    scene: &SceneFile,
    mode: Mode,
    procedure: Option<&str>,
    script: Option<&Path>,
    log: Option<&Path>,
) -> Result<(), Failure> {
    let mut session = Session::start(scene, pack, mode, procedure).map_err(|e| Failure::domain(e.to_string()))?;
    let input: Box<dyn BufRead> = match script {
        Some(p) => Box::new(BufReader::new(
            std::fs::File::open(p).map_err(|e| Failure::env(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(std::io::stdin().lock()),
    };
    let mut out = std::io::stdout().lock();
    let io = |e: std::io::Error| Failure::env(e.to_string());

    print_state(&mut out, &session).map_err(io)?;
    print_hint(&mut out, &session).map_err(io)?;
    for line in input.lines() {
        let line = line.map_err(io)?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line {
            "finish" | "quit" | "exit" => break,
            "state" => print_state(&mut out, &session).map_err(io)?,
            "hint" => print_hint(&mut out, &session).map_err(io)?,
            "help" => writeln!(out, "{HELP}").map_err(io)?,
            _ => match line.parse::<Action>() {
                Err(e) => eprintln!("{e}; {HELP}"),
                Ok(action) => {
                    submit(&mut out, &mut session, &action).map_err(io)?;
                    print_hint(&mut out, &session).map_err(io)?;
                }
            },
        }
    }

    let report = session.finish();
    if let Some(p) = log {
        std::fs::write(p, session.export_log()).map_err(|e| Failure::env(format!("{}: {e}", p.display())))?;
    }
    writeln!(out, "report:").map_err(io)?;
    write!(out, "{}", to_canonical_string(&report)).map_err(io)?;
    if let Some(eval) = &report.evaluation {
        writeln!(out, "score: {}", eval.score).map_err(io)?;
    }
    writeln!(out, "state_hash: {}", report.final_state_hash).map_err(io)?;
    Ok(())
}

fn submit(out: &mut impl Write, session: &mut Session, action: &Action) -> std::io::Result<()> {
    let outcome = match session.submit_action(action) {
        Ok(o) => o,
        Err(e) => return writeln!(out, "error: {e}"),
    };
    if !outcome.accepted {
        return writeln!(out, "rejected: {}", outcome.reason.unwrap_or_default());
    }
    writeln!(out, "ok: {action}")?;
    if let Some(result) = &outcome.result {
        for e in &result.events {
            let mark = match e.severity {
                Severity::Hazard => "!",
                Severity::Info => "-",
            };
            writeln!(out, "  {mark} {}", e.message)?;
        }
        for c in &result.state_delta {
            writeln!(out, "  {}.{} = {} (was {})", c.entity, c.feature, c.new, c.old)?;
        }
    }
    for step in &outcome.newly_matched {
        writeln!(out, "  step matched: {step}")?;
    }
    if outcome.completed && !outcome.newly_matched.is_empty() {
        writeln!(out, "procedure completed")?;
    }
    Ok(())
}

fn print_state(out: &mut impl Write, session: &Session) -> std::io::Result<()> {
    let world = session.world();
    writeln!(out, "tick {} | {} mode", world.tick, session.mode())?;
    if let Some(p) = session.procedure() {
        writeln!(out, "procedure: {} ({}/{} steps)", p.title, session.matched_steps().len(), p.steps.len())?;
    }
    for zone in &world.zones {
        writeln!(out, "[{}]", zone.id)?;
        for e in world.entities.values().filter(|e| e.zone == zone.id) {
            let state: Vec<String> = e.state.iter().map(|(k, v)| format!("{k}={v}")).collect();
            writeln!(out, "  {} ({}) {}", e.id, e.kind, state.join(" "))?;
        }
    }
    if let Some(f) = session.focus() {
        writeln!(out, "focus: {f}")?;
    }
    Ok(())
}

fn print_hint(out: &mut impl Write, session: &Session) -> std::io::Result<()> {
    if session.mode() != Mode::Instruction {
        return Ok(());
    }
    match session.current_suggestion() {
        Some(s) => match &s.action {
            Some(a) => writeln!(out, "hint: {} [{a}]", s.hint_text),
            None => writeln!(out, "hint: {}", s.hint_text),
        },
        None => writeln!(out, "hint: all steps are done; type finish"),
    }
}
