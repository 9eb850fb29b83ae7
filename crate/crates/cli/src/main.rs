//! `vlab`: validate content, export scenes, run sessions in the terminal,
//! replay logs, serve the HTTP API, and expose the learning environment
//! over stdio.
//!
//! Exit codes: 0 success, 1 domain failure (invalid content, hash mismatch),
//! 2 environment failure (I/O, syntax, bind).

mod content;
mod run;

use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use vlab_core::env::{handle_line, Env, EnvConfig};
use vlab_core::formats::{validate_pack, validate_scene, write_scene};
use vlab_core::session::{parse_records, replay, world_to_scene, Mode};
use vlab_core::state_hash;

use content::{load_pack, load_scene, read_document, Document, Failure};

#[derive(Debug, Parser)]
#[command(name = "vlab", version, about = "Headless virtual-laboratory scenario engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a pack or scene file; violations go to stderr.
    Validate {
        path: PathBuf,
        /// Pack to check a scene against (path or bundled pack id).
        #[arg(long)]
        pack: Option<String>,
    },
    /// Write the pack's default scene, or the world after replaying a log.
    ExportScene {
        #[arg(long)]
        pack: String,
        /// Replay log to apply before exporting.
        #[arg(long)]
        session: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Line-based terminal session.
    Run {
        #[arg(long)]
        pack: String,
        #[arg(long)]
        mode: Mode,
        #[arg(long)]
        procedure: Option<String>,
        /// Start from this scene instead of the pack default.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Read commands from a file instead of stdin.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Write the replay log here when the session ends.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Replay a log; with --expect-hash, exit 1 unless the final hash matches.
    Replay {
        #[arg(long)]
        pack: String,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        expect_hash: Option<String>,
    },
    /// Serve the HTTP API.
    Serve {
        /// Directory of .vpack files; the bundled packs when omitted.
        #[arg(long, env = "VLAB_CONTENT_DIR")]
        content: Option<PathBuf>,
        #[arg(long, default_value = vlab_service::DEFAULT_LISTEN)]
        listen: SocketAddr,
        #[arg(long, default_value_t = vlab_service::DEFAULT_SESSION_CAP)]
        session_cap: usize,
        /// Write per-session snapshots here on shutdown.
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
    },
    /// Reset/step environment speaking JSON lines on stdin/stdout.
    Env {
        #[arg(long)]
        pack: String,
        #[arg(long)]
        procedure: String,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Comma-separated amounts for UseWith actions.
        #[arg(long, value_delimiter = ',')]
        amount_grid: Option<Vec<f64>>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("VLAB_LOG").unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("{}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Validate { path, pack } => validate(path, pack),
        Command::ExportScene { pack, session, output } => {
            let pack = load_pack(&pack)?;
            let scene = match session {
                None => pack.default_scene.clone(),
                Some(log) => {
                    let world = replay_file(&pack, &pack.default_scene, &log)?;
                    world_to_scene(&world, pack.pack_ref())
                }
            };
            let text = write_scene(&scene).map_err(|e| Failure::domain(e.to_string()))?;
            std::fs::write(&output, text).map_err(|e| Failure::env(format!("{}: {e}", output.display())))
        }
        Command::Run {
            pack,
            mode,
            procedure,
            scene,
            script,
            log,
        } => {
            let pack = Arc::new(load_pack(&pack)?);
            let scene = match scene {
                Some(p) => load_scene(&p)?,
                None => pack.default_scene.clone(),
            };
            run::run(pack, &scene, mode, procedure.as_deref(), script.as_deref(), log.as_deref())
        }
        Command::Replay {
            pack,
            log,
            scene,
            expect_hash,
        } => {
            let pack = load_pack(&pack)?;
            let scene = match scene {
                Some(p) => load_scene(&p)?,
                None => pack.default_scene.clone(),
            };
            let world = replay_file(&pack, &scene, &log)?;
            let hash = state_hash(&world);
            println!("{hash}");
            match expect_hash {
                Some(want) if !want.eq_ignore_ascii_case(&hash) => {
                    Err(Failure::domain(format!("state hash mismatch: expected {want}, got {hash}")))
                }
                _ => Ok(()),
            }
        }
        Command::Serve {
            content,
            listen,
            session_cap,
            snapshot_dir,
        } => {
            let config = vlab_service::ServiceConfig {
                listen,
                content_dir: content,
                session_cap,
                snapshot_dir,
            };
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::env(e.to_string()))?;
            rt.block_on(vlab_service::serve(config, async {
                let _ = tokio::signal::ctrl_c().await;
            }))
            .map_err(|e| Failure::env(e.to_string()))
        }
        Command::Env {
            pack,
            procedure,
            max_steps,
            amount_grid,
        } => {
            let pack = Arc::new(load_pack(&pack)?);
            let mut config = EnvConfig::new(pack, &procedure).map_err(|e| Failure::domain(e.to_string()))?;
            if let Some(n) = max_steps {
                config.max_steps = n;
            }
            if let Some(grid) = amount_grid {
                config.amount_grid = grid;
            }
            let mut env = Env::new(config).map_err(|e| Failure::domain(e.to_string()))?;
            let stdin = std::io::stdin();
            let mut out = std::io::stdout().lock();
            for line in stdin.lock().lines() {
                let line = line.map_err(|e| Failure::env(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let reply = handle_line(&mut env, &line);
                writeln!(out, "{reply}").and_then(|_| out.flush()).map_err(|e| Failure::env(e.to_string()))?;
            }
            Ok(())
        }
    }
}

fn replay_file(
    pack: &vlab_core::ScenarioPack,
    scene: &vlab_core::SceneFile,
    log: &std::path::Path,
) -> Result<vlab_core::WorldState, Failure> {
    let text = std::fs::read_to_string(log).map_err(|e| Failure::env(format!("{}: {e}", log.display())))?;
    let records = parse_records(&text).map_err(|e| Failure::env(format!("{}: {e}", log.display())))?;
    replay(scene, pack, &records).map_err(|e| Failure::env(format!("{}: {e}", log.display())))
}

fn validate(path: PathBuf, pack: Option<String>) -> Result<(), Failure> {
    let violations = match read_document(&path)? {
        Document::Pack(p) => validate_pack(&p),
        Document::Scene(scene) => {
            let pack = match pack {
                Some(p) => load_pack(&p)?,
                None => content::resolve_bundled(&scene.pack_ref).ok_or_else(|| {
                    Failure::domain(format!(
                        "{}: cannot resolve pack {}; pass --pack",
                        path.display(),
                        scene.pack_ref
                    ))
                })?,
            };
            validate_scene(&scene, &pack)
        }
    };
    if violations.is_empty() {
        println!("{}: ok", path.display());
        return Ok(());
    }
    for v in &violations {
        eprintln!("{}: {v}", path.display());
    }
    Err(Failure::domain(format!("{} violation(s)", violations.len())))
}
