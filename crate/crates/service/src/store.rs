//! In-memory session and pack storage.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::http::StatusCode;
use serde::Serialize;
use tokio::sync::broadcast;
use vlab_core::engine::Action;
use vlab_core::formats::{parse_pack, ScenarioPack};
use vlab_core::session::{Mode, Session, SubmitOutcome};
use vlab_core::bundled;

use crate::error::ApiError;
use crate::events::{events_for, StreamEvent};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionHandle {
    pub session_id: String,
    pub created_at: String,
    pub pack_id: String,
    pub mode: Mode,
}

#[derive(Debug)]
pub struct SlotInner {
    pub session: Session,
    pub events: Vec<StreamEvent>,
    live: Option<broadcast::Sender<StreamEvent>>,
}

/// One live session. All reads and writes go through the mutex, so a
/// reader sees either the state before an action or after it.
#[derive(Debug)]
pub struct SessionSlot {
    pub handle: SessionHandle,
    inner: Mutex<SlotInner>,
}

impl SessionSlot {
    pub fn new(handle: SessionHandle, session: Session) -> Self {
        let (tx, _) = broadcast::channel(1024);
        SessionSlot {
            handle,
            inner: Mutex::new(SlotInner {
                session,
                events: Vec::new(),
                live: Some(tx),
            }),
        }
    }

    pub fn lock(&self) -> MutexGuard<'_, SlotInner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn submit(&self, action: &Action) -> Result<(SubmitOutcome, u64), ApiError> {
        let mut inner = self.lock();
        let tick = inner.session.world().tick;
        let was_completed = inner.session.completed();
        let outcome = inner.session.submit_action(action)?;
        let events = events_for(inner.events.len() as u64, tick, action, &outcome, was_completed);
        for e in events {
            if let Some(tx) = &inner.live {
                // no receivers is fine
                let _ = tx.send(e.clone());
            }
            inner.events.push(e);
        }
        Ok((outcome, tick))
    }

    /// Finishes the session and closes live event streams.
    pub fn finish(&self) -> vlab_core::SessionReport {
        let mut inner = self.lock();
        inner.live = None;
        inner.session.finish()
    }

    /// The history so far plus a receiver for what follows, taken
    /// atomically so nothing is missed or repeated.
    pub fn subscribe(&self) -> (Vec<StreamEvent>, Option<broadcast::Receiver<StreamEvent>>) {
        let inner = self.lock();
        (inner.events.clone(), inner.live.as_ref().map(|tx| tx.subscribe()))
    }

    pub fn is_finished(&self) -> bool {
        self.lock().session.is_finished()
    }
}

/// Sessions with least-recently-used eviction of finished sessions once the
/// cap is reached.
#[derive(Debug)]
pub struct SessionStore {
    cap: usize,
    clock: u64,
    slots: HashMap<String, (Arc<SessionSlot>, u64)>,
}

impl SessionStore {
    pub fn new(cap: usize) -> Self {
        SessionStore {
            cap: cap.max(1),
            clock: 0,
            slots: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&mut self, id: &str) -> Option<Arc<SessionSlot>> {
        self.clock += 1;
        let clock = self.clock;
        self.slots.get_mut(id).map(|(slot, used)| {
            *used = clock;
            slot.clone()
        })
    }

    /// Inserts a slot, evicting the least recently used finished session if
    /// the store is full. Returns the evicted id.
    pub fn insert(&mut self, slot: Arc<SessionSlot>) -> Result<Option<String>, ApiError> {
        let mut evicted = None;
        if self.slots.len() >= self.cap {
            let victim = self
                .slots
                .iter()
                .filter(|(_, (s, _))| s.is_finished())
                .min_by_key(|(_, (_, used))| *used)
                .map(|(id, _)| id.clone());
            match victim {
                Some(id) => {
                    self.slots.remove(&id);
                    evicted = Some(id);
                }
                None => {
                    return Err(ApiError::new(
                        StatusCode::SERVICE_UNAVAILABLE,
                        "session_cap",
                        format!("all {} sessions are active; finish one first", self.cap),
                    ))
                }
            }
        }
        self.clock += 1;
        self.slots.insert(slot.handle.session_id.clone(), (slot, self.clock));
        Ok(evicted)
    }

    pub fn all(&self) -> Vec<Arc<SessionSlot>> {
        let mut v: Vec<_> = self.slots.values().map(|(s, _)| s.clone()).collect();
        v.sort_by(|a, b| a.handle.session_id.cmp(&b.handle.session_id));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadProblem {
    pub file: String,
    pub message: String,
}

/// Packs by id. Without a content directory the bundled packs are served.
#[derive(Debug, Default)]
pub struct PackLibrary {
    pub dir: Option<PathBuf>,
    pub packs: BTreeMap<String, Arc<ScenarioPack>>,
}

impl PackLibrary {
    pub fn load(dir: Option<&Path>) -> (PackLibrary, Vec<LoadProblem>) {
        let mut problems = Vec::new();
        let sources: Vec<(String, Result<Vec<u8>, String>)> = match dir {
            None => bundled::ALL
                .iter()
                .map(|(name, text)| (name.to_string(), Ok(text.as_bytes().to_vec())))
                .collect(),
            Some(dir) => match std::fs::read_dir(dir) {
                Ok(rd) => {
                    let mut files: Vec<PathBuf> = rd
                        .filter_map(|e| e.ok().map(|e| e.path()))
                        .filter(|p| p.extension().is_some_and(|x| x == "vpack"))
                        .collect();
                    files.sort();
                    files
                        .into_iter()
                        .map(|f| (f.display().to_string(), std::fs::read(&f).map_err(|e| e.to_string())))
                        .collect()
                }
                Err(e) => {
                    problems.push(LoadProblem {
                        file: dir.display().to_string(),
                        message: e.to_string(),
                    });
                    Vec::new()
                }
            },
        };
        let mut packs = BTreeMap::new();
        for (file, bytes) in sources {
            let parsed = bytes.and_then(|b| parse_pack(&b).map_err(|e| e.to_string()));
            match parsed {
                Ok(p) if packs.contains_key(&p.pack_id) => problems.push(LoadProblem {
                    file,
                    message: format!("duplicate pack id \"{}\"", p.pack_id),
                }),
                Ok(p) => {
                    packs.insert(p.pack_id.clone(), Arc::new(p));
                }
                Err(message) => problems.push(LoadProblem { file, message }),
            }
        }
        let lib = PackLibrary {
            dir: dir.map(Path::to_path_buf),
            packs,
        };
        (lib, problems)
    }
}
