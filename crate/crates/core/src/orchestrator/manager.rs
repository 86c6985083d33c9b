use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::session::{now_ms, Phase, Proposal, Session, SessionState};
use super::{ExpertMode, RunRecord, SessionConfig};
use crate::error::{Error, Result};
use crate::explain::HeatmapSlice;
use crate::preference::PrefSource;
use crate::task::{Choice, Point};
use crate::tnp::TnpModel;

/// Body of a choice submission. `t`, when present, must equal the session
/// clock, so a stale or duplicated submission is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChooseRequest {
    pub side: Choice,
    #[serde(default)]
    pub t: Option<u64>,
}

type Handle = Arc<Mutex<Session>>;

struct Inner {
    sessions: Mutex<HashMap<String, Handle>>,
    models: Mutex<HashMap<String, Arc<TnpModel>>>,
    dir: Option<PathBuf>,
    counter: AtomicU64,
}

/// Owns live sessions for the HTTP service. Proposals after a choice are
/// computed on a background thread; meanwhile the session reports
/// [`Phase::Evaluating`].
#[derive(Clone)]
pub struct SessionManager {
    inner: Arc<Inner>,
}

impl Default for SessionManager {
    fn default() -> Self {
        Self::new()
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl SessionManager {
    pub fn new() -> Self {
        Self {
            inner: Arc::new(Inner {
                sessions: Mutex::new(HashMap::new()),
                models: Mutex::new(HashMap::new()),
                dir: None,
                counter: AtomicU64::new(0),
            }),
        }
    }

    /// A manager that writes every session to `dir` after each change.
    pub fn with_persistence(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut m = Self::new();
        Arc::get_mut(&mut m.inner).expect("fresh manager").dir = Some(dir);
        Ok(m)
    }

    /// Registers a surrogate under `name` and returns its fingerprint.
    pub fn register_model(&self, name: impl Into<String>, model: TnpModel) -> Result<String> {
        let fp = model.fingerprint()?;
        lock(&self.inner.models).insert(name.into(), Arc::new(model));
        Ok(fp)
    }

    pub fn model_names(&self) -> Vec<String> {
        let mut v: Vec<String> = lock(&self.inner.models).keys().cloned().collect();
        v.sort();
        v
    }

    fn resolve_model(&self, name: Option<&str>) -> Result<Arc<TnpModel>> {
        let models = lock(&self.inner.models);
        match name {
            Some(n) => models.get(n).cloned().ok_or_else(|| Error::BadRequest(format!("unknown model {n}"))),
            None if models.len() == 1 => Ok(models.values().next().unwrap().clone()),
            None => Err(Error::BadRequest(format!("name one of the {} registered models", models.len()))),
        }
    }

    /// Loads persisted sessions whose surrogate is registered. Returns the
    /// number restored.
    pub fn restore_all(&self) -> Result<usize> {
        let Some(dir) = &self.inner.dir else { return Ok(0) };
        let models: Vec<Arc<TnpModel>> = lock(&self.inner.models).values().cloned().collect();
        let mut n = 0;
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let state: SessionState = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            let Some(model) = models.iter().find(|m| m.fingerprint().ok().as_deref() == Some(&state.model_fingerprint)) else {
                continue;
            };
            let id = state.id.clone();
            let session = Session::restore(state, model.clone())?;
            let resume = session.phase() == Phase::Evaluating;
            lock(&self.inner.sessions).insert(id.clone(), Arc::new(Mutex::new(session)));
            if resume {
                self.spawn_proposal(&id);
            }
            n += 1;
        }
        Ok(n)
    }

    fn handle(&self, id: &str) -> Result<Handle> {
        lock(&self.inner.sessions).get(id).cloned().ok_or_else(|| Error::NotFound(format!("session {id}")))
    }

    fn persist(&self, session: &Session) -> Result<()> {
        let Some(dir) = &self.inner.dir else { return Ok(()) };
        write_atomic(&dir.join(format!("{}.json", session.state.id)), &serde_json::to_vec(&session.state)?)
    }

    /// Creates a session. With a simulated expert the elicitation completes
    /// immediately; either way, a session that needs no labels comes back
    /// with its first proposal ready.
    pub fn create(&self, config: SessionConfig) -> Result<SessionState> {
        let model = self.resolve_model(config.model.as_deref())?;
        let n = self.inner.counter.fetch_add(1, Ordering::Relaxed);
        let id = format!("{:x}{:04x}", now_ms(), n & 0xffff);
        let simulated = matches!(config.expert, ExpertMode::Simulated { .. });
        let mut session = Session::create(id.clone(), config, model)?;
        if simulated && session.phase() == Phase::ElicitingPreferences {
            session.elicit_simulated()?;
        }
        if session.phase() == Phase::Evaluating {
            session.propose()?;
        }
        self.persist(&session)?;
        let state = session.state.clone();
        lock(&self.inner.sessions).insert(id, Arc::new(Mutex::new(session)));
        Ok(state)
    }

    pub fn ids(&self) -> Vec<String> {
        let mut v: Vec<String> = lock(&self.inner.sessions).keys().cloned().collect();
        v.sort();
        v
    }

    pub fn state(&self, id: &str) -> Result<SessionState> {
        let h = self.handle(id)?;
        let state = lock(&h).state.clone();
        Ok(state)
    }

    pub fn submit_labels(&self, id: &str, labels: &[u8]) -> Result<SessionState> {
        let h = self.handle(id)?;
        let state = {
            let mut s = lock(&h);
            s.submit_labels(labels, PrefSource::Human)?;
            self.persist(&s)?;
            s.state.clone()
        };
        if state.phase == Phase::Evaluating {
            self.spawn_proposal(id);
        }
        Ok(state)
    }

    pub fn candidates(&self, id: &str) -> Result<Proposal> {
        let h = self.handle(id)?;
        let s = lock(&h);
        match (&s.state.current, s.phase()) {
            (Some(p), Phase::AwaitingChoice) => Ok(p.clone()),
            (_, phase) => Err(Error::Phase { phase: phase.label().into(), detail: "no candidates are on offer".into() }),
        }
    }

    pub fn choose(&self, id: &str, req: ChooseRequest) -> Result<SessionState> {
        let h = self.handle(id)?;
        let state = {
            let mut s = lock(&h);
            if let Some(t) = req.t {
                if t != s.state.t {
                    return Err(Error::Phase {
                        phase: s.phase().label().into(),
                        detail: format!("choice is for step {t} but the session is at step {}", s.state.t),
                    });
                }
            }
            s.choose(req.side)?;
            self.persist(&s)?;
            s.state.clone()
        };
        if state.phase == Phase::Evaluating {
            self.spawn_proposal(id);
        }
        Ok(state)
    }

    pub fn abort(&self, id: &str, reason: &str) -> Result<SessionState> {
        let h = self.handle(id)?;
        let mut s = lock(&h);
        s.abort(reason)?;
        self.persist(&s)?;
        Ok(s.state.clone())
    }

    pub fn heatmap(&self, id: &str, dims: (usize, usize), resolution: usize, fixed: Option<Point>) -> Result<HeatmapSlice> {
        let h = self.handle(id)?;
        let snapshot = lock(&h).clone();
        snapshot.heatmap(dims, resolution, fixed)
    }

    pub fn record(&self, id: &str) -> Result<RunRecord> {
        let h = self.handle(id)?;
        let r = lock(&h).record();
        r
    }

    /// Blocks until the session leaves [`Phase::Evaluating`].
    pub fn wait_ready(&self, id: &str, timeout: Duration) -> Result<SessionState> {
        let start = Instant::now();
        loop {
            let state = self.state(id)?;
            if state.phase != Phase::Evaluating {
                return Ok(state);
            }
            if start.elapsed() > timeout {
                return Err(Error::Phase { phase: state.phase.label().into(), detail: "timed out waiting for a proposal".into() });
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    /// Computes the next proposal off the lock on a copy, then commits it if
    /// the session has not moved on in the meantime.
    fn spawn_proposal(&self, id: &str) {
        let manager = self.clone();
        let id = id.to_string();
        std::thread::spawn(move || {
            let Ok(h) = manager.handle(&id) else { return };
            let mut work = lock(&h).clone();
            let t = work.state.t;
            let outcome = work.propose();
            let mut s = lock(&h);
            if s.phase() != Phase::Evaluating || s.state.t != t {
                return;
            }
            match outcome {
                Ok(()) => *s = work,
                Err(e) => {
                    let _ = s.abort(&format!("proposal failed: {e}"));
                }
            }
            let _ = manager.persist(&s);
        });
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
