//! HTTP service for human annotation sessions.
//!
//! Each session wraps one active learner with a human oracle. Mutations of a
//! session are serialized; reads of the curve and of rendered strips see the
//! last committed state and never wait for a retrain. With a transcript
//! directory configured, every session is persisted as an append-only
//! transcript and restored by replay after a restart or eviction.

mod api;
mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use axum::routing::{get, post};
use axum::Router;
use dba_core::data::EmbeddedDataset;
use dba_core::decoder::RenderOptions;

pub use api::{AnnotationRequest, AnnotationResponse, CurveResponse, QueryResponse, SessionCreated, StateResponse};
use session::Session;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Where session transcripts live; `None` keeps sessions in memory only.
    pub transcript_dir: Option<PathBuf>,
    /// Idle sessions are dropped from memory after this long.
    pub session_ttl: Duration,
    pub render: RenderOptions,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            transcript_dir: None,
            session_ttl: Duration::from_secs(3600),
            render: RenderOptions::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] dba_core::Error),
}

/// Shared state behind the router.
pub struct AppState {
    data: Arc<EmbeddedDataset>,
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl AppState {
    pub fn new(data: Arc<EmbeddedDataset>, config: ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        if let Some(dir) = &config.transcript_dir {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Arc::new(Self {
            data,
            config,
            sessions: RwLock::new(HashMap::new()),
        }))
    }

    /// Number of sessions currently held in memory.
    pub fn live_sessions(&self) -> usize {
        self.sessions.read().expect("sessions lock").len()
    }

    /// Drops sessions idle for longer than the TTL. Persisted sessions come
    /// back from their transcript on next access.
    pub fn evict_idle(&self, now: Instant) -> usize {
        let mut sessions = self.sessions.write().expect("sessions lock");
        let before = sessions.len();
        sessions.retain(|_, s| now.saturating_duration_since(s.last_access()) <= self.config.session_ttl);
        before - sessions.len()
    }

    /// Restores every transcript in the transcript directory. Returns the
    /// restored ids and the files that could not be restored, with reasons.
    pub fn recover_all(&self) -> (Vec<String>, Vec<(PathBuf, String)>) {
        let mut restored = Vec::new();
        let mut failed = Vec::new();
        let Some(dir) = &self.config.transcript_dir else {
            return (restored, failed);
        };
        let entries = match std::fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) => {
                failed.push((dir.clone(), e.to_string()));
                return (restored, failed);
            }
        };
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).and_then(session::canonical_id) else {
                failed.push((path, "file name is not a session id".into()));
                continue;
            };
            match self.load_persisted(&id) {
                Ok(Some(_)) => restored.push(id),
                Ok(None) => failed.push((path, "transcript vanished".into())),
                Err(e) => failed.push((path, e.to_string())),
            }
        }
        (restored, failed)
    }

    fn lookup(&self, id: &str) -> Result<Option<Arc<Session>>, ServiceError> {
        let Some(id) = session::canonical_id(id) else {
            return Ok(None);
        };
        if let Some(s) = self.sessions.read().expect("sessions lock").get(&id) {
            s.touch();
            return Ok(Some(s.clone()));
        }
        self.load_persisted(&id)
    }

    fn load_persisted(&self, id: &str) -> Result<Option<Arc<Session>>, ServiceError> {
        let Some(dir) = &self.config.transcript_dir else {
            return Ok(None);
        };
        let path = dir.join(format!("{id}.jsonl"));
        if !path.exists() {
            return Ok(None);
        }
        let session = Arc::new(Session::restore(id.to_string(), self.data.clone(), &path, self.config.render)?);
        let mut sessions = self.sessions.write().expect("sessions lock");
        // Another request may have restored it meanwhile; keep the first.
        Ok(Some(sessions.entry(id.to_string()).or_insert(session).clone()))
    }

    fn insert(&self, session: Arc<Session>) {
        self.sessions
            .write()
            .expect("sessions lock")
            .insert(session.id().to_string(), session);
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(api::create_session))
        .route("/sessions/{id}/query", get(api::get_query))
        .route("/sessions/{id}/annotation", post(api::post_annotation))
        .route("/sessions/{id}/curve", get(api::get_curve))
        .route("/sessions/{id}/state", get(api::get_state))
        .route("/sessions/{id}/strip/{file}", get(api::get_strip))
        .with_state(state)
}

/// Serves until Ctrl-C, evicting idle sessions in the background.
pub async fn serve(data: Arc<EmbeddedDataset>, config: ServiceConfig) -> Result<(), ServiceError> {
    let bind = config.bind;
    let ttl = config.session_ttl;
    let state = AppState::new(data, config)?;
    let (restored, failed) = state.recover_all();
    if !restored.is_empty() {
        log::info!("restored {} session(s)", restored.len());
    }
    for (path, reason) in failed {
        log::warn!("could not restore {}: {reason}", path.display());
    }
    let sweeper = state.clone();
    tokio::spawn(async move {
        let period = (ttl / 4).max(Duration::from_secs(1));
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let n = sweeper.evict_idle(Instant::now());
            if n > 0 {
                log::info!("evicted {n} idle session(s)");
            }
        }
    });
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
