//! HTTP session service for live play.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/sessions` | [`CreateSession`] | [`Created`] |
//! | POST | `/sessions/{id}/guess` | `{"word": ...}` | [`GuessResult`] |
//! | GET | `/sessions/{id}` | | [`SessionView`] |
//! | GET | `/sessions/{id}/posterior` | | [`PosteriorView`] |
//! | DELETE | `/sessions/{id}` | | 204 |
//! | GET | `/cultures` | | culture ids |
//!
//! Errors are `{"error": message}` with 404 for unknown sessions, 409 for a
//! guess after the game ended and 422 for an illegal guess or request.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use codenames_core::game::WordPool;
use codenames_core::harness::ModelStore;
use serde::{Deserialize, Serialize};

use crate::session::{CreateSession, Created, GuessResult, PosteriorView, Session, SessionError, SessionView};

type Shared = Arc<Mutex<Session>>;

pub struct AppState {
    store: Arc<ModelStore>,
    pool: Arc<WordPool>,
    sessions: RwLock<HashMap<String, Shared>>,
    finished_log: Option<Mutex<File>>,
}

impl AppState {
    pub fn new(store: Arc<ModelStore>, pool: Arc<WordPool>) -> Self {
        AppState {
            store,
            pool,
            sessions: RwLock::new(HashMap::new()),
            finished_log: None,
        }
    }

    /// Appends each finished game's transcript to `path` as JSON Lines.
    pub fn with_finished_log(mut self, path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.finished_log = Some(Mutex::new(file));
        Ok(self)
    }

    fn session(&self, id: &str) -> Result<Shared, ApiError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session `{id}`")))
    }

    fn log_finished(&self, session: &Session) {
        if let Some(log) = &self.finished_log {
            let line = serde_json::json!({ "session": session.id, "transcript": session.transcript() });
            let mut f = log.lock().expect("log poisoned");
            if let Err(e) = writeln!(f, "{line}") {
                log::warn!("could not log transcript for {}: {e}", session.id);
            }
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    error: String,
}

impl ApiError {
    fn new(status: StatusCode, error: String) -> Self {
        ApiError { status, error }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match e {
            SessionError::BadRequest(_) | SessionError::IllegalGuess(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Finished(_) => StatusCode::CONFLICT,
            SessionError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuessBody {
    pub word: String,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/cultures", get(cultures))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(view).delete(remove))
        .route("/sessions/{id}/guess", post(guess))
        .route("/sessions/{id}/posterior", get(posterior))
        .with_state(state)
}

/// Clue search is CPU-bound, so session work runs off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn cultures(State(app): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(app.store.culture_ids())
}

async fn create(State(app): State<Arc<AppState>>, Json(req): Json<CreateSession>) -> Result<(StatusCode, Json<Created>), ApiError> {
    let id = uuid::Uuid::new_v4().simple().to_string();
    let app2 = app.clone();
    let session = blocking(move || Ok(Session::start(id, &app2.store, &app2.pool, &req)?)).await?;
    let created = session.created();
    if session.is_over() {
        app.log_finished(&session);
    }
    app.sessions
        .write()
        .expect("session map poisoned")
        .insert(session.id.clone(), Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(created)))
}

async fn guess(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<GuessBody>,
) -> Result<Json<GuessResult>, ApiError> {
    let shared = app.session(&id)?;
    let result = blocking(move || {
        let mut s = shared.lock().expect("session poisoned");
        let result = s.guess(&body.word)?;
        if s.is_over() {
            app.log_finished(&s);
        }
        Ok(result)
    })
    .await?;
    Ok(Json(result))
}

async fn view(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionView>, ApiError> {
    let shared = app.session(&id)?;
    let view = shared.lock().expect("session poisoned").view();
    Ok(Json(view))
}

async fn posterior(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<PosteriorView>, ApiError> {
    let shared = app.session(&id)?;
    let view = shared.lock().expect("session poisoned").posterior_view();
    Ok(Json(view))
}

async fn remove(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<StatusCode, ApiError> {
    app.sessions
        .write()
        .expect("session map poisoned")
        .remove(&id)
        .map(|_| StatusCode::NO_CONTENT)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session `{id}`")))
}

/// Serves until ctrl-c.
pub async fn serve(app: Arc<AppState>, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
