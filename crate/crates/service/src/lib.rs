//! Screening-session HTTP backend.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | questionnaire -> `201 {session_id}` |
//! | GET | `/phrases` | the 96-phrase table |
//! | POST | `/sessions/{id}/responses/{phrase_id}` | `audio/wav` body -> prediction |
//! | GET | `/sessions/{id}/report` | per-category aggregate |
//! | GET | `/model` | deployed checkpoint metadata |
//! | POST | `/admin/model` | `{path}` + `x-admin-token` header -> hot swap |
//!
//! Anything else falls through to the static UI bundle when one is configured.

mod model;
pub mod store;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Map, Value};
use ssd_core::dataset::phrases::{is_known_phrase, PHRASES};
use ssd_core::dataset::Sex;
use ssd_core::nnet::Checkpoint;
use tower_http::services::ServeDir;

pub use model::{LoadedModel, ModelInfo, PredictError};
pub use store::{
    CategorySummary, ClassProbability, PhraseResponse, PhraseRow, Questionnaire, ScreeningSession, SessionReport,
    SessionStore, StoreError,
};

const MAX_UPLOAD_BYTES: usize = 16 << 20;

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Holds `sessions.jsonl` and donated recordings; `None` keeps sessions in memory.
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    /// Enables `POST /admin/model` for requests carrying this token.
    pub admin_token: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Core(#[from] ssd_core::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Shared state: the session store and the currently deployed model.
/// Requests clone the model `Arc` up front, so a swap never disturbs
/// predictions already running.
pub struct AppState {
    store: SessionStore,
    model: RwLock<Option<Arc<LoadedModel>>>,
    recordings: Option<PathBuf>,
    admin_token: Option<String>,
}

impl AppState {
    pub fn new(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        let (store, recordings) = match &cfg.data_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                (SessionStore::open(&dir.join("sessions.jsonl"))?, Some(dir.join("recordings")))
            }
            None => (SessionStore::in_memory(), None),
        };
        let model = match &cfg.checkpoint {
            Some(p) => Some(Arc::new(LoadedModel::new(&Checkpoint::load(p)?)?)),
            None => None,
        };
        Ok(Self {
            store,
            model: RwLock::new(model),
            recordings,
            admin_token: cfg.admin_token.clone(),
        })
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    pub fn model(&self) -> Option<Arc<LoadedModel>> {
        self.model.read().expect("model lock poisoned").clone()
    }

    pub fn swap_model(&self, model: LoadedModel) {
        *self.model.write().expect("model lock poisoned") = Some(Arc::new(model));
    }
}

/// JSON error body `{error, fields?}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    fields: BTreeMap<String, String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            fields: BTreeMap::new(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if !self.fields.is_empty() {
            body["fields"] = json!(self.fields);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownSession(_) => ApiError::new(StatusCode::NOT_FOUND, e.to_string()),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/phrases", get(list_phrases))
        .route("/sessions/:id/responses/:phrase_id", post(post_response))
        .route("/sessions/:id/report", get(session_report))
        .route("/model", get(model_info))
        .route("/admin/model", post(swap_model))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(cfg: ServiceConfig, addr: SocketAddr) -> Result<(), ServiceError> {
    let state = Arc::new(AppState::new(&cfg)?);
    let app = router(state, cfg.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}

/// Validates the questionnaire field by field so the client can point at
/// every problem at once.
fn parse_questionnaire(body: &[u8]) -> ApiResult<Questionnaire> {
    let value: Value = serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("body is not JSON: {e}")))?;
    let Value::Object(obj) = value else {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "body must be a JSON object"));
    };
    let mut fields = BTreeMap::new();
    let mut flag = |obj: &Map<String, Value>, name: &str, required: bool| match obj.get(name) {
        Some(Value::Bool(b)) => Some(*b),
        None if !required => Some(false),
        None => {
            fields.insert(name.to_string(), "required".to_string());
            None
        }
        Some(_) => {
            fields.insert(name.to_string(), "must be true or false".to_string());
            None
        }
    };
    let vocal = flag(&obj, "vocal_organs_normal", true);
    let consent = flag(&obj, "consent", true);
    let donate = flag(&obj, "donate_recordings", false);
    let age = match obj.get("age") {
        Some(v) => match v.as_u64().filter(|&a| a <= 120) {
            Some(a) => Some(a as u32),
            None => {
                fields.insert("age".into(), "must be a whole number of years".into());
                None
            }
        },
        None => {
            fields.insert("age".into(), "required".into());
            None
        }
    };
    let sex = match obj.get("sex") {
        Some(Value::String(s)) => match s.parse::<Sex>() {
            Ok(s) => Some(s),
            Err(_) => {
                fields.insert("sex".into(), "must be \"F\" or \"M\"".into());
                None
            }
        },
        Some(_) => {
            fields.insert("sex".into(), "must be \"F\" or \"M\"".into());
            None
        }
        None => {
            fields.insert("sex".into(), "required".into());
            None
        }
    };
    if consent == Some(false) {
        fields.insert("consent".into(), "consent is required to start a session".into());
    }
    match (age, sex, vocal, consent, donate) {
        (Some(age), Some(sex), Some(vocal_organs_normal), Some(true), Some(donate_recordings)) if fields.is_empty() => {
            Ok(Questionnaire {
                age,
                sex,
                vocal_organs_normal,
                consent: true,
                donate_recordings,
            })
        }
        _ => Err(ApiError {
            status: StatusCode::BAD_REQUEST,
            message: "invalid questionnaire".into(),
            fields,
        }),
    }
}

#[derive(Serialize)]
struct Created {
    session_id: String,
    created_at: u64,
}

async fn create_session(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<Created>)> {
    let q = parse_questionnaire(&body)?;
    let s = st.store.create(q)?;
    Ok((
        StatusCode::CREATED,
        Json(Created {
            session_id: s.session_id,
            created_at: s.created_at,
        }),
    ))
}

#[derive(Serialize)]
struct PhraseEntry {
    phrase_id: &'static str,
    text: &'static str,
    romanization: &'static str,
    translation: &'static str,
}

async fn list_phrases() -> Json<Vec<PhraseEntry>> {
    Json(
        PHRASES
            .iter()
            .map(|p| PhraseEntry {
                phrase_id: p.id,
                text: p.text,
                romanization: p.romanization,
                translation: p.translation,
            })
            .collect(),
    )
}

async fn post_response(
    State(st): State<Arc<AppState>>,
    UrlPath((id, phrase_id)): UrlPath<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<PhraseResponse>> {
    let session = st
        .store
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))?;
    if !is_known_phrase(&phrase_id) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown phrase {phrase_id}")));
    }
    let model = st
        .model()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no model is loaded"))?;
    let pid = phrase_id.clone();
    let wav = body.clone();
    let mut response = tokio::task::spawn_blocking(move || model.predict_wav(&pid, &wav))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| match e {
            PredictError::Decode(_) | PredictError::TooLong(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
            }
            PredictError::Pipeline(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        })?;
    if let (true, Some(dir)) = (session.questionnaire.donate_recordings, &st.recordings) {
        let dir = dir.join(&id);
        let path = dir.join(format!("{phrase_id}.wav"));
        std::fs::create_dir_all(&dir)
            .and_then(|_| std::fs::write(&path, &body))
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("{}: {e}", path.display())))?;
        response.audio_retained = true;
    }
    st.store.record(&id, response.clone())?;
    Ok(Json(response))
}

async fn session_report(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<SessionReport>> {
    st.store
        .get(&id)
        .map(|s| Json(s.report()))
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))
}

async fn model_info(State(st): State<Arc<AppState>>) -> ApiResult<Json<ModelInfo>> {
    st.model()
        .map(|m| Json(m.info().clone()))
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no model is loaded"))
}

async fn swap_model(State(st): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Json<ModelInfo>> {
    let Some(token) = &st.admin_token else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "admin endpoints are disabled"));
    };
    let given = headers.get("x-admin-token").and_then(|v| v.to_str().ok());
    if given != Some(token.as_str()) {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "bad admin token"));
    }
    let path = serde_json::from_slice::<Value>(&body)
        .ok()
        .and_then(|v| v.get("path").and_then(Value::as_str).map(PathBuf::from))
        .ok_or_else(|| {
            let mut e = ApiError::new(StatusCode::BAD_REQUEST, "expected {\"path\": \"...\"}");
            e.fields.insert("path".into(), "required".into());
            e
        })?;
    let loaded = tokio::task::spawn_blocking(move || Checkpoint::load(&path).and_then(|c| LoadedModel::new(&c)))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let info = loaded.info().clone();
    st.swap_model(loaded);
    log::info!("deployed checkpoint {}", info.checkpoint_sha256);
    Ok(Json(info))
}
