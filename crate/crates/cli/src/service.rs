//! HTTP session service around a trained model.
//!
//! Each session is a conversation between a seeker (the HTTP client) and
//! the recommender. Messages to one session are handled one at a time;
//! different sessions proceed in parallel against shared, read-only
//! weights. Every completed turn is appended to a JSONL log so a restart
//! can rebuild the sessions.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex as StdMutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};
use tracing::{info, warn};
use uuid::Uuid;

use crs_core::corpus::{preference_history, serialize_context, ItemMention, RenderMode, Span, Speaker, Utterance};
use crs_core::dataset::annotate_entities;
use crs_core::nn::Mat;
use crs_core::recommender::top_k_items;
use crs_core::{CrsError, CrsModel, DecodeConfig, EntityId, FusionBranch, FusionConfig, PreferenceHistory};

/// Ranked items returned with every reply.
pub const TOP_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceConfig {
    pub fusion: FusionConfig,
    pub decode: DecodeConfig,
    pub max_sessions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItemView {
    pub item_id: String,
    pub name: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub entity_id: String,
    pub name: String,
    /// 1-based position in the history; later means more recent.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnDebug {
    pub branch: FusionBranch,
    pub bias_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageReply {
    pub response_text: String,
    pub ranked_items: Vec<RankedItemView>,
    /// The history the ranking was computed from.
    pub entity_history: Vec<HistoryEntry>,
    pub debug: TurnDebug,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: Uuid,
    pub created_at: u64,
    pub updated_at: u64,
    pub utterances: Vec<Utterance>,
    pub entity_history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone)]
struct Session {
    id: Uuid,
    created_at: u64,
    updated_at: u64,
    utterances: Vec<Utterance>,
}

/// One line of the session log.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogRecord {
    Create { id: Uuid, at: u64 },
    Turn { id: Uuid, at: u64, seeker: Utterance, recommender: Utterance },
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// The recommender pipeline for one seeker message, independent of HTTP.
pub struct Engine {
    pub model: CrsModel,
    table: Mat,
    pub config: ServiceConfig,
}

impl Engine {
    pub fn new(model: CrsModel, config: ServiceConfig) -> crs_core::Result<Self> {
        config.fusion.validate()?;
        config.decode.validate()?;
        let table = if model.config.variant.uses_entities() {
            model.entity_table()?
        } else {
            model.empty_table()
        };
        Ok(Engine { model, table, config })
    }

    /// A seeker utterance with `@id` item markers resolved against the
    /// catalog and other entities linked through the alias index.
    pub fn seeker_utterance(&self, text: &str) -> Utterance {
        let mut u = Utterance::new(Speaker::Seeker, text);
        u.item_mentions = item_markers(text, &self.model);
        annotate_entities(&mut u, &self.model.kg, &self.model.aliases);
        u
    }

    pub fn history(&self, utterances: &[Utterance]) -> PreferenceHistory {
        preference_history(utterances, &self.model.catalog, &self.model.kg, &self.model.config.examples).0
    }

    pub fn history_view(&self, history: &PreferenceHistory) -> Vec<HistoryEntry> {
        let m = &self.model;
        history
            .entities()
            .iter()
            .enumerate()
            .map(|(i, e)| HistoryEntry {
                entity_id: m.kg.entity_name(*e).to_string(),
                name: entity_display(m, *e),
                position: i + 1,
            })
            .collect()
    }

    /// Runs one turn over `utterances`, whose last element is the new
    /// seeker message. Returns the reply and the recommender utterance.
    pub fn respond(&self, utterances: &[Utterance]) -> crs_core::Result<(MessageReply, Utterance)> {
        let m = &self.model;
        let history = self.history(utterances);
        let context = serialize_context(utterances, &m.vocab, m.config.examples.max_len);
        let rec = m.recommend(&self.table, &context, &history, &self.config.fusion)?;
        let ranked = top_k_items(&rec.p_rec, TOP_K, &m.catalog);
        let bias = m.build_bias(&rec.p_rec)?;
        let hyps = m.generate(&context, Some(&bias), &self.config.decode)?;
        let best = hyps.first().map(|h| h.tokens.as_slice()).unwrap_or_default();
        let decoded = m.vocab.decode(best, &m.catalog, RenderMode::Names);

        let mut reply_utt = Utterance::new(Speaker::Recommender, decoded.text.clone());
        reply_utt.item_mentions = decoded.item_mentions;
        annotate_entities(&mut reply_utt, &m.kg, &m.aliases);
        let reply = MessageReply {
            response_text: decoded.text,
            ranked_items: ranked
                .into_iter()
                .map(|r| RankedItemView {
                    item_id: r.item_id,
                    name: r.name,
                    prob: r.prob,
                })
                .collect(),
            entity_history: self.history_view(&history),
            debug: TurnDebug {
                branch: rec.branch,
                bias_items: bias.values().iter().filter(|v| **v > 0.0).count(),
            },
        };
        Ok((reply, reply_utt))
    }
}

fn entity_display(m: &CrsModel, e: EntityId) -> String {
    match m.catalog.item_for_entity(e) {
        Some(item) => item.name.clone(),
        None => m.kg.entity_name(e).to_string(),
    }
}

/// `@<id>` markers naming catalog items.
fn item_markers(text: &str, m: &CrsModel) -> Vec<ItemMention> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'@' {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_' || bytes[j] == b'-') {
            j += 1;
        }
        let id = &text[i + 1..j];
        if !id.is_empty() && m.catalog.get(id).is_some() {
            out.push(ItemMention {
                item_id: id.to_string(),
                span: Span::new(i, j),
            });
        }
        i = j.max(i + 1);
    }
    out
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Invalid(String),
    Capacity(usize),
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Invalid(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            ApiError::Capacity(n) => (StatusCode::TOO_MANY_REQUESTS, format!("session limit of {n} reached")),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(ErrorBody { error: msg })).into_response()
    }
}

impl From<CrsError> for ApiError {
    fn from(e: CrsError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

pub struct AppState {
    engine: Arc<Engine>,
    sessions: RwLock<HashMap<Uuid, Arc<Mutex<Session>>>>,
    log: Option<StdMutex<File>>,
}

const LOG_NAME: &str = "sessions.jsonl";

impl AppState {
    /// In-memory state; nothing is persisted.
    pub fn new(engine: Engine) -> Self {
        AppState {
            engine: Arc::new(engine),
            sessions: RwLock::new(HashMap::new()),
            log: None,
        }
    }

    /// State backed by `dir/sessions.jsonl`, replaying whatever it holds.
    pub fn persistent(engine: Engine, dir: impl AsRef<Path>) -> crs_core::Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| CrsError::io(dir, e))?;
        let path = dir.join(LOG_NAME);
        let sessions = replay(&path)?;
        info!(sessions = sessions.len(), path = %path.display(), "session log replayed");
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| CrsError::io(&path, e))?;
        Ok(AppState {
            engine: Arc::new(engine),
            sessions: RwLock::new(
                sessions
                    .into_iter()
                    .map(|s| (s.id, Arc::new(Mutex::new(s))))
                    .collect(),
            ),
            log: Some(StdMutex::new(file)),
        })
    }

    fn append(&self, record: &LogRecord) -> Result<(), ApiError> {
        let Some(log) = &self.log else { return Ok(()) };
        let line = serde_json::to_string(record).expect("serializable") + "\n";
        let mut f = log.lock().map_err(|_| ApiError::Internal("session log poisoned".into()))?;
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| ApiError::Internal(format!("session log: {e}")))
    }

    async fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        let uuid = Uuid::parse_str(id).map_err(|_| ApiError::NotFound(format!("no session {id}")))?;
        self.sessions
            .read()
            .await
            .get(&uuid)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session {id}")))
    }
}

fn replay(path: &PathBuf) -> crs_core::Result<Vec<Session>> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(CrsError::io(path, e)),
    };
    let mut order = Vec::new();
    let mut by_id: HashMap<Uuid, Session> = HashMap::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CrsError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LogRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                // A crash can leave a torn final line.
                warn!(line = i + 1, error = %e, "skipping unreadable session record");
                continue;
            }
        };
        match record {
            LogRecord::Create { id, at } => {
                order.push(id);
                by_id.insert(
                    id,
                    Session {
                        id,
                        created_at: at,
                        updated_at: at,
                        utterances: Vec::new(),
                    },
                );
            }
            LogRecord::Turn { id, at, seeker, recommender } => {
                if let Some(s) = by_id.get_mut(&id) {
                    s.utterances.push(seeker);
                    s.utterances.push(recommender);
                    s.updated_at = at;
                }
            }
        }
    }
    Ok(order.into_iter().filter_map(|id| by_id.remove(&id)).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub id: Uuid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewMessage {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub variant: String,
    pub lambda: f64,
    pub mu: f64,
    pub sessions: usize,
    pub items: usize,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let e = &state.engine;
    Json(Health {
        status: "ok".into(),
        variant: e.model.config.variant.name().into(),
        lambda: e.config.fusion.lambda,
        mu: e.config.fusion.mu,
        sessions: state.sessions.read().await.len(),
        items: e.model.num_items(),
    })
}

async fn create_session(State(state): State<Arc<AppState>>) -> Result<(StatusCode, Json<Created>), ApiError> {
    let mut sessions = state.sessions.write().await;
    let limit = state.engine.config.max_sessions;
    if sessions.len() >= limit {
        return Err(ApiError::Capacity(limit));
    }
    let id = Uuid::new_v4();
    let at = now();
    state.append(&LogRecord::Create { id, at })?;
    sessions.insert(
        id,
        Arc::new(Mutex::new(Session {
            id,
            created_at: at,
            updated_at: at,
            utterances: Vec::new(),
        })),
    );
    Ok((StatusCode::CREATED, Json(Created { id })))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionView>, ApiError> {
    let session = state.session(&id).await?;
    let s = session.lock().await;
    let history = state.engine.history(&s.utterances);
    Ok(Json(SessionView {
        id: s.id,
        created_at: s.created_at,
        updated_at: s.updated_at,
        utterances: s.utterances.clone(),
        entity_history: state.engine.history_view(&history),
    }))
}

async fn post_message(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<NewMessage>, JsonRejection>,
) -> Result<Json<MessageReply>, ApiError> {
    let session = state.session(&id).await?;
    let Json(msg) = body.map_err(|e| ApiError::Invalid(e.body_text()))?;
    let text = msg.text.trim();
    if text.is_empty() {
        return Err(ApiError::Invalid("message text is empty".into()));
    }
    // Held across the model call: one in-flight message per session.
    let mut s = session.lock().await;
    let engine = state.engine.clone();
    let seeker = engine.seeker_utterance(text);
    let mut utterances = s.utterances.clone();
    utterances.push(seeker.clone());
    let (reply, recommender) = tokio::task::spawn_blocking(move || engine.respond(&utterances))
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))??;
    let at = now();
    state.append(&LogRecord::Turn {
        id: s.id,
        at,
        seeker: seeker.clone(),
        recommender: recommender.clone(),
    })?;
    s.utterances.push(seeker);
    s.utterances.push(recommender);
    s.updated_at = at;
    Ok(Json(reply))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/messages", post(post_message))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
