//! Annotation HTTP API and static UI host.
//!
//! All project access goes through one mutex, so the JSONL files have a
//! single writer. Item payloads are blind: they carry the source question and
//! probe texts only, never the reference answer, the template, or another
//! annotator's labels.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Mutex;

use crate::annotation::RoundError;
use crate::domain::{
    AnnotationRound, Criterion, Probe, RatingLabel, RoundState, Subject, Violation,
};
use crate::project::{
    agreement_document, complete_round, load_round, open_round, questions, rounds, submit_rating,
    OpenRoundRequest, Project, ProjectError, RatingSubmission, PROBES,
};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone)]
pub struct AppState {
    project: Arc<Mutex<Project>>,
    token: Option<String>,
    ui_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(project: Project) -> Self {
        Self {
            project: Arc::new(Mutex::new(project)),
            token: None,
            ui_dir: None,
        }
    }

    /// Requires `Authorization: Bearer <token>` on every API call.
    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    /// Serves `dir/index.html` at `/` and other files beneath it.
    pub fn with_ui_dir(mut self, dir: PathBuf) -> Self {
        self.ui_dir = Some(dir);
        self
    }
}

/// Error body shared by every endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub violations: Vec<Violation>,
}

struct Failure(StatusCode, ApiError);

impl Failure {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self(
            status,
            ApiError {
                code: code.into(),
                message: message.into(),
                violations: Vec::new(),
            },
        )
    }
}

impl From<ProjectError> for Failure {
    fn from(e: ProjectError) -> Self {
        use StatusCode as S;
        let msg = e.to_string();
        match e {
            ProjectError::Round(RoundError::Invalid(v)) => Self(
                S::UNPROCESSABLE_ENTITY,
                ApiError {
                    code: "validation".into(),
                    message: msg,
                    violations: v,
                },
            ),
            ProjectError::Round(RoundError::ImmutableRound(_)) => Self::new(S::CONFLICT, "immutable round", msg),
            ProjectError::Round(RoundError::RoundNotClosed(_)) => Self::new(S::CONFLICT, "round not closed", msg),
            ProjectError::Round(RoundError::IncompleteRound { .. }) => {
                Self::new(S::CONFLICT, "incomplete round", msg)
            }
            ProjectError::Round(RoundError::BadRound(_)) | ProjectError::Invalid(_) => {
                Self::new(S::UNPROCESSABLE_ENTITY, "invalid", msg)
            }
            ProjectError::MissingStage(_) => Self::new(S::CONFLICT, "missing stage", msg),
            ProjectError::NotFound(_) => Self::new(S::NOT_FOUND, "not found", msg),
            _ => Self::new(S::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, Failure>;

/// Round metadata as shown to annotators: who has finished stays hidden
/// until the round closes.
fn blind_round(mut r: AnnotationRound) -> AnnotationRound {
    if r.state != RoundState::Closed {
        r.completed_by.clear();
    }
    r
}

/// One thing to rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub subject_id: String,
    pub subject: Subject,
    pub criterion: Criterion,
    pub question_text: String,
    /// One probe for relevance, the whole group for diversity.
    pub probe_texts: Vec<String>,
    /// This annotator's own label, if already given.
    pub current: Option<RatingLabel>,
}

#[derive(Debug, Deserialize)]
struct ItemsQuery {
    annotator: String,
}

#[derive(Debug, Deserialize)]
struct CompleteBody {
    annotator_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StateReply {
    pub round_id: String,
    pub state: RoundState,
}

async fn list_rounds(State(s): State<AppState>) -> ApiResult<Vec<AnnotationRound>> {
    let p = s.project.lock().await;
    Ok(Json(rounds(&p)?.into_iter().map(blind_round).collect()))
}

async fn create_round(
    State(s): State<AppState>,
    Json(req): Json<OpenRoundRequest>,
) -> Result<(StatusCode, Json<AnnotationRound>), Failure> {
    let p = s.project.lock().await;
    let book = open_round(&p, &req)?;
    Ok((StatusCode::CREATED, Json(blind_round(book.round))))
}

async fn get_round(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<AnnotationRound> {
    let p = s.project.lock().await;
    Ok(Json(blind_round(load_round(&p, &id)?.round)))
}

async fn round_items(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ItemsQuery>,
) -> ApiResult<Vec<ItemView>> {
    let p = s.project.lock().await;
    let book = load_round(&p, &id)?;
    if !book.round.annotator_ids.contains(&q.annotator) {
        return Err(Failure::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "unknown annotator",
            format!("{} is not an annotator of round {id}", q.annotator),
        ));
    }
    let texts: HashMap<String, String> = questions(&p)?.into_iter().map(|q| (q.id, q.text)).collect();
    let mut by_question: HashMap<String, Vec<Probe>> = HashMap::new();
    let mut by_id: HashMap<String, Probe> = HashMap::new();
    for r in p.read::<Probe>(PROBES)? {
        let probe = r.body;
        if probe.template_version != book.round.template_version {
            continue;
        }
        by_id.insert(probe.id.clone(), probe.clone());
        by_question.entry(probe.question_id.clone()).or_default().push(probe);
    }
    let missing = |what: &str| ProjectError::NotFound(what.to_string());
    let mut items = Vec::with_capacity(book.round.subjects.len());
    for subject in &book.round.subjects {
        let (subject_id, qid, probe_texts) = match subject {
            Subject::Relevance { probe_id } => {
                let probe = by_id.get(probe_id).ok_or_else(|| missing(probe_id))?;
                (probe_id.clone(), probe.question_id.clone(), vec![probe.text.clone()])
            }
            Subject::Diversity { question_id } => {
                let mut group = by_question.get(question_id).cloned().unwrap_or_default();
                group.sort_by_key(|p| p.ordinal);
                (
                    crate::domain::group_id(question_id, book.round.template_version),
                    question_id.clone(),
                    group.into_iter().map(|p| p.text).collect(),
                )
            }
        };
        let question_text = texts.get(&qid).ok_or_else(|| missing(&qid))?.clone();
        items.push(ItemView {
            subject_id,
            subject: subject.clone(),
            criterion: subject.criterion(),
            question_text,
            probe_texts,
            current: book.label_of(&q.annotator, subject),
        });
    }
    // Pending first; stable within each half.
    items.sort_by_key(|i| i.current.is_some());
    Ok(Json(items))
}

async fn post_rating(State(s): State<AppState>, Json(sub): Json<RatingSubmission>) -> ApiResult<StateReply> {
    let p = s.project.lock().await;
    let round_id = sub.round_id.clone();
    let state = submit_rating(&p, sub)?;
    Ok(Json(StateReply { round_id, state }))
}

async fn post_complete(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<CompleteBody>,
) -> ApiResult<StateReply> {
    let p = s.project.lock().await;
    let state = complete_round(&p, &id, &body.annotator_id)?;
    Ok(Json(StateReply { round_id: id, state }))
}

async fn get_agreement(
    State(s): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<crate::project::AgreementDocument> {
    let p = s.project.lock().await;
    let book = load_round(&p, &id)?;
    Ok(Json(agreement_document(&p, &book)?))
}

async fn get_codebook(
    State(s): State<AppState>,
    Path(version): Path<String>,
) -> ApiResult<crate::domain::Codebook> {
    let p = s.project.lock().await;
    let v = match version.as_str() {
        "latest" => None,
        other => Some(other.parse::<u32>().map_err(|_| {
            Failure::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", format!("bad codebook version {other:?}"))
        })?),
    };
    Ok(Json(p.codebook(v)?))
}

const PLACEHOLDER: &str = "<!doctype html><title>annotation</title>\
<p>No UI bundle is installed. Point <code>audit serve --ui</code> at a built bundle, \
or use the JSON API under <code>/api</code>.</p>";

async fn index(State(s): State<AppState>) -> Response {
    static_file(&s, "index.html").await
}

async fn asset(State(s): State<AppState>, Path(path): Path<String>) -> Response {
    static_file(&s, &path).await
}

async fn static_file(s: &AppState, rel: &str) -> Response {
    let Some(dir) = &s.ui_dir else {
        return if rel == "index.html" {
            Html(PLACEHOLDER).into_response()
        } else {
            StatusCode::NOT_FOUND.into_response()
        };
    };
    if rel.split('/').any(|c| c == ".." || c.is_empty()) {
        return StatusCode::NOT_FOUND.into_response();
    }
    match std::fs::read(dir.join(rel)) {
        Ok(bytes) => {
            let mime = match rel.rsplit('.').next() {
                Some("html") => "text/html; charset=utf-8",
                Some("js") => "text/javascript",
                Some("css") => "text/css",
                Some("json") => "application/json",
                Some("svg") => "image/svg+xml",
                _ => "application/octet-stream",
            };
            ([(header::CONTENT_TYPE, mime)], bytes).into_response()
        }
        Err(_) if rel == "index.html" => Html(PLACEHOLDER).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

async fn require_token(State(s): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &s.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return Failure::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/rounds", get(list_rounds).post(create_round))
        .route("/rounds/{id}", get(get_round))
        .route("/rounds/{id}/items", get(round_items))
        .route("/rounds/{id}/complete", post(post_complete))
        .route("/rounds/{id}/agreement", get(get_agreement))
        .route("/ratings", post(post_rating))
        .route("/codebook/{version}", get(get_codebook))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .nest("/api", api)
        .route("/", get(index))
        .route("/{*path}", get(asset))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(state: AppState, addr: SocketAddr) -> Result<(), ServeError> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            ServeError::PortInUse(addr.port())
        } else {
            ServeError::Io(e)
        }
    })?;
    eprintln!("annotation server on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
