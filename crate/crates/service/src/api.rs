//! Request handlers and wire types. Every JSON body carries `v`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use dba_core::decoder::StripZone;
use dba_core::learner::{ExperimentConfig, OracleKind, StepRecord, SCHEMA_VERSION};
use dba_core::model::Label;
use serde::{Deserialize, Serialize};

use crate::session::{Answer, AnswerError, IssuedLine, Session};
use crate::{AppState, ServiceError};

pub(crate) struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found() -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown session")
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message.to_string())
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self::internal(e)
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    v: u32,
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            v: SCHEMA_VERSION,
            error: &self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub v: u32,
    pub session_id: String,
    pub config: ExperimentConfig,
    pub iteration: usize,
    pub accuracy: f64,
    pub average_precision: f64,
    pub labeled: usize,
    pub boundary_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub v: u32,
    /// No further queries: the budget is spent or the pool is empty.
    pub finished: bool,
    pub iteration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<LineView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineView {
    pub line_id: u64,
    /// False when no line could be built through the query sample; the strip
    /// then holds that sample alone and only `no_change` is accepted.
    pub has_line: bool,
    pub sample_count: usize,
    pub strip_url: String,
    pub strip_width: usize,
    pub strip_height: usize,
    /// Pixel columns of each image in the strip.
    pub zones: Vec<StripZone>,
    pub t_values: Vec<f64>,
    /// Strip image nearest the query sample, whose label is requested.
    pub query_index: usize,
}

impl LineView {
    fn of(session_id: &str, issued: &IssuedLine) -> Self {
        Self {
            line_id: issued.line_id,
            has_line: issued.has_line,
            sample_count: issued.t_values.len(),
            strip_url: format!("/sessions/{session_id}/strip/{}.png", issued.line_id),
            strip_width: issued.width,
            strip_height: issued.height,
            zones: issued.zones.clone(),
            t_values: issued.t_values.clone(),
            query_index: issued.query_index,
        }
    }
}

/// Body of `POST /sessions/{id}/annotation`: either `index` (the first
/// image of the new class) or `"no_change": true`, plus the label of the
/// query sample (`-1` or `1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRequest {
    pub line_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(default)]
    pub no_change: bool,
    pub label: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationResponse {
    pub v: u32,
    pub line_id: u64,
    pub iteration: usize,
    pub accuracy: f64,
    pub average_precision: f64,
    pub labeled: usize,
    pub boundary_points: usize,
    /// The query budget is spent.
    pub finished: bool,
}

impl AnnotationResponse {
    fn of(step: &StepRecord, n_queries: usize) -> Self {
        Self {
            v: SCHEMA_VERSION,
            line_id: step.line_id,
            iteration: step.iteration,
            accuracy: step.accuracy,
            average_precision: step.average_precision,
            labeled: step.labeled,
            boundary_points: step.boundary_points,
            finished: step.iteration >= n_queries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveResponse {
    pub v: u32,
    pub iteration: usize,
    pub accuracies: Vec<f64>,
    pub average_precisions: Vec<f64>,
    pub aulc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateResponse {
    pub v: u32,
    pub iteration: usize,
    pub n_queries: usize,
    pub labeled: usize,
    pub boundary_points: usize,
    pub pool: usize,
    pub pending_line_id: Option<u64>,
    pub finished: bool,
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::unprocessable(format!("invalid body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)
}

fn session(state: &AppState, id: &str) -> ApiResult<Arc<Session>> {
    state.lookup(id)?.ok_or_else(ApiError::not_found)
}

pub(crate) async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let mut config: ExperimentConfig = if body.iter().all(u8::is_ascii_whitespace) {
        ExperimentConfig::default()
    } else {
        parse_json(&body)?
    };
    config.oracle = OracleKind::Human;
    config.validate().map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let st = state.clone();
    let session = blocking(move || {
        Session::create(
            st.data.clone(),
            config,
            st.config.transcript_dir.as_deref(),
            st.config.render,
        )
    })
    .await?
    .map_err(|e| match e {
        ServiceError::Core(e) => ApiError::unprocessable(e.to_string()),
        other => ApiError::internal(other),
    })?;
    let session = Arc::new(session);
    let snap = session.snapshot();
    let body = SessionCreated {
        v: SCHEMA_VERSION,
        session_id: session.id().to_string(),
        config: session.config(),
        iteration: snap.iteration,
        accuracy: snap.curve.accuracies[0],
        average_precision: snap.curve.average_precisions[0],
        labeled: snap.labeled,
        boundary_points: snap.boundary_points,
    };
    state.insert(session);
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

pub(crate) async fn get_query(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<QueryResponse>> {
    let session = session(&state, &id)?;
    let s = session.clone();
    let issued = blocking(move || s.query()).await?.map_err(ApiError::internal)?;
    let snap = session.snapshot();
    Ok(Json(QueryResponse {
        v: SCHEMA_VERSION,
        finished: issued.is_none(),
        iteration: snap.iteration,
        line: issued.map(|i| LineView::of(session.id(), &i)),
    }))
}

pub(crate) async fn post_annotation(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<AnnotationResponse>> {
    let session = session(&state, &id)?;
    let req: AnnotationRequest = parse_json(&body)?;
    let label = Label::try_from(req.label).map_err(|_| ApiError::unprocessable("label must be -1 or 1"))?;
    let index = match (req.index, req.no_change) {
        (Some(k), false) => Some(k),
        (None, true) => None,
        _ => return Err(ApiError::unprocessable("give exactly one of index or no_change")),
    };
    let answer = Answer {
        line_id: req.line_id,
        index,
        label,
    };
    let s = session.clone();
    let step = blocking(move || s.answer(answer)).await?.map_err(|e| match e {
        AnswerError::NoPending => ApiError::new(StatusCode::CONFLICT, "no line is pending"),
        AnswerError::Stale { pending } => ApiError::new(
            StatusCode::CONFLICT,
            match pending {
                Some(p) => format!("line {} is not pending (pending line is {p})", req.line_id),
                None => format!("line {} is not pending", req.line_id),
            },
        ),
        AnswerError::Conflict => ApiError::new(
            StatusCode::CONFLICT,
            format!("line {} was already annotated differently", req.line_id),
        ),
        AnswerError::OutOfRange { index, count } => {
            ApiError::unprocessable(format!("index {index} outside 0..{count}"))
        }
        AnswerError::NeedsNoChange => ApiError::unprocessable("this query has no line; send no_change"),
        AnswerError::Core(e) => ApiError::internal(e),
        AnswerError::Io(e) => ApiError::internal(e),
    })?;
    Ok(Json(AnnotationResponse::of(&step, session.snapshot().n_queries)))
}

pub(crate) async fn get_curve(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<CurveResponse>> {
    let snap = session(&state, &id)?.snapshot();
    Ok(Json(CurveResponse {
        v: SCHEMA_VERSION,
        iteration: snap.iteration,
        aulc: snap.curve.aulc().ok(),
        accuracies: snap.curve.accuracies.clone(),
        average_precisions: snap.curve.average_precisions.clone(),
    }))
}

pub(crate) async fn get_state(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<StateResponse>> {
    let snap = session(&state, &id)?.snapshot();
    Ok(Json(StateResponse {
        v: SCHEMA_VERSION,
        iteration: snap.iteration,
        n_queries: snap.n_queries,
        labeled: snap.labeled,
        boundary_points: snap.boundary_points,
        pool: snap.pool,
        pending_line_id: snap.pending_line_id,
        finished: snap.finished,
    }))
}

pub(crate) async fn get_strip(
    State(state): State<Arc<AppState>>,
    Path((id, file)): Path<(String, String)>,
) -> ApiResult<Response> {
    let session = session(&state, &id)?;
    let line_id: u64 = file
        .strip_suffix(".png")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown strip"))?;
    let issued = session
        .issued(line_id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown strip"))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], issued.png.clone()).into_response())
}
