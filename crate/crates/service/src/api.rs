//! HTTP routes over a [`SessionStore`].

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::session::{CatalogDoc, SessionConfig, SessionError, SessionStore, SolveOverrides};

pub type AppState = Arc<SessionStore>;

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

pub struct ApiError(SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        use ordutil::Error as E;
        let (status, code) = match &self.0 {
            SessionError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            SessionError::UnknownStatement(_) => (StatusCode::NOT_FOUND, "unknown_statement"),
            SessionError::UnknownItem(_) => (StatusCode::NOT_FOUND, "unknown_item"),
            SessionError::Stale { .. } => (StatusCode::CONFLICT, "stale"),
            SessionError::NotSolved => (StatusCode::CONFLICT, "not_solved"),
            SessionError::Invalid(E::OracleLimit { .. }) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "oracle_limit")
            }
            SessionError::Invalid(E::Syntax { .. } | E::Statement { .. }) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "statement")
            }
            SessionError::Invalid(E::ModelCapExceeded { .. }) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "model_cap")
            }
            SessionError::Invalid(E::SelfContradictory { .. }) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "self_contradictory")
            }
            SessionError::Invalid(E::NonFinite(_)) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "non_finite")
            }
            SessionError::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            SessionError::Log(_) => (StatusCode::INTERNAL_SERVER_ERROR, "event_log"),
        };
        let body = ErrorBody {
            error: code,
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub schema: serde_json::Value,
    pub catalog: CatalogDoc,
    #[serde(default)]
    pub config: SessionConfig,
}

#[derive(Debug, Serialize)]
struct Created {
    id: String,
    revision: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddRequest {
    pub text: String,
}

#[derive(Debug, Deserialize)]
struct TopQuery {
    top: Option<usize>,
}

#[derive(Debug, Serialize)]
struct UtilityBody {
    id: String,
    utility: f64,
    revision: u64,
}

#[derive(Debug, Serialize)]
struct Deleted {
    revision: u64,
}

#[derive(Debug, Serialize)]
struct Explanation {
    revision: u64,
    weights: Vec<ordutil::solver::NamedWeight>,
}

#[derive(Debug, Serialize)]
struct Diagnostics {
    stale: bool,
    #[serde(flatten)]
    report: crate::session::SolveReport,
}

pub fn router(store: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info))
        .route("/sessions/{id}/statements", post(add_statements))
        .route("/sessions/{id}/statements/{sid}", delete(delete_statement))
        .route("/sessions/{id}/solve", post(solve))
        .route("/sessions/{id}/ranking", get(ranking))
        .route("/sessions/{id}/utility/{item}", get(utility))
        .route("/sessions/{id}/explain", get(explain))
        .route("/sessions/{id}/diagnostics", get(diagnostics))
        .with_state(store)
}

/// Runs CPU-bound session work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, SessionError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(SessionError::Log(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

async fn create_session(
    State(store): State<AppState>,
    Json(req): Json<CreateRequest>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let id = blocking(move || store.create(req.schema, req.catalog, req.config)).await?;
    Ok((StatusCode::CREATED, Json(Created { id, revision: 0 })))
}

async fn session_info(
    State(store): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<crate::session::SessionInfo> {
    let session = store.get(&id)?;
    let info = session.read().info();
    Ok(Json(info))
}

async fn add_statements(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<AddRequest>,
) -> ApiResult<crate::session::AddSummary> {
    let session = store.get(&id)?;
    let summary = blocking(move || session.write().add_statements(&req.text)).await?;
    Ok(Json(summary))
}

async fn delete_statement(
    State(store): State<AppState>,
    Path((id, sid)): Path<(String, String)>,
) -> ApiResult<Deleted> {
    let session = store.get(&id)?;
    let revision = session.write().delete_statement(&sid)?;
    Ok(Json(Deleted { revision }))
}

async fn solve(
    State(store): State<AppState>,
    Path(id): Path<String>,
    body: Option<Json<SolveOverrides>>,
) -> ApiResult<crate::session::SolveReport> {
    let session = store.get(&id)?;
    let overrides = body.map(|Json(o)| o).unwrap_or_default();
    let report = blocking(move || session.write().solve(&overrides)).await?;
    Ok(Json(report))
}

async fn ranking(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<TopQuery>,
) -> ApiResult<crate::session::RankingView> {
    let session = store.get(&id)?;
    let view = blocking(move || session.read().ranking(q.top)).await?;
    Ok(Json(view))
}

async fn utility(
    State(store): State<AppState>,
    Path((id, item)): Path<(String, String)>,
) -> ApiResult<UtilityBody> {
    let session = store.get(&id)?;
    let guard = session.read();
    let utility = guard.utility(&item)?;
    Ok(Json(UtilityBody {
        id: item,
        utility,
        revision: guard.revision(),
    }))
}

async fn explain(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<TopQuery>,
) -> ApiResult<Explanation> {
    let session = store.get(&id)?;
    let top = q.top.unwrap_or(20);
    blocking(move || {
        let guard = session.read();
        Ok(Explanation {
            revision: guard.revision(),
            weights: guard.explain(top)?,
        })
    })
    .await
    .map(Json)
}

async fn diagnostics(
    State(store): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Diagnostics> {
    let session = store.get(&id)?;
    let (report, stale) = session.read().diagnostics()?;
    Ok(Json(Diagnostics { stale, report }))
}
