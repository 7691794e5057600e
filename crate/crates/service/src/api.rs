use std::future::Future;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use modelsel_core::policies::LeaderboardRow;
use modelsel_core::PolicySpec;
use serde::{Deserialize, Serialize};

use crate::error::{ErrorBody, ServiceError};
use crate::session::{Session, SessionStatus, Transcript};
use crate::store::{AppState, Collection};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub collection: String,
    pub policy: PolicySpec,
    pub budget: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostLabel {
    pub query_id: usize,
    pub label: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryView {
    /// Echo this back when posting the label.
    pub query_id: usize,
    pub example_index: usize,
    pub example_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub display: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassChoice {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub step: usize,
    pub budget: usize,
    pub status: SessionStatus,
    pub collection: String,
    pub policy: String,
    pub query: Option<QueryView>,
    pub classes: Vec<ClassChoice>,
    pub leaderboard: Vec<LeaderboardRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeaderboardView {
    pub session_id: String,
    pub step: usize,
    pub budget: usize,
    pub status: SessionStatus,
    pub leaderboard: Vec<LeaderboardRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionView {
    pub model_index: usize,
    pub model_name: String,
    pub labeled_accuracy: f64,
    pub posterior_mass: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalizeView {
    pub session_id: String,
    pub step: usize,
    pub budget: usize,
    pub status: SessionStatus,
    pub selection: SelectionView,
    pub transcript: Transcript,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthView {
    pub status: String,
    pub sessions: usize,
    pub collections: Vec<String>,
}

pub struct ApiError {
    error: ServiceError,
    session: Option<(String, usize, usize)>,
}

impl From<ServiceError> for ApiError {
    fn from(error: ServiceError) -> Self {
        Self { error, session: None }
    }
}

impl ApiError {
    fn at(error: ServiceError, session: &Session) -> Self {
        Self {
            error,
            session: Some((session.id().to_owned(), session.step(), session.budget())),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = ErrorBody::new(&self.error);
        if let Some((id, step, budget)) = self.session {
            body.session_id = Some(id);
            body.step = Some(step);
            body.budget = Some(budget);
        }
        (self.error.status(), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ServiceError::invalid(e.body_text()).into())
}

fn session_view(session: &Session, collection: &Collection) -> SessionView {
    let matrix = &collection.matrix;
    SessionView {
        session_id: session.id().to_owned(),
        step: session.step(),
        budget: session.budget(),
        status: session.status(),
        collection: collection.id.clone(),
        policy: session.transcript().policy.label(),
        query: session.current_query().map(|i| QueryView {
            query_id: i,
            example_index: i,
            example_id: matrix.example_ids()[i].clone(),
            display: collection.display(i).map(str::to_owned),
        }),
        classes: (0..matrix.num_classes() as u32)
            .map(|c| ClassChoice {
                id: c,
                name: collection.class_name(c),
            })
            .collect(),
        leaderboard: session.leaderboard(matrix),
    }
}

async fn health(State(app): State<Arc<AppState>>) -> Json<HealthView> {
    Json(HealthView {
        status: "ok".into(),
        sessions: app.session_count(),
        collections: app.collection_ids(),
    })
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let req = body(payload)?;
    let collection = app.collection(&req.collection)?;
    let id = uuid::Uuid::new_v4();
    let seed = req.seed.unwrap_or(id.as_u64_pair().1);
    let session = Session::create(id.simple().to_string(), &collection.id, &collection.matrix, req.policy, req.budget, seed)?;
    app.checkpoint(&session)?;
    let view = session_view(&session, &collection);
    app.insert(session);
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_query(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<SessionView> {
    let handle = app.session(&id)?;
    let session = handle.lock().expect("session poisoned");
    let collection = app.collection(&session.transcript().collection)?;
    Ok(Json(session_view(&session, &collection)))
}

async fn post_label(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<PostLabel>, JsonRejection>,
) -> ApiResult<SessionView> {
    let handle = app.session(&id)?;
    let req = body(payload)?;
    let mut session = handle.lock().expect("session poisoned");
    let collection = app.collection(&session.transcript().collection)?;
    session
        .post_label(&collection.matrix, req.query_id, req.label)
        .map_err(|e| ApiError::at(e, &session))?;
    app.checkpoint(&session)?;
    Ok(Json(session_view(&session, &collection)))
}

async fn get_leaderboard(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<LeaderboardView> {
    let handle = app.session(&id)?;
    let session = handle.lock().expect("session poisoned");
    let collection = app.collection(&session.transcript().collection)?;
    Ok(Json(LeaderboardView {
        session_id: session.id().to_owned(),
        step: session.step(),
        budget: session.budget(),
        status: session.status(),
        leaderboard: session.leaderboard(&collection.matrix),
    }))
}

async fn finalize(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<FinalizeView> {
    let handle = app.session(&id)?;
    let mut session = handle.lock().expect("session poisoned");
    let collection = app.collection(&session.transcript().collection)?;
    let pick = session
        .finalize(&collection.matrix)
        .map_err(|e| ApiError::at(e, &session))?;
    app.checkpoint(&session)?;
    Ok(Json(FinalizeView {
        session_id: session.id().to_owned(),
        step: session.step(),
        budget: session.budget(),
        status: session.status(),
        selection: SelectionView {
            model_index: pick.model_index,
            model_name: collection.matrix.model_names()[pick.model_index].clone(),
            labeled_accuracy: pick.labeled_accuracy,
            posterior_mass: pick.posterior_mass,
        },
        transcript: session.transcript().clone(),
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/query", get(get_query))
        .route("/sessions/{id}/label", post(post_label))
        .route("/sessions/{id}/leaderboard", get(get_leaderboard))
        .route("/sessions/{id}/finalize", post(finalize))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then checkpoints every session.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<usize> {
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    state
        .checkpoint_all()
        .map_err(|e| std::io::Error::other(e.to_string()))
}
