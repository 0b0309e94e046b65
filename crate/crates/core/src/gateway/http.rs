//! Client API.
//!
//! | route | |
//! |---|---|
//! | `POST /api/sessions` | new session `{clientId, outputTopic, createdAt}` |
//! | `POST /api/jobs?clientId=` | [`SubmitRequest`] → `{processJobId}` |
//! | `GET /api/jobs/{id}?clientId=` | [`JobRecord`] |
//! | `GET /api/algorithms` | ids from the dispatch config |
//! | `GET /api/stream?clientId=` | server-sent events, one [`JobRecord`] per event |
//! | `GET /api/health` | component → up |
//! | `POST /api/admin/reload` | re-read the dispatch config |
//!
//! The stream first replays records that were already final when the client
//! connected, then follows live. Clients should key records by
//! `processJobId`.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast;

use super::{ClientSession, Gateway, GatewayError, JobRecord, SubmitError, SubmitRequest};

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClientQuery {
    pub client_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Submitted {
    pub process_job_id: String,
}

impl GatewayError {
    pub fn status(&self) -> StatusCode {
        match self {
            GatewayError::UnknownSession(_)
            | GatewayError::UnknownAlgorithm(_)
            | GatewayError::UnknownJob(_) => StatusCode::NOT_FOUND,
            GatewayError::WrongClient(_) => StatusCode::FORBIDDEN,
            GatewayError::FunctionRejected { status, .. }
                if (400..500).contains(status) && *status != 401 && *status != 404 =>
            {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            GatewayError::FunctionRejected { .. } | GatewayError::FunctionUnreachable(_) => {
                StatusCode::BAD_GATEWAY
            }
            GatewayError::Config(_) => StatusCode::INTERNAL_SERVER_ERROR,
            GatewayError::Broker(_) => StatusCode::SERVICE_UNAVAILABLE,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            GatewayError::UnknownSession(_) => "UnknownSession",
            GatewayError::UnknownAlgorithm(_) => "UnknownAlgorithm",
            GatewayError::UnknownJob(_) => "UnknownJob",
            GatewayError::WrongClient(_) => "WrongClient",
            GatewayError::FunctionUnreachable(_) => "FunctionUnreachable",
            GatewayError::FunctionRejected { .. } => "FunctionRejected",
            GatewayError::Config(_) => "Config",
            GatewayError::Broker(_) => "Broker",
        }
    }
}

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        SubmitError::from(self).into_response()
    }
}

impl IntoResponse for SubmitError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.source.kind(), "message": self.source.to_string()});
        if let Some(id) = &self.process_job_id {
            body["processJobId"] = json!(id);
        }
        (self.source.status(), Json(body)).into_response()
    }
}

pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/jobs", post(submit))
        .route("/api/jobs/{id}", get(job))
        .route("/api/algorithms", get(algorithms))
        .route("/api/stream", get(stream))
        .route("/api/health", get(health))
        .route("/api/admin/reload", post(reload))
        .with_state(gateway)
}

async fn create_session(
    State(gw): State<Arc<Gateway>>,
) -> Result<(StatusCode, Json<ClientSession>), GatewayError> {
    Ok((StatusCode::CREATED, Json(gw.create_session().await?)))
}

async fn submit(
    State(gw): State<Arc<Gateway>>,
    Query(q): Query<ClientQuery>,
    Json(req): Json<SubmitRequest>,
) -> Result<(StatusCode, Json<Submitted>), SubmitError> {
    let process_job_id = gw.handle_submit(&q.client_id, req).await?;
    Ok((StatusCode::ACCEPTED, Json(Submitted { process_job_id })))
}

async fn job(
    State(gw): State<Arc<Gateway>>,
    Path(id): Path<String>,
    Query(q): Query<ClientQuery>,
) -> Result<Json<JobRecord>, GatewayError> {
    Ok(Json(gw.get_job(&q.client_id, &id)?))
}

async fn algorithms(State(gw): State<Arc<Gateway>>) -> Json<Vec<String>> {
    Json(gw.algorithms())
}

async fn health(State(gw): State<Arc<Gateway>>) -> Response {
    let report = gw.health();
    let up = report.values().all(|&v| v);
    let status = if up {
        StatusCode::OK
    } else {
        StatusCode::SERVICE_UNAVAILABLE
    };
    (
        status,
        Json(json!({"status": if up { "ok" } else { "degraded" }, "components": report})),
    )
        .into_response()
}

async fn reload(State(gw): State<Arc<Gateway>>) -> Result<Json<Vec<String>>, GatewayError> {
    let set = gw.config().reload()?;
    Ok(Json(set.ids().map(str::to_string).collect()))
}

fn to_event(record: &JobRecord) -> Result<Event, Infallible> {
    Ok(Event::default()
        .event("job")
        .json_data(record)
        .expect("job record serializes"))
}

async fn stream(
    State(gw): State<Arc<Gateway>>,
    Query(q): Query<ClientQuery>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, GatewayError> {
    let (rx, replay) = gw.subscribe(&q.client_id)?;
    drop(gw);
    let client_id = q.client_id;
    let live = stream::unfold(rx, move |mut rx| {
        let client_id = client_id.clone();
        async move {
            loop {
                match rx.recv().await {
                    Ok(record) => {
                        debug_assert_eq!(record.client_id, client_id);
                        return Some((to_event(&record), rx));
                    }
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        tracing::warn!(client = %client_id, skipped = n, "live channel lagged");
                    }
                    Err(broadcast::error::RecvError::Closed) => return None,
                }
            }
        }
    });
    let replay = stream::iter(replay.iter().map(to_event).collect::<Vec<_>>());
    Ok(Sse::new(replay.chain(live)).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}
