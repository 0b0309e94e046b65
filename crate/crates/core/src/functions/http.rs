//! `POST /fn/{algorithmId}` for every registered algorithm.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};

use super::{ActionRequest, ActionResponse, FunctionError, FunctionRuntime};

impl FunctionError {
    pub fn status(&self) -> StatusCode {
        match self {
            FunctionError::Unauthorized => StatusCode::UNAUTHORIZED,
            FunctionError::UnknownAlgorithm(_) => StatusCode::NOT_FOUND,
            FunctionError::DuplicateAlgorithm(_)
            | FunctionError::InvalidRequest(_)
            | FunctionError::Build(_)
            | FunctionError::NoEligibleDevice(_) => StatusCode::UNPROCESSABLE_ENTITY,
            FunctionError::Submit(_) | FunctionError::BrokerUnavailable(_) => {
                StatusCode::BAD_GATEWAY
            }
        }
    }
}

impl IntoResponse for FunctionError {
    fn into_response(self) -> Response {
        (self.status(), Json(ActionResponse::failure(self.to_string()))).into_response()
    }
}

pub fn router(runtime: Arc<FunctionRuntime>) -> Router {
    Router::new()
        .route("/fn/{algorithm_id}", post(invoke))
        .with_state(runtime)
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
}

async fn invoke(
    State(runtime): State<Arc<FunctionRuntime>>,
    Path(algorithm_id): Path<String>,
    headers: HeaderMap,
    body: String,
) -> Result<Json<ActionResponse>, FunctionError> {
    // auth before parsing so an anonymous caller learns nothing about the schema
    let token = bearer(&headers);
    if token.is_none() {
        return Err(FunctionError::Unauthorized);
    }
    let mut request: ActionRequest = serde_json::from_str(&body)
        .map_err(|e| FunctionError::InvalidRequest(e.to_string()))?;
    request.algorithm_id = algorithm_id;
    runtime.invoke(token, request).await.map(Json)
}
