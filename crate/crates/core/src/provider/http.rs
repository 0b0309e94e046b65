//! HTTP surface of the mock provider and the matching client.
//!
//! - `POST   /jobs` with a [`JobRequest`] → `{"providerJobId": ...}`
//! - `GET    /jobs/{id}` → [`ProviderJob`]
//! - `GET    /jobs/{id}/queue_info` → `{"estimatedCompletionAt": ...}`
//! - `DELETE /jobs/{id}` → [`CancelOutcome`]
//! - `GET    /devices` → list of [`Device`]

use std::time::Duration;

use async_trait::async_trait;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

use super::{
    CancelOutcome, Device, JobRequest, Provider, ProviderError, ProviderJob, QuantumProvider,
};

const REMOTE_POLL_INTERVAL: Duration = Duration::from_millis(25);

impl IntoResponse for ProviderError {
    fn into_response(self) -> Response {
        let status = match &self {
            ProviderError::UnknownDevice(_) | ProviderError::UnknownJob(_) => {
                StatusCode::NOT_FOUND
            }
            ProviderError::CircuitTooWide { .. }
            | ProviderError::InvalidRequest(_)
            | ProviderError::NoEligibleDevice { .. }
            | ProviderError::InvalidFleet(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ProviderError::WaitTimeout(_) => StatusCode::REQUEST_TIMEOUT,
            ProviderError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        };
        (status, Json(self)).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Submitted {
    provider_job_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct QueueInfo {
    estimated_completion_at: Option<DateTime<Utc>>,
}

pub fn router(provider: Provider) -> Router {
    Router::new()
        .route("/jobs", post(submit))
        .route("/jobs/{id}", get(job).delete(cancel))
        .route("/jobs/{id}/queue_info", get(queue_info))
        .route("/devices", get(devices))
        .with_state(provider)
}

async fn submit(
    State(p): State<Provider>,
    Json(req): Json<JobRequest>,
) -> Result<(StatusCode, Json<Submitted>), ProviderError> {
    let provider_job_id = p.submit_job(req)?;
    Ok((StatusCode::CREATED, Json(Submitted { provider_job_id })))
}

async fn job(
    State(p): State<Provider>,
    Path(id): Path<String>,
) -> Result<Json<ProviderJob>, ProviderError> {
    Ok(Json(p.get_job(&id)?))
}

async fn queue_info(
    State(p): State<Provider>,
    Path(id): Path<String>,
) -> Result<Json<QueueInfo>, ProviderError> {
    Ok(Json(QueueInfo {
        estimated_completion_at: p.job_queue_info(&id)?,
    }))
}

async fn cancel(
    State(p): State<Provider>,
    Path(id): Path<String>,
) -> Result<Json<CancelOutcome>, ProviderError> {
    Ok(Json(p.cancel_job(&id)?))
}

async fn devices(State(p): State<Provider>) -> Json<Vec<Device>> {
    Json(p.device_snapshot())
}

/// [`QuantumProvider`] that talks to a provider over HTTP.
#[derive(Debug, Clone)]
pub struct RemoteProvider {
    base: Url,
    client: reqwest::Client,
}

fn unavailable(e: impl std::fmt::Display) -> ProviderError {
    ProviderError::Unavailable(e.to_string())
}

impl RemoteProvider {
    pub fn new(base: Url) -> Self {
        Self {
            base,
            client: reqwest::Client::new(),
        }
    }

    fn url(&self, path: &str) -> Result<Url, ProviderError> {
        self.base.join(path).map_err(unavailable)
    }

    async fn decode<T: serde::de::DeserializeOwned>(
        resp: reqwest::Response,
    ) -> Result<T, ProviderError> {
        let status = resp.status();
        let text = resp.text().await.map_err(unavailable)?;
        if status.is_success() {
            serde_json::from_str(&text).map_err(unavailable)
        } else {
            Err(serde_json::from_str(&text)
                .unwrap_or_else(|_| ProviderError::Unavailable(format!("HTTP {status}: {text}"))))
        }
    }
}

#[async_trait]
impl QuantumProvider for RemoteProvider {
    async fn devices(&self) -> Result<Vec<Device>, ProviderError> {
        let resp = self
            .client
            .get(self.url("devices")?)
            .send()
            .await
            .map_err(unavailable)?;
        Self::decode(resp).await
    }

    async fn submit(&self, request: JobRequest) -> Result<String, ProviderError> {
        let resp = self
            .client
            .post(self.url("jobs")?)
            .json(&request)
            .send()
            .await
            .map_err(unavailable)?;
        Ok(Self::decode::<Submitted>(resp).await?.provider_job_id)
    }

    async fn job(&self, provider_job_id: &str) -> Result<ProviderJob, ProviderError> {
        let resp = self
            .client
            .get(self.url(&format!("jobs/{provider_job_id}"))?)
            .send()
            .await
            .map_err(unavailable)?;
        Self::decode(resp).await
    }

    async fn queue_info(
        &self,
        provider_job_id: &str,
    ) -> Result<Option<DateTime<Utc>>, ProviderError> {
        let resp = self
            .client
            .get(self.url(&format!("jobs/{provider_job_id}/queue_info"))?)
            .send()
            .await
            .map_err(unavailable)?;
        Ok(Self::decode::<QueueInfo>(resp).await?.estimated_completion_at)
    }

    async fn wait_for_result(
        &self,
        provider_job_id: &str,
        timeout: Duration,
    ) -> Result<ProviderJob, ProviderError> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let job = self.job(provider_job_id).await?;
            if job.state.is_final() {
                return Ok(job);
            }
            if tokio::time::Instant::now() + REMOTE_POLL_INTERVAL > deadline {
                return Err(ProviderError::WaitTimeout(provider_job_id.to_string()));
            }
            tokio::time::sleep(REMOTE_POLL_INTERVAL).await;
        }
    }

    async fn cancel(&self, provider_job_id: &str) -> Result<CancelOutcome, ProviderError> {
        let resp = self
            .client
            .delete(self.url(&format!("jobs/{provider_job_id}"))?)
            .send()
            .await
            .map_err(unavailable)?;
        Self::decode(resp).await
    }
}
