//! HTTP exposure of the broker, mounted on the gateway in multi-process mode.
//!
//! Routes (all JSON unless noted):
//!
//! - `POST /broker/topics` `{"name": ...}`
//! - `POST /broker/topics/{topic}/messages` raw text body, returns `{"offset": n}`
//! - `GET  /broker/topics/{topic}/messages?groupId=&max=&timeoutMs=`
//! - `POST /broker/topics/{topic}/commit` `{"groupId": ..., "offset": n}`
//!
//! Failures carry the serialized [`BrokerError`] as the body.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use url::Url;

use super::{Broker, BrokerError, EventBus, Message, Subscription};

/// Longest a remote consume may block server-side.
const MAX_REMOTE_WAIT: Duration = Duration::from_secs(30);

impl IntoResponse for BrokerError {
    fn into_response(self) -> Response {
        let status = match &self {
            BrokerError::DuplicateTopic(_) | BrokerError::OffsetRegression { .. } => {
                StatusCode::CONFLICT
            }
            BrokerError::UnknownTopic(_) => StatusCode::NOT_FOUND,
            BrokerError::InvalidName(_)
            | BrokerError::EmptyPayload
            | BrokerError::InvalidBatchSize => StatusCode::BAD_REQUEST,
            BrokerError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        };
        (status, Json(self)).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CreateTopic {
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Produced {
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ConsumeQuery {
    group_id: String,
    #[serde(default = "default_max")]
    max: usize,
    #[serde(default)]
    timeout_ms: u64,
}

fn default_max() -> usize {
    64
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct CommitBody {
    group_id: String,
    offset: i64,
}

pub fn router(broker: Arc<Broker>) -> Router {
    Router::new()
        .route("/broker/topics", post(create_topic))
        .route(
            "/broker/topics/{topic}/messages",
            post(produce).get(consume),
        )
        .route("/broker/topics/{topic}/commit", post(commit))
        .with_state(broker)
}

async fn create_topic(
    State(broker): State<Arc<Broker>>,
    Json(body): Json<CreateTopic>,
) -> Result<StatusCode, BrokerError> {
    broker.create_topic(&body.name)?;
    Ok(StatusCode::CREATED)
}

async fn produce(
    State(broker): State<Arc<Broker>>,
    Path(topic): Path<String>,
    payload: String,
) -> Result<Json<Produced>, BrokerError> {
    let offset = broker.produce(&topic, payload)?;
    Ok(Json(Produced { offset }))
}

async fn consume(
    State(broker): State<Arc<Broker>>,
    Path(topic): Path<String>,
    Query(q): Query<ConsumeQuery>,
) -> Result<Json<Vec<Message>>, BrokerError> {
    let sub = Subscription::new(topic, q.group_id);
    let timeout = Duration::from_millis(q.timeout_ms).min(MAX_REMOTE_WAIT);
    Ok(Json(broker.consume(&sub, q.max, timeout).await?))
}

async fn commit(
    State(broker): State<Arc<Broker>>,
    Path(topic): Path<String>,
    Json(body): Json<CommitBody>,
) -> Result<StatusCode, BrokerError> {
    broker.commit(&Subscription::new(topic, body.group_id), body.offset)?;
    Ok(StatusCode::NO_CONTENT)
}

/// [`EventBus`] backed by a broker reachable over HTTP.
#[derive(Debug, Clone)]
pub struct RemoteBus {
    base: Url,
    client: reqwest::Client,
}

impl RemoteBus {
    pub fn new(base: Url) -> Self {
        Self {
            base,
            client: reqwest::Client::new(),
        }
    }

    fn url(&self, path: &str) -> Result<Url, BrokerError> {
        self.base
            .join(path)
            .map_err(|e| BrokerError::Unavailable(e.to_string()))
    }

    async fn check(resp: reqwest::Response) -> Result<reqwest::Response, BrokerError> {
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status();
        let text = resp.text().await.unwrap_or_default();
        Err(serde_json::from_str(&text)
            .unwrap_or_else(|_| BrokerError::Unavailable(format!("HTTP {status}: {text}"))))
    }
}

fn unavailable(e: reqwest::Error) -> BrokerError {
    BrokerError::Unavailable(e.to_string())
}

#[async_trait]
impl EventBus for RemoteBus {
    async fn create_topic(&self, name: &str) -> Result<(), BrokerError> {
        let resp = self
            .client
            .post(self.url("broker/topics")?)
            .json(&CreateTopic {
                name: name.to_string(),
            })
            .send()
            .await
            .map_err(unavailable)?;
        Self::check(resp).await.map(|_| ())
    }

    async fn produce(&self, topic: &str, payload: String) -> Result<u64, BrokerError> {
        let resp = self
            .client
            .post(self.url(&format!("broker/topics/{topic}/messages"))?)
            .body(payload)
            .send()
            .await
            .map_err(unavailable)?;
        let produced: Produced = Self::check(resp).await?.json().await.map_err(unavailable)?;
        Ok(produced.offset)
    }

    async fn consume(
        &self,
        sub: &Subscription,
        max_messages: usize,
        timeout: Duration,
    ) -> Result<Vec<Message>, BrokerError> {
        let mut url = self.url(&format!("broker/topics/{}/messages", sub.topic))?;
        url.query_pairs_mut()
            .append_pair("groupId", &sub.group_id)
            .append_pair("max", &max_messages.to_string())
            .append_pair("timeoutMs", &timeout.as_millis().to_string());
        let resp = self.client.get(url).send().await.map_err(unavailable)?;
        Self::check(resp).await?.json().await.map_err(unavailable)
    }

    async fn commit(&self, sub: &Subscription, offset: i64) -> Result<(), BrokerError> {
        let resp = self
            .client
            .post(self.url(&format!("broker/topics/{}/commit", sub.topic))?)
            .json(&CommitBody {
                group_id: sub.group_id.clone(),
                offset,
            })
            .send()
            .await
            .map_err(unavailable)?;
        Self::check(resp).await.map(|_| ())
    }
}
