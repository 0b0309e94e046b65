//! Client-facing gateway.
//!
//! Clients open a session and get a private output topic. Submissions are
//! dispatched to function endpoints through the config store; one consumer
//! per session reads the session topic, post-processes results and pushes
//! finalized job records to the session's live channel.
//!
//! Post-processing is looked up by algorithm id in a registry filled at
//! wiring time. Algorithms without an entry get raw frequencies.

pub mod http;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock, Weak};
use std::time::Duration;

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use tokio::sync::broadcast;
use tokio::task::JoinHandle;

use crate::broker::{BrokerError, EventBus, Subscription};
use crate::collector::{ResultEvent, ResultStatus};
use crate::config_store::{render_invocation, ConfigError, ConfigStore, InvocationRequest};
use crate::functions::{ActionResponse, BackendType, DEFAULT_SHOTS};
use crate::qsim::Counts;

pub const CONSUMER_GROUP: &str = "qbridge-gateway";

const LIVE_CAPACITY: usize = 256;
const CONSUME_TIMEOUT: Duration = Duration::from_millis(250);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClientSession {
    pub client_id: String,
    pub output_topic: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobStatus {
    Pending,
    Done,
    Error,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResultPayload {
    /// Output of the algorithm's post-processor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Counts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
}

impl ResultPayload {
    fn error(message: impl Into<String>, backend_name: Option<String>) -> Self {
        Self {
            result: None,
            counts: None,
            backend_name,
            error_message: Some(message.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JobRecord {
    pub process_job_id: String,
    pub client_id: String,
    pub algorithm_id: String,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_payload: Option<ResultPayload>,
    pub submitted_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_at: Option<DateTime<Utc>>,
}

impl JobRecord {
    fn finish(&mut self, status: JobStatus, payload: ResultPayload) {
        self.status = status;
        self.result_payload = Some(payload);
        self.completed_at = Some(Utc::now());
    }
}

/// Body of `POST /api/jobs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubmitRequest {
    pub algorithm_id: String,
    #[serde(default)]
    pub params: Map<String, Value>,
    pub backend_type: BackendType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),
    #[error("unknown job `{0}`")]
    UnknownJob(String),
    #[error("job `{0}` belongs to another client")]
    WrongClient(String),
    #[error("function endpoint unreachable: {0}")]
    FunctionUnreachable(String),
    #[error("function rejected the request (HTTP {status}): {message}")]
    FunctionRejected { status: u16, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

/// A submission that reached the function but failed there, with the id of
/// the ERROR record it left behind.
#[derive(Debug, Error)]
#[error("{source}")]
pub struct SubmitError {
    pub process_job_id: Option<String>,
    #[source]
    pub source: GatewayError,
}

impl From<GatewayError> for SubmitError {
    fn from(source: GatewayError) -> Self {
        Self {
            process_job_id: None,
            source,
        }
    }
}

/// HTTP status from the function plus its decoded response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvokeOutcome {
    pub status: u16,
    pub response: ActionResponse,
}

/// Calls a rendered function invocation.
#[async_trait]
pub trait FunctionInvoker: Send + Sync {
    async fn invoke(&self, request: &InvocationRequest) -> Result<InvokeOutcome, GatewayError>;
}

#[derive(Debug, Clone, Default)]
pub struct HttpInvoker {
    client: reqwest::Client,
}

impl HttpInvoker {
    pub fn new() -> Self {
        Self::default()
    }
}

#[async_trait]
impl FunctionInvoker for HttpInvoker {
    async fn invoke(&self, request: &InvocationRequest) -> Result<InvokeOutcome, GatewayError> {
        let method = reqwest::Method::from_bytes(request.method.as_str().as_bytes())
            .expect("config methods are valid HTTP methods");
        let mut builder = self.client.request(method, request.url.clone());
        for (k, v) in &request.headers {
            builder = builder.header(k, v);
        }
        let resp = builder
            .body(request.body.clone())
            .send()
            .await
            .map_err(|e| GatewayError::FunctionUnreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .text()
            .await
            .map_err(|e| GatewayError::FunctionUnreachable(e.to_string()))?;
        let response = serde_json::from_str(&text).unwrap_or_else(|_| {
            ActionResponse::failure(format!("unexpected function response: {text}"))
        });
        Ok(InvokeOutcome { status, response })
    }
}

/// Wraps an invoker and counts calls.
pub struct CountingInvoker<I> {
    inner: I,
    calls: AtomicUsize,
}

impl<I> CountingInvoker<I> {
    pub fn new(inner: I) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl<I: FunctionInvoker> FunctionInvoker for CountingInvoker<I> {
    async fn invoke(&self, request: &InvocationRequest) -> Result<InvokeOutcome, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.invoke(request).await
    }
}

#[async_trait]
impl<I: FunctionInvoker + ?Sized> FunctionInvoker for Arc<I> {
    async fn invoke(&self, request: &InvocationRequest) -> Result<InvokeOutcome, GatewayError> {
        (**self).invoke(request).await
    }
}

pub type PostProcessor = Arc<dyn Fn(&Counts) -> Result<Value, String> + Send + Sync>;
pub type HealthCheck = Arc<dyn Fn() -> bool + Send + Sync>;

fn raw_frequencies(counts: &Counts) -> Result<Value, String> {
    serde_json::to_value(counts.frequencies()).map_err(|e| e.to_string())
}

struct SessionState {
    session: ClientSession,
    live: broadcast::Sender<JobRecord>,
    consumer: JoinHandle<()>,
}

pub struct Gateway {
    config: Arc<ConfigStore>,
    bus: Arc<dyn EventBus>,
    invoker: Arc<dyn FunctionInvoker>,
    auth_token: String,
    post_processors: RwLock<HashMap<String, PostProcessor>>,
    health: RwLock<BTreeMap<String, HealthCheck>>,
    sessions: Mutex<HashMap<String, SessionState>>,
    jobs: Mutex<HashMap<String, JobRecord>>,
}

impl Drop for Gateway {
    fn drop(&mut self) {
        if let Ok(sessions) = self.sessions.get_mut() {
            for s in sessions.values() {
                s.consumer.abort();
            }
        }
    }
}

impl Gateway {
    pub fn new(
        config: Arc<ConfigStore>,
        bus: Arc<dyn EventBus>,
        invoker: Arc<dyn FunctionInvoker>,
        auth_token: impl Into<String>,
    ) -> Arc<Self> {
        Arc::new(Self {
            config,
            bus,
            invoker,
            auth_token: auth_token.into(),
            post_processors: RwLock::new(HashMap::new()),
            health: RwLock::new(BTreeMap::new()),
            sessions: Mutex::new(HashMap::new()),
            jobs: Mutex::new(HashMap::new()),
        })
    }

    pub fn register_post_processor<F>(&self, algorithm_id: &str, f: F)
    where
        F: Fn(&Counts) -> Result<Value, String> + Send + Sync + 'static,
    {
        self.post_processors
            .write()
            .expect("registry poisoned")
            .insert(algorithm_id.to_string(), Arc::new(f));
    }

    pub fn register_health_check<F>(&self, component: &str, f: F)
    where
        F: Fn() -> bool + Send + Sync + 'static,
    {
        self.health
            .write()
            .expect("registry poisoned")
            .insert(component.to_string(), Arc::new(f));
    }

    /// Component name → up, including the gateway itself.
    pub fn health(&self) -> BTreeMap<String, bool> {
        let mut report: BTreeMap<String, bool> = self
            .health
            .read()
            .expect("registry poisoned")
            .iter()
            .map(|(k, f)| (k.clone(), f()))
            .collect();
        report.insert("gateway".into(), true);
        report
    }

    pub fn config(&self) -> &ConfigStore {
        &self.config
    }

    pub fn algorithms(&self) -> Vec<String> {
        self.config.current().ids().map(str::to_string).collect()
    }

    pub async fn create_session(self: &Arc<Self>) -> Result<ClientSession, GatewayError> {
        let output_topic = loop {
            let candidate = format!("topic-{:08x}", rand::rng().random::<u32>());
            match self.bus.create_topic(&candidate).await {
                Ok(()) => break candidate,
                Err(BrokerError::DuplicateTopic(_)) => continue,
                Err(e) => return Err(e.into()),
            }
        };
        let session = ClientSession {
            client_id: uuid::Uuid::new_v4().simple().to_string(),
            output_topic,
            created_at: Utc::now(),
        };
        let (live, _) = broadcast::channel(LIVE_CAPACITY);
        let consumer = tokio::spawn(run_result_consumer(
            Arc::downgrade(self),
            session.client_id.clone(),
            session.output_topic.clone(),
        ));
        self.sessions.lock().expect("sessions poisoned").insert(
            session.client_id.clone(),
            SessionState {
                session: session.clone(),
                live,
                consumer,
            },
        );
        tracing::info!(client = %session.client_id, topic = %session.output_topic, "session created");
        Ok(session)
    }

    pub fn session(&self, client_id: &str) -> Result<ClientSession, GatewayError> {
        self.sessions
            .lock()
            .expect("sessions poisoned")
            .get(client_id)
            .map(|s| s.session.clone())
            .ok_or_else(|| GatewayError::UnknownSession(client_id.to_string()))
    }

    /// Live channel for `client_id` plus the records already final at
    /// subscription time, so a late subscriber misses nothing.
    pub fn subscribe(
        &self,
        client_id: &str,
    ) -> Result<(broadcast::Receiver<JobRecord>, Vec<JobRecord>), GatewayError> {
        let rx = self
            .sessions
            .lock()
            .expect("sessions poisoned")
            .get(client_id)
            .map(|s| s.live.subscribe())
            .ok_or_else(|| GatewayError::UnknownSession(client_id.to_string()))?;
        let mut done: Vec<JobRecord> = self
            .jobs
            .lock()
            .expect("jobs poisoned")
            .values()
            .filter(|r| r.client_id == client_id && r.status != JobStatus::Pending)
            .cloned()
            .collect();
        done.sort_by_key(|r| r.completed_at);
        Ok((rx, done))
    }

    fn push_live(&self, record: &JobRecord) {
        if let Some(s) = self
            .sessions
            .lock()
            .expect("sessions poisoned")
            .get(&record.client_id)
        {
            // no receivers is fine: the record stays readable by id
            let _ = s.live.send(record.clone());
        }
    }

    /// Dispatches one submission and returns its process job id.
    pub async fn handle_submit(
        &self,
        client_id: &str,
        request: SubmitRequest,
    ) -> Result<String, SubmitError> {
        let session = self.session(client_id)?;
        let set = self.config.current();
        let config = set
            .get(&request.algorithm_id)
            .map_err(|_| GatewayError::UnknownAlgorithm(request.algorithm_id.clone()))?;

        let process_job_id = uuid::Uuid::new_v4().to_string();
        let body = serde_json::json!({
            "params": request.params,
            "backendType": request.backend_type,
            "clientId": session.client_id,
            "processJobId": process_job_id,
            "outputTopic": session.output_topic,
            "shots": request.shots.unwrap_or(DEFAULT_SHOTS),
        })
        .to_string();
        let invocation =
            render_invocation(config, &body, &self.auth_token).map_err(GatewayError::from)?;

        // record first: a fast result must find a PENDING record to finalize
        self.jobs.lock().expect("jobs poisoned").insert(
            process_job_id.clone(),
            JobRecord {
                process_job_id: process_job_id.clone(),
                client_id: session.client_id.clone(),
                algorithm_id: request.algorithm_id.clone(),
                status: JobStatus::Pending,
                result_payload: None,
                submitted_at: Utc::now(),
                completed_at: None,
            },
        );

        let failure = match self.invoker.invoke(&invocation).await {
            Ok(InvokeOutcome { response, .. }) if response.ok => {
                tracing::debug!(process_job = %process_job_id, provider_job = ?response.provider_job_id, "dispatched");
                return Ok(process_job_id);
            }
            Ok(InvokeOutcome { status, response }) => GatewayError::FunctionRejected {
                status,
                message: response
                    .error_message
                    .unwrap_or_else(|| "function returned ok=false".into()),
            },
            Err(e) => e,
        };
        self.fail_job(&process_job_id, failure.to_string());
        Err(SubmitError {
            process_job_id: Some(process_job_id),
            source: failure,
        })
    }

    fn fail_job(&self, process_job_id: &str, message: String) {
        let record = {
            let mut jobs = self.jobs.lock().expect("jobs poisoned");
            let Some(record) = jobs.get_mut(process_job_id) else {
                return;
            };
            if record.status != JobStatus::Pending {
                return;
            }
            record.finish(JobStatus::Error, ResultPayload::error(message, None));
            record.clone()
        };
        self.push_live(&record);
    }

    pub fn get_job(&self, client_id: &str, process_job_id: &str) -> Result<JobRecord, GatewayError> {
        let jobs = self.jobs.lock().expect("jobs poisoned");
        let record = jobs
            .get(process_job_id)
            .ok_or_else(|| GatewayError::UnknownJob(process_job_id.to_string()))?;
        if record.client_id != client_id {
            return Err(GatewayError::WrongClient(process_job_id.to_string()));
        }
        Ok(record.clone())
    }

    fn post_process(&self, algorithm_id: &str, counts: &Counts) -> Result<Value, String> {
        let processor = self
            .post_processors
            .read()
            .expect("registry poisoned")
            .get(algorithm_id)
            .cloned();
        match processor {
            Some(f) => f(counts),
            None => raw_frequencies(counts),
        }
    }

    /// Applies one result event for `client_id`. Returns the finalized
    /// record, or `None` when the event was a duplicate or did not belong
    /// to this session.
    pub fn apply_result(&self, client_id: &str, event: &ResultEvent) -> Option<JobRecord> {
        if event.client_id != client_id {
            tracing::warn!(session = client_id, event_client = %event.client_id, "result on foreign topic ignored");
            return None;
        }
        let algorithm_id = {
            let jobs = self.jobs.lock().expect("jobs poisoned");
            let record = jobs.get(&event.process_job_id)?;
            if record.client_id != client_id || record.status != JobStatus::Pending {
                return None;
            }
            record.algorithm_id.clone()
        };
        let backend = Some(event.backend_name.clone());
        let (status, payload) = match (event.status, &event.counts) {
            (ResultStatus::Done, Some(counts)) => match self.post_process(&algorithm_id, counts) {
                Ok(result) => (
                    JobStatus::Done,
                    ResultPayload {
                        result: Some(result),
                        counts: Some(counts.clone()),
                        backend_name: backend,
                        error_message: None,
                    },
                ),
                Err(e) => (
                    JobStatus::Error,
                    ResultPayload {
                        counts: Some(counts.clone()),
                        ..ResultPayload::error(format!("post-processing failed: {e}"), backend)
                    },
                ),
            },
            (ResultStatus::Done, None) => (
                JobStatus::Error,
                ResultPayload::error("result carried no counts", backend),
            ),
            (ResultStatus::Cancelled, _) => (
                JobStatus::Error,
                ResultPayload::error("job was cancelled", backend),
            ),
            (ResultStatus::Error, _) => (
                JobStatus::Error,
                ResultPayload::error(
                    event
                        .error_message
                        .clone()
                        .unwrap_or_else(|| "unspecified error".into()),
                    backend,
                ),
            ),
        };
        let record = {
            let mut jobs = self.jobs.lock().expect("jobs poisoned");
            let record = jobs.get_mut(&event.process_job_id)?;
            // re-check: another delivery may have won while we post-processed
            if record.status != JobStatus::Pending {
                return None;
            }
            record.finish(status, payload);
            record.clone()
        };
        self.push_live(&record);
        Some(record)
    }

    /// Fails every PENDING record submitted more than `max_age` before
    /// `now`. Covers results that were lost or arrived malformed.
    pub fn expire_pending(&self, max_age: Duration, now: DateTime<Utc>) -> Vec<JobRecord> {
        let max_age = chrono::TimeDelta::from_std(max_age).unwrap_or(chrono::TimeDelta::MAX);
        let expired: Vec<JobRecord> = {
            let mut jobs = self.jobs.lock().expect("jobs poisoned");
            jobs.values_mut()
                .filter(|r| r.status == JobStatus::Pending && now - r.submitted_at > max_age)
                .map(|r| {
                    r.finish(
                        JobStatus::Error,
                        ResultPayload::error(
                            format!("no result within {}s", max_age.num_seconds()),
                            None,
                        ),
                    );
                    r.clone()
                })
                .collect()
        };
        for r in &expired {
            tracing::warn!(process_job_id = %r.process_job_id, client_id = %r.client_id, "pending job expired");
            self.push_live(r);
        }
        expired
    }
}

/// Periodically expires stale PENDING records until the gateway goes away.
pub async fn run_pending_sweeper(gateway: Weak<Gateway>, max_age: Duration, every: Duration) {
    let mut tick = tokio::time::interval(every);
    loop {
        tick.tick().await;
        let Some(g) = gateway.upgrade() else {
            return;
        };
        g.expire_pending(max_age, Utc::now());
    }
}

/// Consumes one session topic until the gateway goes away.
pub async fn run_result_consumer(gateway: Weak<Gateway>, client_id: String, topic: String) {
    let sub = Subscription::new(&topic, CONSUMER_GROUP);
    loop {
        let Some(bus) = gateway.upgrade().map(|g| g.bus.clone()) else {
            return;
        };
        let messages = match bus.consume(&sub, 32, CONSUME_TIMEOUT).await {
            Ok(m) => m,
            Err(e) => {
                tracing::warn!(topic = %topic, error = %e, "result consume failed");
                tokio::time::sleep(CONSUME_TIMEOUT).await;
                continue;
            }
        };
        let Some(last) = messages.last().map(|m| m.offset) else {
            continue;
        };
        let Some(gw) = gateway.upgrade() else {
            return;
        };
        for m in &messages {
            match serde_json::from_str::<ResultEvent>(&m.payload) {
                Ok(event) => {
                    gw.apply_result(&client_id, &event);
                }
                Err(e) => {
                    tracing::warn!(topic = %topic, offset = m.offset, error = %e, "skipping malformed result event");
                }
            }
        }
        drop(gw);
        if let Err(e) = bus.commit(&sub, last as i64).await {
            tracing::warn!(topic = %topic, error = %e, "result commit failed");
        }
    }
}
