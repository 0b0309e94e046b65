//! Results collector.
//!
//! A single consumer drains the input topic into a bounded work queue
//! shared by a pool of poll workers. Each worker drives one
//! [`SubmissionEvent`] either to a [`ResultEvent`] on the event's output
//! topic or back onto the input topic when the job is not expected to
//! finish within the wait threshold.
//!
//! Re-enqueued events carry the provider estimate. The consumer holds such
//! an event back until `estimatedCompletionAt - threshold`, so a slow job
//! costs one poll per estimate change instead of one per consume cycle.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{mpsc, Mutex};
use tokio::task::JoinHandle;

use crate::broker::{BrokerError, EventBus, Subscription};
use crate::functions::SubmissionEvent;
use crate::provider::{JobState, ProviderError, ProviderJob, QuantumProvider};
use crate::qsim::Counts;

pub const CONSUMER_GROUP: &str = "qbridge-collector";
pub const PUBLISH_RETRIES: u32 = 3;

const CONSUME_BATCH: usize = 64;
const IDLE_POLL: Duration = Duration::from_millis(200);
const RETRY_BACKOFF: Duration = Duration::from_millis(25);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CollectorConfig {
    #[serde(with = "millis")]
    pub wait_threshold: Duration,
    pub worker_count: usize,
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub wait_timeout: Duration,
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl Default for CollectorConfig {
    fn default() -> Self {
        Self::with_threshold(Duration::from_secs(30))
    }
}

impl CollectorConfig {
    /// Defaults with the given threshold; the wait timeout follows at 2×.
    pub fn with_threshold(wait_threshold: Duration) -> Self {
        Self {
            wait_threshold,
            worker_count: 4,
            max_attempts: 100,
            wait_timeout: wait_threshold * 2,
        }
    }

    pub fn validate(&self) -> Result<(), CollectorError> {
        if self.wait_threshold.is_zero() {
            return Err(CollectorError::InvalidConfig("waitThreshold must be positive".into()));
        }
        if self.wait_timeout.is_zero() {
            return Err(CollectorError::InvalidConfig("waitTimeout must be positive".into()));
        }
        if self.worker_count == 0 {
            return Err(CollectorError::InvalidConfig("workerCount must be positive".into()));
        }
        if self.max_attempts == 0 {
            return Err(CollectorError::InvalidConfig("maxAttempts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CollectorError {
    #[error("invalid collector config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResultStatus {
    Done,
    Cancelled,
    Error,
}

/// Message placed on a client's output topic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResultEvent {
    pub client_id: String,
    pub process_job_id: String,
    pub provider_job_id: String,
    pub backend_name: String,
    pub status: ResultStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Counts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    pub completed_at: DateTime<Utc>,
    pub attempt: u32,
}

impl ResultEvent {
    fn base(event: &SubmissionEvent, status: ResultStatus) -> Self {
        Self {
            client_id: event.client_id.clone(),
            process_job_id: event.process_job_id.clone(),
            provider_job_id: event.provider_job_id.clone(),
            backend_name: event.backend_name.clone(),
            status,
            counts: None,
            error_message: None,
            completed_at: Utc::now(),
            attempt: event.attempt,
        }
    }

    pub fn error(event: &SubmissionEvent, message: impl Into<String>) -> Self {
        Self {
            error_message: Some(message.into()),
            ..Self::base(event, ResultStatus::Error)
        }
    }

    /// Result for a provider job in a final state.
    pub fn from_final_job(event: &SubmissionEvent, job: &ProviderJob) -> Self {
        match job.state {
            JobState::Done => match &job.counts {
                Some(counts) => Self {
                    counts: Some(counts.clone()),
                    ..Self::base(event, ResultStatus::Done)
                },
                None => Self::error(event, "provider reported DONE without counts"),
            },
            JobState::Cancelled => Self::base(event, ResultStatus::Cancelled),
            JobState::Error => Self::error(
                event,
                job.error_message
                    .clone()
                    .unwrap_or_else(|| "job failed on the provider".into()),
            ),
            s => Self::error(event, format!("job {} is not final ({s})", job.provider_job_id)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PollDecision {
    Finalize,
    Wait,
    ReEnqueue,
}

/// Final jobs are finalized. Simulator jobs and real jobs without an
/// estimate are waited on. Real jobs are waited on when the estimate is at
/// most `threshold` away and re-enqueued otherwise.
pub fn decide_poll_action(
    state: JobState,
    is_simulator: bool,
    estimated_completion_at: Option<DateTime<Utc>>,
    now: DateTime<Utc>,
    threshold: Duration,
) -> PollDecision {
    if state.is_final() {
        return PollDecision::Finalize;
    }
    if is_simulator {
        return PollDecision::Wait;
    }
    let Some(estimate) = estimated_completion_at else {
        return PollDecision::Wait;
    };
    let threshold = chrono::Duration::from_std(threshold).unwrap_or(chrono::Duration::MAX);
    if estimate - now <= threshold {
        PollDecision::Wait
    } else {
        PollDecision::ReEnqueue
    }
}

/// Counters for logs and tests.
#[derive(Debug, Default)]
pub struct CollectorStats {
    pub consumed: AtomicU64,
    pub skipped: AtomicU64,
    pub deferred: AtomicU64,
    pub re_enqueued: AtomicU64,
    pub published: AtomicU64,
    pub dropped: AtomicU64,
}

impl CollectorStats {
    pub fn get(counter: &AtomicU64) -> u64 {
        counter.load(Ordering::Relaxed)
    }

    fn bump(counter: &AtomicU64) {
        counter.fetch_add(1, Ordering::Relaxed);
    }
}

pub struct Collector {
    bus: Arc<dyn EventBus>,
    provider: Arc<dyn QuantumProvider>,
    input_topic: String,
    config: CollectorConfig,
    stats: CollectorStats,
}

/// Running collector; stops its tasks when dropped.
pub struct CollectorHandle {
    collector: Arc<Collector>,
    tasks: Vec<JoinHandle<()>>,
}

impl CollectorHandle {
    pub fn collector(&self) -> &Arc<Collector> {
        &self.collector
    }

    pub fn is_running(&self) -> bool {
        self.tasks.iter().all(|t| !t.is_finished())
    }

    /// Detached liveness probe for health reporting.
    pub fn liveness(&self) -> impl Fn() -> bool + Send + Sync + 'static {
        let handles: Vec<_> = self.tasks.iter().map(|t| t.abort_handle()).collect();
        move || handles.iter().all(|h| !h.is_finished())
    }

    /// Stops the consumer and all workers.
    pub fn shutdown(self) {
        drop(self)
    }
}

impl Drop for CollectorHandle {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

struct Deferred {
    release_at: DateTime<Utc>,
    seq: u64,
    event: SubmissionEvent,
}

impl PartialEq for Deferred {
    fn eq(&self, other: &Self) -> bool {
        (self.release_at, self.seq) == (other.release_at, other.seq)
    }
}

impl Eq for Deferred {}

impl PartialOrd for Deferred {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Deferred {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.release_at, self.seq).cmp(&(other.release_at, other.seq))
    }
}

impl Collector {
    pub fn new(
        bus: Arc<dyn EventBus>,
        provider: Arc<dyn QuantumProvider>,
        input_topic: impl Into<String>,
        config: CollectorConfig,
    ) -> Result<Self, CollectorError> {
        config.validate()?;
        Ok(Self {
            bus,
            provider,
            input_topic: input_topic.into(),
            config,
            stats: CollectorStats::default(),
        })
    }

    pub fn config(&self) -> &CollectorConfig {
        &self.config
    }

    pub fn stats(&self) -> &CollectorStats {
        &self.stats
    }

    /// Starts the consumer and `workerCount` workers.
    pub fn spawn(self: Arc<Self>) -> CollectorHandle {
        let (tx, rx) = mpsc::channel::<SubmissionEvent>(self.config.worker_count * 4);
        let rx = Arc::new(Mutex::new(rx));
        let mut tasks = Vec::with_capacity(self.config.worker_count + 1);
        for worker in 0..self.config.worker_count {
            let collector = self.clone();
            let rx = rx.clone();
            tasks.push(tokio::spawn(async move {
                loop {
                    let item = rx.lock().await.recv().await;
                    let Some(event) = item else { break };
                    tracing::debug!(worker, job = %event.provider_job_id, attempt = event.attempt, "polling");
                    collector.worker_process(event).await;
                }
            }));
        }
        let collector = self.clone();
        tasks.push(tokio::spawn(async move { collector.run_main_loop(tx).await }));
        CollectorHandle {
            collector: self,
            tasks,
        }
    }

    fn should_defer(&self, event: &SubmissionEvent, now: DateTime<Utc>) -> Option<DateTime<Utc>> {
        let estimate = event.estimated_completion_at?;
        let threshold = chrono::Duration::from_std(self.config.wait_threshold).ok()?;
        let release_at = estimate - threshold;
        (release_at > now).then_some(release_at)
    }

    async fn run_main_loop(&self, queue: mpsc::Sender<SubmissionEvent>) {
        let sub = Subscription::new(&self.input_topic, CONSUMER_GROUP);
        let mut deferred: BinaryHeap<Reverse<Deferred>> = BinaryHeap::new();
        let mut seq = 0u64;
        loop {
            while let Some(Reverse(head)) = deferred.peek() {
                if head.release_at > Utc::now() {
                    break;
                }
                let Reverse(item) = deferred.pop().expect("peeked");
                if queue.send(item.event).await.is_err() {
                    return;
                }
            }

            let timeout = deferred
                .peek()
                .and_then(|Reverse(d)| (d.release_at - Utc::now()).to_std().ok())
                .map_or(IDLE_POLL, |until| until.min(IDLE_POLL));
            let messages = match self.bus.consume(&sub, CONSUME_BATCH, timeout).await {
                Ok(m) => m,
                Err(e) => {
                    tracing::warn!(error = %e, topic = %self.input_topic, "consume failed");
                    tokio::time::sleep(IDLE_POLL).await;
                    continue;
                }
            };
            let Some(last) = messages.last().map(|m| m.offset) else {
                continue;
            };
            for message in messages {
                CollectorStats::bump(&self.stats.consumed);
                let event: SubmissionEvent = match serde_json::from_str(&message.payload) {
                    Ok(e) => e,
                    Err(e) => {
                        CollectorStats::bump(&self.stats.skipped);
                        tracing::warn!(offset = message.offset, error = %e, "skipping unparseable submission event");
                        continue;
                    }
                };
                if let Some(release_at) = self.should_defer(&event, Utc::now()) {
                    CollectorStats::bump(&self.stats.deferred);
                    seq += 1;
                    deferred.push(Reverse(Deferred {
                        release_at,
                        seq,
                        event,
                    }));
                } else if queue.send(event).await.is_err() {
                    return;
                }
            }
            if let Err(e) = self.bus.commit(&sub, last as i64).await {
                tracing::warn!(error = %e, offset = last, "commit failed");
            }
        }
    }

    /// Drives one submission to a result or back onto the input topic.
    pub async fn worker_process(&self, event: SubmissionEvent) {
        let result = match self.poll(&event).await {
            Ok(Some(result)) => result,
            Ok(None) => return,
            Err(message) => ResultEvent::error(&event, message),
        };
        let _ = self.publish_result(&result, &event.output_topic).await;
    }

    /// `Ok(None)` means the event went back to the input topic.
    async fn poll(&self, event: &SubmissionEvent) -> Result<Option<ResultEvent>, String> {
        let id = &event.provider_job_id;
        let job = match self.provider.job(id).await {
            Ok(job) => job,
            Err(ProviderError::UnknownJob(_)) => {
                return Err(format!("provider job {id} does not exist"));
            }
            Err(e) => return Err(format!("cannot read provider job {id}: {e}")),
        };
        let is_simulator = event.backend_type.is_simulator();
        let estimate = if job.state.is_final() || is_simulator {
            None
        } else {
            self.provider
                .queue_info(id)
                .await
                .map_err(|e| format!("queue_info for {id} failed: {e}"))?
        };
        match decide_poll_action(
            job.state,
            is_simulator,
            estimate,
            Utc::now(),
            self.config.wait_threshold,
        ) {
            PollDecision::Finalize => Ok(Some(ResultEvent::from_final_job(event, &job))),
            PollDecision::Wait => match self.provider.wait_for_result(id, self.config.wait_timeout).await {
                Ok(job) => Ok(Some(ResultEvent::from_final_job(event, &job))),
                Err(ProviderError::WaitTimeout(_)) => {
                    tracing::info!(job = %id, "wait timed out; re-checking later");
                    self.re_enqueue(event, estimate).await
                }
                Err(e) => Err(format!("waiting for {id} failed: {e}")),
            },
            PollDecision::ReEnqueue => self.re_enqueue(event, estimate).await,
        }
    }

    async fn re_enqueue(
        &self,
        event: &SubmissionEvent,
        estimate: Option<DateTime<Utc>>,
    ) -> Result<Option<ResultEvent>, String> {
        if event.attempt >= self.config.max_attempts {
            return Err(format!(
                "poll budget exhausted for {} after {} attempts",
                event.provider_job_id, event.attempt
            ));
        }
        let next = SubmissionEvent {
            estimated_completion_at: estimate.or(event.estimated_completion_at),
            attempt: event.attempt + 1,
            ..event.clone()
        };
        let payload = serde_json::to_string(&next).expect("submission event serializes");
        self.bus
            .produce(&self.input_topic, payload)
            .await
            .map_err(|e| format!("cannot re-enqueue {}: {e}", event.provider_job_id))?;
        CollectorStats::bump(&self.stats.re_enqueued);
        tracing::debug!(job = %event.provider_job_id, attempt = next.attempt, "re-enqueued");
        Ok(None)
    }

    /// Publishes with up to [`PUBLISH_RETRIES`] retries, then drops the
    /// result and logs an alert.
    pub async fn publish_result(&self, event: &ResultEvent, topic: &str) -> Result<u64, BrokerError> {
        let payload = serde_json::to_string(event).expect("result event serializes");
        let mut attempt = 0;
        loop {
            match self.bus.produce(topic, payload.clone()).await {
                Ok(offset) => {
                    CollectorStats::bump(&self.stats.published);
                    return Ok(offset);
                }
                Err(e) if attempt < PUBLISH_RETRIES => {
                    attempt += 1;
                    tracing::warn!(topic, attempt, error = %e, "publish failed; retrying");
                    tokio::time::sleep(RETRY_BACKOFF * attempt).await;
                }
                Err(e) => {
                    CollectorStats::bump(&self.stats.dropped);
                    tracing::error!(
                        alert = true,
                        topic,
                        client = %event.client_id,
                        process_job = %event.process_job_id,
                        error = %e,
                        "dropping result after {PUBLISH_RETRIES} retries"
                    );
                    return Err(e);
                }
            }
        }
    }
}
