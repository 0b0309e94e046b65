//! Mock quantum provider.
//!
//! Each device owns a FIFO of jobs served by one worker task. Real devices
//! hold every job for their configured service time before executing it on
//! the statevector simulator with their readout-noise profile; simulator
//! devices execute immediately. Jobs follow the state machine in
//! [`JobState`].
//!
//! Completion estimates use `(pending_ahead + 1) * service_time` from the
//! moment of submission and are only produced for real devices.

mod device;
pub mod http;
mod job;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Notify;
use tokio::task::JoinHandle;

pub use device::{least_busy, Device, DeviceSpec, FleetConfig};
pub use http::RemoteProvider;
pub use job::{CancelOutcome, JobRequest, JobState, ProviderJob};

use crate::qsim;

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail")]
pub enum ProviderError {
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("circuit needs {needed} qubits but `{device}` has {available}")]
    CircuitTooWide {
        device: String,
        needed: usize,
        available: usize,
    },
    #[error("unknown provider job `{0}`")]
    UnknownJob(String),
    #[error("timed out waiting for job `{0}`")]
    WaitTimeout(String),
    #[error("no eligible device with at least {min_qubits} qubits (real only: {real_only})")]
    NoEligibleDevice { min_qubits: usize, real_only: bool },
    #[error("invalid fleet: {0}")]
    InvalidFleet(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider unavailable: {0}")]
    Unavailable(String),
}

/// Operations the function runtime and the collector need from a provider.
#[async_trait]
pub trait QuantumProvider: Send + Sync {
    async fn devices(&self) -> Result<Vec<Device>, ProviderError>;

    async fn submit(&self, request: JobRequest) -> Result<String, ProviderError>;

    async fn job(&self, provider_job_id: &str) -> Result<ProviderJob, ProviderError>;

    async fn job_status(&self, provider_job_id: &str) -> Result<JobState, ProviderError> {
        Ok(self.job(provider_job_id).await?.state)
    }

    async fn queue_info(
        &self,
        provider_job_id: &str,
    ) -> Result<Option<DateTime<Utc>>, ProviderError>;

    async fn wait_for_result(
        &self,
        provider_job_id: &str,
        timeout: Duration,
    ) -> Result<ProviderJob, ProviderError>;

    async fn cancel(&self, provider_job_id: &str) -> Result<CancelOutcome, ProviderError>;
}

#[derive(Default)]
struct State {
    jobs: HashMap<String, ProviderJob>,
    queues: HashMap<String, VecDeque<String>>,
    running: HashMap<String, String>,
    next_seq: u64,
}

impl State {
    fn pending(&self, device: &str) -> usize {
        self.queues.get(device).map_or(0, VecDeque::len)
            + usize::from(self.running.contains_key(device))
    }
}

struct Inner {
    devices: BTreeMap<String, DeviceSpec>,
    wakeups: HashMap<String, Notify>,
    state: Mutex<State>,
    finished: Notify,
    seed: u64,
}

#[derive(Clone)]
pub struct Provider {
    inner: Arc<Inner>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl Provider {
    pub fn new(fleet: FleetConfig, seed: u64) -> Result<Self, ProviderError> {
        fleet.validate()?;
        let wakeups = fleet
            .devices
            .iter()
            .map(|d| (d.name.clone(), Notify::new()))
            .collect();
        let devices = fleet
            .devices
            .into_iter()
            .map(|d| (d.name.clone(), d))
            .collect();
        Ok(Self {
            inner: Arc::new(Inner {
                devices,
                wakeups,
                state: Mutex::new(State::default()),
                finished: Notify::new(),
                seed,
            }),
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.inner.state.lock().expect("provider state poisoned")
    }

    pub fn device_snapshot(&self) -> Vec<Device> {
        let state = self.lock();
        self.inner
            .devices
            .values()
            .map(|spec| Device::from_spec(spec, state.pending(&spec.name)))
            .collect()
    }

    pub fn submit_job(&self, request: JobRequest) -> Result<String, ProviderError> {
        let spec = self
            .inner
            .devices
            .get(&request.device_name)
            .ok_or_else(|| ProviderError::UnknownDevice(request.device_name.clone()))?;
        if request.circuit.num_qubits > spec.num_qubits {
            return Err(ProviderError::CircuitTooWide {
                device: spec.name.clone(),
                needed: request.circuit.num_qubits,
                available: spec.num_qubits,
            });
        }
        if request.shots == 0 {
            return Err(ProviderError::InvalidRequest("shots must be at least 1".into()));
        }

        let now = Utc::now();
        let id = {
            let mut state = self.lock();
            let seq = state.next_seq;
            state.next_seq += 1;
            let id = format!("qjob-{seq:08}");
            let estimated_completion_at = (!spec.is_simulator).then(|| {
                let ahead = state.pending(&spec.name) as u32;
                now + spec.service_time() * (ahead + 1)
            });
            let applied_noise = if spec.is_simulator {
                request.noise
            } else {
                spec.noise_profile
            };
            let job = ProviderJob {
                provider_job_id: id.clone(),
                device_name: spec.name.clone(),
                circuit: request.circuit,
                shots: request.shots,
                state: JobState::Queued,
                counts: None,
                error_message: None,
                estimated_completion_at,
                submitted_at: now,
                applied_noise,
                seed: splitmix64(self.inner.seed ^ seq),
            };
            state.jobs.insert(id.clone(), job);
            state
                .queues
                .entry(spec.name.clone())
                .or_default()
                .push_back(id.clone());
            id
        };
        self.inner.wakeups[&spec.name].notify_one();
        Ok(id)
    }

    pub fn get_job(&self, id: &str) -> Result<ProviderJob, ProviderError> {
        self.lock()
            .jobs
            .get(id)
            .cloned()
            .ok_or_else(|| ProviderError::UnknownJob(id.to_string()))
    }

    /// Estimated completion time; absent for simulator jobs and final jobs.
    pub fn job_queue_info(&self, id: &str) -> Result<Option<DateTime<Utc>>, ProviderError> {
        let job = self.get_job(id)?;
        Ok(if job.state.is_final() {
            None
        } else {
            job.estimated_completion_at
        })
    }

    pub fn cancel_job(&self, id: &str) -> Result<CancelOutcome, ProviderError> {
        let outcome = {
            let mut state = self.lock();
            let job = state
                .jobs
                .get_mut(id)
                .ok_or_else(|| ProviderError::UnknownJob(id.to_string()))?;
            if !job.advance(JobState::Cancelled) {
                return Ok(CancelOutcome::AlreadyStarted(job.state));
            }
            let device = job.device_name.clone();
            if let Some(queue) = state.queues.get_mut(&device) {
                queue.retain(|j| j != id);
            }
            CancelOutcome::Cancelled
        };
        self.inner.finished.notify_waiters();
        Ok(outcome)
    }

    pub async fn wait_job(&self, id: &str, timeout: Duration) -> Result<ProviderJob, ProviderError> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let notified = self.inner.finished.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            let job = self.get_job(id)?;
            if job.state.is_final() {
                return Ok(job);
            }
            if tokio::time::timeout_at(deadline, notified).await.is_err() {
                return Err(ProviderError::WaitTimeout(id.to_string()));
            }
        }
    }

    /// Spawns one worker per device. Workers stop when the returned guard is
    /// dropped.
    pub fn run_device_workers(&self) -> DeviceWorkers {
        let handles = self
            .inner
            .devices
            .keys()
            .map(|name| {
                let provider = self.clone();
                let name = name.clone();
                tokio::spawn(async move { provider.device_loop(name).await })
            })
            .collect();
        DeviceWorkers { handles }
    }

    fn take_next(&self, device: &str) -> Option<ProviderJob> {
        let mut state = self.lock();
        let id = state.queues.get_mut(device)?.pop_front()?;
        state.running.insert(device.to_string(), id.clone());
        let job = state.jobs.get_mut(&id)?;
        job.advance(JobState::Running);
        Some(job.clone())
    }

    fn finish(&self, id: &str, result: Result<qsim::Counts, String>) {
        {
            let mut state = self.lock();
            if let Some(job) = state.jobs.get_mut(id) {
                match result {
                    Ok(counts) => {
                        if job.advance(JobState::Done) {
                            job.counts = Some(counts);
                        }
                    }
                    Err(message) => {
                        if job.advance(JobState::Error) {
                            job.error_message = Some(message);
                        }
                    }
                }
                let device = job.device_name.clone();
                state.running.remove(&device);
            }
        }
        self.inner.finished.notify_waiters();
    }

    async fn device_loop(self, device: String) {
        let spec = self.inner.devices[&device].clone();
        let wakeup = &self.inner.wakeups[&device];
        loop {
            let Some(job) = self.take_next(&device) else {
                wakeup.notified().await;
                continue;
            };
            tracing::debug!(device = %device, job = %job.provider_job_id, "running job");
            if !spec.is_simulator {
                tokio::time::sleep(spec.service_time()).await;
            }
            let id = job.provider_job_id.clone();
            let result = tokio::task::spawn_blocking(move || {
                qsim::simulate(&job.circuit, job.shots, job.seed, job.applied_noise)
                    .map_err(|e| format!("execution failed: {e}"))
            })
            .await
            .unwrap_or_else(|e| Err(format!("execution aborted: {e}")));
            self.finish(&id, result);
        }
    }
}

/// Guard owning the device worker tasks.
pub struct DeviceWorkers {
    handles: Vec<JoinHandle<()>>,
}

impl DeviceWorkers {
    pub fn is_running(&self) -> bool {
        self.handles.iter().all(|h| !h.is_finished())
    }
}

impl Drop for DeviceWorkers {
    fn drop(&mut self) {
        for h in &self.handles {
            h.abort();
        }
    }
}

#[async_trait]
impl QuantumProvider for Provider {
    async fn devices(&self) -> Result<Vec<Device>, ProviderError> {
        Ok(self.device_snapshot())
    }

    async fn submit(&self, request: JobRequest) -> Result<String, ProviderError> {
        self.submit_job(request)
    }

    async fn job(&self, provider_job_id: &str) -> Result<ProviderJob, ProviderError> {
        self.get_job(provider_job_id)
    }

    async fn queue_info(
        &self,
        provider_job_id: &str,
    ) -> Result<Option<DateTime<Utc>>, ProviderError> {
        self.job_queue_info(provider_job_id)
    }

    async fn wait_for_result(
        &self,
        provider_job_id: &str,
        timeout: Duration,
    ) -> Result<ProviderJob, ProviderError> {
        self.wait_job(provider_job_id, timeout).await
    }

    async fn cancel(&self, provider_job_id: &str) -> Result<CancelOutcome, ProviderError> {
        self.cancel_job(provider_job_id)
    }
}
