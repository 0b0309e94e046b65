//! Serverless-style function runtime.
//!
//! Every registered algorithm is one action reachable at `POST /fn/{id}`.
//! An invocation builds the circuit from the raw parameters, picks a
//! backend, submits the job to the provider and publishes a
//! [`SubmissionEvent`] on the input topic. The provider submission happens
//! first; if publishing then fails the job is cancelled and the caller gets
//! an error, so an event exists exactly when the action answered `ok`.

pub mod http;

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::broker::{BrokerError, EventBus};
use crate::provider::{least_busy, Device, JobRequest, ProviderError, QuantumProvider};
use crate::qsim::{CircuitSpec, NoiseModel};

pub const DEFAULT_SHOTS: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BackendType {
    Real,
    NoiselessSim,
    NoisySim,
}

impl BackendType {
    pub fn is_simulator(self) -> bool {
        !matches!(self, BackendType::Real)
    }
}

impl std::str::FromStr for BackendType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(Value::String(s.to_ascii_uppercase()))
            .map_err(|_| format!("unknown backend type `{s}` (REAL, NOISELESS_SIM, NOISY_SIM)"))
    }
}

fn default_shots() -> u64 {
    DEFAULT_SHOTS
}

/// One action invocation. On the wire `algorithmId` travels in the URL
/// path, not the body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ActionRequest {
    #[serde(skip)]
    pub algorithm_id: String,
    #[serde(default)]
    pub params: Map<String, Value>,
    pub backend_type: BackendType,
    pub client_id: String,
    pub process_job_id: String,
    pub output_topic: String,
    #[serde(default = "default_shots")]
    pub shots: u64,
}

/// Message placed on the input topic for the results collector.
///
/// `estimatedCompletionAt` is absent when first emitted and filled in when
/// the collector re-enqueues the event; `attempt` grows by one per
/// re-enqueue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubmissionEvent {
    pub provider_job_id: String,
    pub backend_name: String,
    pub backend_type: BackendType,
    pub client_id: String,
    pub process_job_id: String,
    pub output_topic: String,
    pub submitted_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimated_completion_at: Option<DateTime<Utc>>,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ActionResponse {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider_job_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
}

impl ActionResponse {
    pub fn success(provider_job_id: String, backend_name: String) -> Self {
        Self {
            ok: true,
            provider_job_id: Some(provider_job_id),
            backend_name: Some(backend_name),
            error_message: None,
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        Self {
            ok: false,
            provider_job_id: None,
            backend_name: None,
            error_message: Some(message.into()),
        }
    }
}

#[derive(Debug, Error)]
pub enum FunctionError {
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error("no action registered for algorithm `{0}`")]
    UnknownAlgorithm(String),
    #[error("algorithm `{0}` is already registered")]
    DuplicateAlgorithm(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cannot build circuit: {0}")]
    Build(String),
    #[error("backend selection failed: {0}")]
    NoEligibleDevice(ProviderError),
    #[error("job submission failed: {0}")]
    Submit(ProviderError),
    #[error("cannot publish submission event: {0}")]
    BrokerUnavailable(BrokerError),
}

/// Turns algorithm-specific parameters into a circuit.
pub type CircuitBuilder =
    Arc<dyn Fn(&Map<String, Value>) -> Result<CircuitSpec, String> + Send + Sync>;

pub struct FunctionRuntime {
    algorithms: RwLock<BTreeMap<String, CircuitBuilder>>,
    provider: Arc<dyn QuantumProvider>,
    bus: Arc<dyn EventBus>,
    input_topic: String,
    auth_token: String,
}

impl FunctionRuntime {
    pub fn new(
        provider: Arc<dyn QuantumProvider>,
        bus: Arc<dyn EventBus>,
        input_topic: impl Into<String>,
        auth_token: impl Into<String>,
    ) -> Self {
        Self {
            algorithms: RwLock::new(BTreeMap::new()),
            provider,
            bus,
            input_topic: input_topic.into(),
            auth_token: auth_token.into(),
        }
    }

    pub fn register_algorithm<F>(&self, id: &str, builder: F) -> Result<(), FunctionError>
    where
        F: Fn(&Map<String, Value>) -> Result<CircuitSpec, String> + Send + Sync + 'static,
    {
        let mut algorithms = self.algorithms.write().expect("registry poisoned");
        if algorithms.contains_key(id) {
            return Err(FunctionError::DuplicateAlgorithm(id.to_string()));
        }
        algorithms.insert(id.to_string(), Arc::new(builder));
        Ok(())
    }

    pub fn algorithm_ids(&self) -> Vec<String> {
        self.algorithms
            .read()
            .expect("registry poisoned")
            .keys()
            .cloned()
            .collect()
    }

    fn builder(&self, id: &str) -> Option<CircuitBuilder> {
        self.algorithms
            .read()
            .expect("registry poisoned")
            .get(id)
            .cloned()
    }

    /// Picks the device for `backend_type` and the noise the job should use.
    ///
    /// Real runs go to the least busy real device wide enough for the
    /// circuit. Both simulator modes use the least busy simulator; the noisy
    /// mode borrows the readout profile of the least busy real device.
    pub async fn select_backend(
        &self,
        backend_type: BackendType,
        required_qubits: usize,
    ) -> Result<(Device, Option<NoiseModel>), FunctionError> {
        let devices = self
            .provider
            .devices()
            .await
            .map_err(FunctionError::Submit)?;
        let pick_simulator = || {
            let sims: Vec<Device> = devices.iter().filter(|d| d.is_simulator).cloned().collect();
            least_busy(&sims, required_qubits, false)
                .cloned()
                .map_err(FunctionError::NoEligibleDevice)
        };
        match backend_type {
            BackendType::Real => least_busy(&devices, required_qubits, true)
                .map(|d| (d.clone(), None))
                .map_err(FunctionError::NoEligibleDevice),
            BackendType::NoiselessSim => Ok((pick_simulator()?, None)),
            BackendType::NoisySim => {
                let template = least_busy(&devices, required_qubits, true)
                    .map_err(FunctionError::NoEligibleDevice)?;
                Ok((pick_simulator()?, template.noise_profile))
            }
        }
    }

    /// Runs one action. `bearer_token` is the token from the caller's
    /// `Authorization: Bearer …` header.
    pub async fn invoke(
        &self,
        bearer_token: Option<&str>,
        request: ActionRequest,
    ) -> Result<ActionResponse, FunctionError> {
        if bearer_token != Some(self.auth_token.as_str()) {
            return Err(FunctionError::Unauthorized);
        }
        let builder = self
            .builder(&request.algorithm_id)
            .ok_or_else(|| FunctionError::UnknownAlgorithm(request.algorithm_id.clone()))?;
        for (name, value) in [
            ("clientId", &request.client_id),
            ("processJobId", &request.process_job_id),
            ("outputTopic", &request.output_topic),
        ] {
            if value.is_empty() {
                return Err(FunctionError::InvalidRequest(format!("{name} must not be empty")));
            }
        }
        if request.shots == 0 {
            return Err(FunctionError::InvalidRequest("shots must be at least 1".into()));
        }

        let circuit = builder(&request.params).map_err(FunctionError::Build)?;
        let (device, noise) = self
            .select_backend(request.backend_type, circuit.num_qubits)
            .await?;
        let provider_job_id = self
            .provider
            .submit(JobRequest {
                device_name: device.name.clone(),
                circuit,
                shots: request.shots,
                noise,
            })
            .await
            .map_err(FunctionError::Submit)?;

        let event = SubmissionEvent {
            provider_job_id: provider_job_id.clone(),
            backend_name: device.name.clone(),
            backend_type: request.backend_type,
            client_id: request.client_id,
            process_job_id: request.process_job_id,
            output_topic: request.output_topic,
            submitted_at: Utc::now(),
            estimated_completion_at: None,
            attempt: 1,
        };
        let payload = serde_json::to_string(&event).expect("submission event serializes");
        if let Err(e) = self.bus.produce(&self.input_topic, payload).await {
            if let Err(cancel_err) = self.provider.cancel(&provider_job_id).await {
                tracing::warn!(job = %provider_job_id, error = %cancel_err, "could not cancel orphaned job");
            }
            return Err(FunctionError::BrokerUnavailable(e));
        }
        tracing::debug!(job = %provider_job_id, backend = %device.name, "submitted");
        Ok(ActionResponse::success(provider_job_id, device.name))
    }
}

#[cfg(test)]
mod tests {
    use std::time::Duration;

    use super::*;
    use crate::algorithms;
    use crate::broker::{Broker, Subscription};
    use crate::provider::{DeviceSpec, FleetConfig, JobState, Provider};
    use serde_json::json;

    const TOKEN: &str = "secret";
    const INPUT: &str = "qbridge-in";

    struct Fixture {
        provider: Provider,
        broker: Arc<Broker>,
        runtime: FunctionRuntime,
    }

    fn fixture(fleet: FleetConfig) -> Fixture {
        let provider = Provider::new(fleet, 5).unwrap();
        let broker = Arc::new(Broker::new());
        broker.create_topic(INPUT).unwrap();
        let runtime = FunctionRuntime::new(
            Arc::new(provider.clone()),
            broker.clone(),
            INPUT,
            TOKEN,
        );
        algorithms::register_builtin(&runtime).unwrap();
        Fixture {
            provider,
            broker,
            runtime,
        }
    }

    fn request(a: &str, b: &str, backend: BackendType) -> ActionRequest {
        ActionRequest {
            algorithm_id: algorithms::SMILE_SUPER_POSITION.into(),
            params: json!({"emoticonA": a, "emoticonB": b}).as_object().unwrap().clone(),
            backend_type: backend,
            client_id: "client-1".into(),
            process_job_id: "p-1".into(),
            output_topic: "topic-00000001".into(),
            shots: 1024,
        }
    }

    fn drain(broker: &Broker) -> Vec<SubmissionEvent> {
        broker
            .snapshot(INPUT)
            .unwrap()
            .into_iter()
            .map(|m| serde_json::from_str(&m.payload).unwrap())
            .collect()
    }

    #[tokio::test]
    async fn happy_path_publishes_event() {
        let f = fixture(FleetConfig::default());
        let resp = f
            .runtime
            .invoke(Some(TOKEN), request(";)", ";(", BackendType::NoiselessSim))
            .await
            .unwrap();
        assert!(resp.ok);
        assert_eq!(resp.backend_name.as_deref(), Some("qasm_simulator"));
        let events = drain(&f.broker);
        assert_eq!(events.len(), 1);
        let e = &events[0];
        assert_eq!(e.client_id, "client-1");
        assert_eq!(e.process_job_id, "p-1");
        assert_eq!(e.output_topic, "topic-00000001");
        assert_eq!(e.attempt, 1);
        assert_eq!(e.estimated_completion_at, None);
        assert_eq!(Some(&e.provider_job_id), resp.provider_job_id.as_ref());
        let job = f.provider.get_job(&e.provider_job_id).unwrap();
        assert_eq!(job.circuit.num_qubits, 16);
    }

    #[tokio::test]
    async fn build_error_leaves_no_event() {
        let f = fixture(FleetConfig::default());
        let err = f
            .runtime
            .invoke(Some(TOKEN), request("😀)", ";(", BackendType::NoiselessSim))
            .await
            .unwrap_err();
        assert!(matches!(err, FunctionError::Build(_)), "{err}");
        assert!(drain(&f.broker).is_empty());
        assert!(f.provider.device_snapshot().iter().all(|d| d.pending_jobs == 0));
    }

    #[tokio::test]
    async fn auth_and_registry_errors() {
        let f = fixture(FleetConfig::default());
        let req = request(";)", ";(", BackendType::NoiselessSim);
        assert!(matches!(
            f.runtime.invoke(None, req.clone()).await,
            Err(FunctionError::Unauthorized)
        ));
        assert!(matches!(
            f.runtime.invoke(Some("wrong"), req.clone()).await,
            Err(FunctionError::Unauthorized)
        ));
        let mut unknown = req.clone();
        unknown.algorithm_id = "nope".into();
        assert!(matches!(
            f.runtime.invoke(Some(TOKEN), unknown).await,
            Err(FunctionError::UnknownAlgorithm(id)) if id == "nope"
        ));
        assert!(matches!(
            algorithms::register_builtin(&f.runtime),
            Err(FunctionError::DuplicateAlgorithm(_))
        ));
        let mut empty = req;
        empty.output_topic.clear();
        assert!(matches!(
            f.runtime.invoke(Some(TOKEN), empty).await,
            Err(FunctionError::InvalidRequest(_))
        ));
        assert!(drain(&f.broker).is_empty());
    }

    #[tokio::test]
    async fn real_backend_needs_wide_enough_device() {
        let f = fixture(FleetConfig::default());
        let resp = f
            .runtime
            .invoke(Some(TOKEN), request(";)", ";(", BackendType::Real))
            .await
            .unwrap();
        assert_eq!(resp.backend_name.as_deref(), Some("mock_guadalupe"));
    }

    #[tokio::test]
    async fn selection_rules() {
        let f = fixture(FleetConfig::default());
        let (dev, noise) = f
            .runtime
            .select_backend(BackendType::NoiselessSim, 16)
            .await
            .unwrap();
        assert!(dev.is_simulator);
        assert_eq!(noise, None);
        let (dev, _) = f.runtime.select_backend(BackendType::Real, 16).await.unwrap();
        assert_eq!(dev.name, "mock_guadalupe");
        assert!(matches!(
            f.runtime.select_backend(BackendType::Real, 17).await,
            Err(FunctionError::NoEligibleDevice(_))
        ));
    }

    #[tokio::test]
    async fn noisy_sim_borrows_least_busy_real_profile() {
        let fleet = FleetConfig::new(vec![
            DeviceSpec::real("small", 5, Duration::from_secs(60), 0.03),
            DeviceSpec::real("large", 16, Duration::from_secs(60), 0.01),
            DeviceSpec::simulator("sim", 20),
        ])
        .unwrap();
        let f = fixture(fleet);
        // load the 16q device so the 5q one is least busy
        let circuit = CircuitSpec::new(1, vec![]).unwrap();
        for _ in 0..2 {
            f.provider
                .submit_job(JobRequest {
                    device_name: "large".into(),
                    circuit: circuit.clone(),
                    shots: 1,
                    noise: None,
                })
                .unwrap();
        }
        let (dev, noise) = f
            .runtime
            .select_backend(BackendType::NoisySim, 4)
            .await
            .unwrap();
        assert_eq!(dev.name, "sim");
        assert_eq!(noise, Some(NoiseModel::new(0.03).unwrap()));

        // a 16-qubit circuit can only borrow from the 16q device
        let (_, noise) = f
            .runtime
            .select_backend(BackendType::NoisySim, 16)
            .await
            .unwrap();
        assert_eq!(noise, Some(NoiseModel::new(0.01).unwrap()));
    }

    #[tokio::test]
    async fn publish_failure_cancels_job() {
        let provider = Provider::new(FleetConfig::default(), 1).unwrap();
        let broker = Arc::new(Broker::new()); // input topic never created
        let runtime =
            FunctionRuntime::new(Arc::new(provider.clone()), broker.clone(), INPUT, TOKEN);
        algorithms::register_builtin(&runtime).unwrap();
        let err = runtime
            .invoke(Some(TOKEN), request(";)", ";(", BackendType::NoiselessSim))
            .await
            .unwrap_err();
        assert!(matches!(err, FunctionError::BrokerUnavailable(_)));
        let job = provider.get_job("qjob-00000000").unwrap();
        assert_eq!(job.state, JobState::Cancelled);
    }

    #[tokio::test]
    async fn concurrent_invocations_keep_identities() {
        let f = Arc::new(fixture(FleetConfig::default()));
        let mut tasks = Vec::new();
        for i in 0..32 {
            let f = f.clone();
            tasks.push(tokio::spawn(async move {
                let mut req = request(";)", ";(", BackendType::NoiselessSim);
                req.client_id = format!("client-{i}");
                req.process_job_id = format!("job-{i}");
                req.output_topic = format!("topic-{i:08x}");
                f.runtime.invoke(Some(TOKEN), req).await.unwrap()
            }));
        }
        for t in tasks {
            assert!(t.await.unwrap().ok);
        }
        let events = drain(&f.broker);
        assert_eq!(events.len(), 32);
        for e in events {
            let i = e.client_id.strip_prefix("client-").unwrap();
            assert_eq!(e.process_job_id, format!("job-{i}"));
            let n: u32 = i.parse().unwrap();
            assert_eq!(e.output_topic, format!("topic-{n:08x}"));
        }
        let _ = Subscription::new(INPUT, "unused");
    }

    #[test]
    fn backend_type_parsing() {
        assert_eq!("noisy_sim".parse::<BackendType>().unwrap(), BackendType::NoisySim);
        assert!("quantum".parse::<BackendType>().is_err());
        assert_eq!(
            serde_json::to_string(&BackendType::NoiselessSim).unwrap(),
            "\"NOISELESS_SIM\""
        );
    }

    #[test]
    fn submission_event_wire_shape() {
        let e = SubmissionEvent {
            provider_job_id: "qjob-1".into(),
            backend_name: "sim".into(),
            backend_type: BackendType::Real,
            client_id: "c".into(),
            process_job_id: "p".into(),
            output_topic: "topic-1".into(),
            submitted_at: "2024-01-01T00:00:00Z".parse().unwrap(),
            estimated_completion_at: None,
            attempt: 1,
        };
        let v: Value = serde_json::to_value(&e).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "attempt",
                "backendName",
                "backendType",
                "clientId",
                "outputTopic",
                "processJobId",
                "providerJobId",
                "submittedAt"
            ]
        );
    }
}
