use std::time::Duration;

use serde_json::json;

use qbridge_core::algorithms::SMILE_SUPER_POSITION;
use qbridge_core::client::{ClientError, GatewayClient};
use qbridge_core::collector::ResultEvent;
use qbridge_core::functions::BackendType;
use qbridge_core::gateway::{JobRecord, JobStatus, SubmitRequest};
use qbridge_core::provider::{DeviceSpec, FleetConfig, JobRequest, QuantumProvider, RemoteProvider};
use qbridge_core::qsim::{CircuitSpec, Gate};
use qbridge_core::stack::{Stack, StackConfig};

fn smile(a: &str, b: &str, backend: BackendType, shots: u64) -> SubmitRequest {
    SubmitRequest {
        algorithm_id: SMILE_SUPER_POSITION.into(),
        params: json!({"emoticonA": a, "emoticonB": b}).as_object().unwrap().clone(),
        backend_type: backend,
        shots: Some(shots),
    }
}

async fn run_one(stack: &Stack, request: SubmitRequest) -> JobRecord {
    let client = GatewayClient::new(stack.gateway_url().clone());
    let session = client.create_session().await.unwrap();
    let mut live = client.stream(&session.client_id).await.unwrap();
    let id = client.submit(&session.client_id, &request).await.unwrap();
    let record = live.next_timeout(Duration::from_secs(10)).await.unwrap();
    assert_eq!(record.process_job_id, id);
    assert_eq!(client.job(&session.client_id, &id).await.unwrap(), record);
    record
}

#[tokio::test(flavor = "multi_thread")]
async fn detached_services_round_trip() {
    let stack = Stack::start(StackConfig {
        detached_services: true,
        ..StackConfig::ephemeral()
    })
    .await
    .unwrap();
    assert!(stack.wait_healthy(Duration::from_secs(5)).await);
    let record = run_one(&stack, smile(";)", ";(", BackendType::NoiselessSim, 2048)).await;
    assert_eq!(record.status, JobStatus::Done);
    let result = record.result_payload.unwrap().result.unwrap();
    let freqs = result.as_object().unwrap();
    let mut keys: Vec<&str> = freqs.keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, [";(", ";)"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn noisy_simulator_spreads_support() {
    let stack = Stack::start(StackConfig::ephemeral()).await.unwrap();
    let record = run_one(&stack, smile(";)", ";)", BackendType::NoisySim, 4096)).await;
    assert_eq!(record.status, JobStatus::Done);
    let payload = record.result_payload.unwrap();
    assert_eq!(payload.backend_name.as_deref(), Some("qasm_simulator"));
    // 16 bits at 2% flip: about 72% of shots stay clean
    let counts = payload.counts.unwrap();
    assert!(counts.len() > 1);
    let clean = counts.get("0011101100101001") as f64 / 4096.0;
    let expected = 0.98f64.powi(16);
    assert!((clean - expected).abs() < 0.05, "clean fraction {clean}");
}

#[tokio::test(flavor = "multi_thread")]
async fn real_backend_runs_on_wide_device() {
    let stack = Stack::start(StackConfig::ephemeral()).await.unwrap();
    let record = run_one(&stack, smile(":)", ":(", BackendType::Real, 512)).await;
    assert_eq!(record.status, JobStatus::Done);
    assert_eq!(
        record.result_payload.unwrap().backend_name.as_deref(),
        Some("mock_guadalupe")
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn fixed_seed_reproduces_counts() {
    let mut counts = Vec::new();
    for _ in 0..2 {
        let stack = Stack::start(StackConfig {
            seed: 77,
            ..StackConfig::ephemeral()
        })
        .await
        .unwrap();
        let record = run_one(&stack, smile(";)", ";(", BackendType::NoiselessSim, 1000)).await;
        counts.push(record.result_payload.unwrap().counts.unwrap());
    }
    assert_eq!(counts[0], counts[1]);
}

#[tokio::test(flavor = "multi_thread")]
async fn no_eligible_device_is_reported() {
    let stack = Stack::start(StackConfig {
        fleet: FleetConfig::new(vec![
            DeviceSpec::real("tiny", 5, Duration::from_millis(10), 0.0),
            DeviceSpec::simulator("sim", 20),
        ])
        .unwrap(),
        ..StackConfig::ephemeral()
    })
    .await
    .unwrap();
    let client = GatewayClient::new(stack.gateway_url().clone());
    let session = client.create_session().await.unwrap();
    let err = client
        .submit(&session.client_id, &smile(";)", ";(", BackendType::Real, 10))
        .await
        .unwrap_err();
    match err {
        ClientError::Api { status, message, .. } => {
            assert_eq!(status, 422);
            assert!(message.contains("backend selection failed"), "{message}");
        }
        other => panic!("unexpected {other}"),
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn late_subscriber_gets_replay_and_other_sessions_see_nothing() {
    let stack = Stack::start(StackConfig::ephemeral()).await.unwrap();
    let client = GatewayClient::new(stack.gateway_url().clone());
    let a = client.create_session().await.unwrap();
    let b = client.create_session().await.unwrap();
    let id = client
        .submit(&a.client_id, &smile(";)", ";(", BackendType::NoiselessSim, 64))
        .await
        .unwrap();
    let broker = stack.broker().clone();
    let topic = a.output_topic.clone();
    let deadline = tokio::time::Instant::now() + Duration::from_secs(5);
    while broker.topic_len(&topic).unwrap() == 0 {
        assert!(tokio::time::Instant::now() < deadline);
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    let event: ResultEvent =
        serde_json::from_str(&broker.snapshot(&topic).unwrap()[0].payload).unwrap();
    assert_eq!(event.client_id, a.client_id);

    let mut live = client.stream(&a.client_id).await.unwrap();
    let replayed = live.next_timeout(Duration::from_secs(5)).await.unwrap();
    assert_eq!(replayed.process_job_id, id);

    let mut other = client.stream(&b.client_id).await.unwrap();
    assert!(matches!(
        other.next_timeout(Duration::from_millis(300)).await,
        Err(ClientError::Timeout(_))
    ));
    assert!(matches!(
        client.job(&b.client_id, &id).await,
        Err(ClientError::Api { status: 403, .. })
    ));
}

#[tokio::test(flavor = "multi_thread")]
async fn provider_http_surface_matches_in_process() {
    let stack = Stack::start(StackConfig::ephemeral()).await.unwrap();
    let remote = RemoteProvider::new(stack.provider_url().clone());
    let devices = remote.devices().await.unwrap();
    assert_eq!(devices, stack.provider().device_snapshot());
    let id = remote
        .submit(JobRequest {
            device_name: "qasm_simulator".into(),
            circuit: CircuitSpec::new(1, vec![Gate::X(0)]).unwrap(),
            shots: 5,
            noise: None,
        })
        .await
        .unwrap();
    let job = remote.wait_for_result(&id, Duration::from_secs(5)).await.unwrap();
    assert_eq!(job.counts.unwrap().get("1"), 5);
    assert_eq!(remote.queue_info(&id).await.unwrap(), None);
    assert!(remote.job("qjob-missing").await.is_err());
}

#[test]
fn shipped_config_files_parse() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../config");
    let set = qbridge_core::ConfigSet::load(format!("{root}/functions.json")).unwrap();
    assert_eq!(set.ids().collect::<Vec<_>>(), [SMILE_SUPER_POSITION]);
    assert_eq!(
        FleetConfig::load(format!("{root}/fleet.json")).unwrap(),
        FleetConfig::default()
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn lost_result_surfaces_as_error_after_timeout() {
    // a slow real device and a short result timeout: the record expires
    // before the device finishes, and the late result is ignored
    let stack = Stack::start(StackConfig {
        fleet: FleetConfig::new(vec![
            DeviceSpec::real("slow", 16, Duration::from_secs(3), 0.0),
            DeviceSpec::simulator("sim", 20),
        ])
        .unwrap(),
        result_timeout: Duration::from_millis(500),
        ..StackConfig::ephemeral()
    })
    .await
    .unwrap();
    let record = run_one(&stack, smile(";)", ";(", BackendType::Real, 16)).await;
    assert_eq!(record.status, JobStatus::Error);
    let message = record.result_payload.unwrap().error_message.unwrap();
    assert!(message.starts_with("no result within"), "{message}");
}
