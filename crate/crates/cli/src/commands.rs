use std::net::SocketAddr;
use std::time::{Duration, Instant};

use anyhow::anyhow;
use serde_json::{json, Value};
use url::Url;

use qbridge_core::algorithms::SMILE_SUPER_POSITION;
use qbridge_core::client::GatewayClient;
use qbridge_core::loadgen::{self, LoadgenConfig};
use qbridge_core::qsim::encode_emoticon;
use qbridge_core::stack::{Stack, StackError};
use qbridge_core::{CollectorConfig, FleetConfig, JobStatus, StackConfig, SubmitRequest};

use crate::args::{LoadgenArgs, StackArgs, SubmitArgs, TargetArgs};
use crate::Failure;

const READY_TIMEOUT: Duration = Duration::from_secs(10);

fn stack_config(args: &StackArgs) -> Result<StackConfig, Failure> {
    let fleet = match &args.fleet {
        Some(path) => FleetConfig::load(path).map_err(|e| Failure::Config(e.into()))?,
        None => FleetConfig::default(),
    };
    let mut collector = CollectorConfig::with_threshold(Duration::from_millis(args.threshold));
    collector.worker_count = args.workers;
    collector.max_attempts = args.max_attempts;
    Ok(StackConfig {
        config_path: args.config.clone(),
        fleet,
        host: args.host,
        gateway_port: args.gateway_port,
        functions_port: args.functions_port,
        provider_port: args.provider_port,
        collector,
        seed: args.seed,
        detached_services: args.detached_services,
        ..StackConfig::default()
    })
}

fn start_failure(e: StackError) -> Failure {
    match e {
        StackError::InvalidConfig(_)
        | StackError::Config(_)
        | StackError::Provider(_)
        | StackError::Collector(_) => Failure::Config(e.into()),
        _ => Failure::Runtime(e.into()),
    }
}

async fn boot(config: StackConfig) -> Result<Stack, Failure> {
    let stack = Stack::start(config).await.map_err(start_failure)?;
    if !stack.wait_healthy(READY_TIMEOUT).await {
        let health = stack.gateway().health();
        return Err(Failure::Runtime(anyhow!(
            "components not healthy after {READY_TIMEOUT:?}: {}",
            serde_json::to_string(&health).unwrap_or_default()
        )));
    }
    Ok(stack)
}

pub async fn run_all(args: StackArgs) -> Result<(), Failure> {
    let config = stack_config(&args)?;
    let started = Instant::now();
    let stack = boot(config).await?;
    println!(
        "qbridge ready in {} ms: gateway {} functions {} provider {}",
        started.elapsed().as_millis(),
        stack.gateway_url(),
        stack.functions_url(),
        stack.provider_url()
    );
    tokio::signal::ctrl_c()
        .await
        .map_err(|e| Failure::Runtime(anyhow!("cannot wait for Ctrl-C: {e}")))?;
    tracing::info!("shutting down");
    stack.shutdown();
    Ok(())
}

/// Resolves the gateway to talk to, booting a private stack if asked.
async fn connect(target: &TargetArgs) -> Result<(Url, Option<Stack>), Failure> {
    if target.in_process {
        let config = StackConfig {
            gateway_port: 0,
            functions_port: 0,
            provider_port: 0,
            ..stack_config(&target.stack)?
        };
        let stack = boot(config).await?;
        return Ok((stack.gateway_url().clone(), Some(stack)));
    }
    let url = match &target.gateway {
        Some(u) => u.clone(),
        None => {
            let addr = SocketAddr::new(target.stack.host, target.stack.gateway_port);
            Url::parse(&format!("http://{addr}/")).map_err(|e| Failure::Usage(e.into()))?
        }
    };
    Ok((url, None))
}

pub async fn submit(args: SubmitArgs) -> Result<(), Failure> {
    for (name, text) in [("emoticon A", &args.emoticon_a), ("emoticon B", &args.emoticon_b)] {
        encode_emoticon(text).map_err(|e| Failure::Usage(anyhow!("{name} `{text}`: {e}")))?;
    }
    if args.shots == 0 {
        return Err(Failure::Usage(anyhow!("--shots must be positive")));
    }
    let (url, _stack) = connect(&args.target).await?;
    let runtime = |e: qbridge_core::client::ClientError| Failure::Runtime(e.into());

    let client = GatewayClient::new(url);
    let session = client.create_session().await.map_err(runtime)?;
    let mut live = client.stream(&session.client_id).await.map_err(runtime)?;
    let request = SubmitRequest {
        algorithm_id: SMILE_SUPER_POSITION.into(),
        params: json!({"emoticonA": args.emoticon_a, "emoticonB": args.emoticon_b})
            .as_object()
            .cloned()
            .unwrap_or_default(),
        backend_type: args.backend,
        shots: Some(args.shots),
    };
    let id = client.submit(&session.client_id, &request).await.map_err(runtime)?;
    println!("submitted {id} for client {}", session.client_id);

    let deadline = tokio::time::Instant::now() + args.timeout;
    let record = loop {
        let left = deadline.saturating_duration_since(tokio::time::Instant::now());
        let record = live.next_timeout(left).await.map_err(runtime)?;
        if record.process_job_id == id {
            break record;
        }
    };

    let payload = record.result_payload.unwrap_or_default();
    let backend = payload.backend_name.as_deref().unwrap_or("-");
    println!("status {:?} on {backend}", record.status);
    if record.status != JobStatus::Done {
        return Err(Failure::Runtime(anyhow!(
            "job {id} failed: {}",
            payload.error_message.as_deref().unwrap_or("no error message")
        )));
    }
    let mut freqs: Vec<(String, f64)> = match payload.result {
        Some(Value::Object(map)) => map
            .into_iter()
            .map(|(k, v)| (k, v.as_f64().unwrap_or(0.0)))
            .collect(),
        other => return Err(Failure::Runtime(anyhow!("unexpected result payload {other:?}"))),
    };
    freqs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    for (emoticon, f) in freqs {
        println!("{emoticon}\t{:6.2}%", f * 100.0);
    }
    Ok(())
}

pub async fn loadgen(args: LoadgenArgs) -> Result<(), Failure> {
    if args.clients == 0 || args.jobs_per_client == 0 || args.shots == 0 {
        return Err(Failure::Usage(anyhow!(
            "--clients, --jobs-per-client and --shots must be positive"
        )));
    }
    let (url, _stack) = connect(&args.target).await?;
    let report = loadgen::run(
        url,
        LoadgenConfig {
            clients: args.clients,
            jobs_per_client: args.jobs_per_client,
            backend_type: args.backend,
            shots: args.shots,
            timeout: args.timeout,
        },
    )
    .await;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow!(
            "{} of {} results, {} cross-client deliveries",
            report.completed(),
            report.expected,
            report.cross_client()
        )))
    }
}
