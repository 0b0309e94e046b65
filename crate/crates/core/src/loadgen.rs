//! Multi-client load generator.
//!
//! Each simulated client opens a session and its live channel, submits its
//! jobs and then waits for them. Any record arriving on a client's channel
//! that names another client, or a job the client never submitted, counts
//! as a cross-client delivery.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::time::Duration;

use serde_json::json;
use tokio::time::Instant;
use url::Url;

use crate::algorithms::SMILE_SUPER_POSITION;
use crate::client::{ClientError, GatewayClient};
use crate::functions::BackendType;
use crate::gateway::{JobStatus, SubmitRequest};

#[derive(Debug, Clone)]
pub struct LoadgenConfig {
    pub clients: usize,
    pub jobs_per_client: usize,
    pub backend_type: BackendType,
    pub shots: u64,
    pub timeout: Duration,
}

impl Default for LoadgenConfig {
    fn default() -> Self {
        Self {
            clients: 5,
            jobs_per_client: 4,
            backend_type: BackendType::NoiselessSim,
            shots: 1024,
            timeout: Duration::from_secs(60),
        }
    }
}

/// Emoticon pairs cycled through by the generated jobs.
const PAIRS: [(&str, &str); 4] = [(";)", ";("), (":)", ":("), (":D", ":P"), ("<3", "</")];

#[derive(Debug, Clone, Default)]
pub struct ClientOutcome {
    pub client_id: String,
    pub submitted: usize,
    pub completed: usize,
    pub errors: usize,
    pub cross_client: usize,
    pub latencies: Vec<Duration>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct LoadgenReport {
    pub clients: Vec<ClientOutcome>,
    pub expected: usize,
    pub elapsed: Duration,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[Duration], p: f64) -> Option<Duration> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

impl LoadgenReport {
    pub fn submitted(&self) -> usize {
        self.clients.iter().map(|c| c.submitted).sum()
    }

    pub fn completed(&self) -> usize {
        self.clients.iter().map(|c| c.completed).sum()
    }

    pub fn errors(&self) -> usize {
        self.clients.iter().map(|c| c.errors).sum()
    }

    pub fn cross_client(&self) -> usize {
        self.clients.iter().map(|c| c.cross_client).sum()
    }

    pub fn segregation_ok(&self) -> bool {
        self.cross_client() == 0
    }

    pub fn complete(&self) -> bool {
        self.completed() == self.expected && self.clients.iter().all(|c| c.failure.is_none())
    }

    pub fn passed(&self) -> bool {
        self.segregation_ok() && self.complete()
    }

    pub fn sorted_latencies(&self) -> Vec<Duration> {
        let mut all: Vec<Duration> = self.clients.iter().flat_map(|c| c.latencies.clone()).collect();
        all.sort();
        all
    }
}

impl fmt::Display for LoadgenReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ms = |d: Option<Duration>| d.map_or("-".to_string(), |d| format!("{:.1}", d.as_secs_f64() * 1e3));
        writeln!(f, "{:<34} {:>9} {:>9} {:>6} {:>6}", "client", "submitted", "completed", "errors", "cross")?;
        for c in &self.clients {
            writeln!(
                f,
                "{:<34} {:>9} {:>9} {:>6} {:>6}",
                c.client_id, c.submitted, c.completed, c.errors, c.cross_client
            )?;
            if let Some(why) = &c.failure {
                writeln!(f, "  failure: {why}")?;
            }
        }
        let lat = self.sorted_latencies();
        writeln!(
            f,
            "latency ms: p50 {} p90 {} p99 {} max {}",
            ms(percentile(&lat, 50.0)),
            ms(percentile(&lat, 90.0)),
            ms(percentile(&lat, 99.0)),
            ms(lat.last().copied())
        )?;
        writeln!(
            f,
            "results {}/{} in {:.2}s",
            self.completed(),
            self.expected,
            self.elapsed.as_secs_f64()
        )?;
        writeln!(f, "segregation: {}", if self.segregation_ok() { "PASS" } else { "FAIL" })?;
        write!(f, "overall: {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

async fn drive_client(client: GatewayClient, config: LoadgenConfig, index: usize, deadline: Instant) -> ClientOutcome {
    let mut out = ClientOutcome::default();
    let session = match client.create_session().await {
        Ok(s) => s,
        Err(e) => {
            out.failure = Some(format!("session: {e}"));
            return out;
        }
    };
    out.client_id = session.client_id.clone();
    let mut stream = match client.stream(&session.client_id).await {
        Ok(s) => s,
        Err(e) => {
            out.failure = Some(format!("stream: {e}"));
            return out;
        }
    };

    let mut pending: HashMap<String, Instant> = HashMap::new();
    for j in 0..config.jobs_per_client {
        let (a, b) = PAIRS[(index + j) % PAIRS.len()];
        let request = SubmitRequest {
            algorithm_id: SMILE_SUPER_POSITION.into(),
            params: json!({"emoticonA": a, "emoticonB": b}).as_object().cloned().unwrap_or_default(),
            backend_type: config.backend_type,
            shots: Some(config.shots),
        };
        let started = Instant::now();
        match client.submit(&session.client_id, &request).await {
            Ok(id) => {
                pending.insert(id, started);
                out.submitted += 1;
            }
            Err(e) => {
                out.failure = Some(format!("submit: {e}"));
                return out;
            }
        }
    }

    let own: HashSet<String> = pending.keys().cloned().collect();
    while !pending.is_empty() {
        let left = deadline.saturating_duration_since(Instant::now());
        let record = match stream.next_timeout(left).await {
            Ok(r) => r,
            Err(ClientError::Timeout(_)) => {
                out.failure = Some(format!("timed out with {} result(s) outstanding", pending.len()));
                break;
            }
            Err(e) => {
                out.failure = Some(format!("stream: {e}"));
                break;
            }
        };
        if record.client_id != session.client_id || !own.contains(&record.process_job_id) {
            out.cross_client += 1;
            continue;
        }
        // replayed records can repeat; count each job once
        if let Some(started) = pending.remove(&record.process_job_id) {
            out.latencies.push(started.elapsed());
            out.completed += 1;
            if record.status == JobStatus::Error {
                out.errors += 1;
            }
        }
    }
    out
}

pub async fn run(gateway: Url, config: LoadgenConfig) -> LoadgenReport {
    let started = Instant::now();
    let deadline = started + config.timeout;
    let client = GatewayClient::new(gateway);
    let tasks: Vec<_> = (0..config.clients)
        .map(|i| tokio::spawn(drive_client(client.clone(), config.clone(), i, deadline)))
        .collect();
    let mut clients = Vec::with_capacity(tasks.len());
    for t in tasks {
        clients.push(t.await.unwrap_or_else(|e| ClientOutcome {
            failure: Some(format!("client task panicked: {e}")),
            ..Default::default()
        }));
    }
    LoadgenReport {
        clients,
        expected: config.clients * config.jobs_per_client,
        elapsed: started.elapsed(),
    }
}
