//! HTTP client for the gateway API, including the live event stream.

use std::collections::VecDeque;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde_json::Value;
use thiserror::Error;
use url::Url;

use crate::gateway::http::Submitted;
use crate::gateway::{ClientSession, JobRecord, SubmitRequest};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach gateway: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("gateway answered HTTP {status}: {message}")]
    Api {
        status: u16,
        message: String,
        process_job_id: Option<String>,
    },
    #[error("unexpected response: {0}")]
    Decode(String),
    #[error("live stream closed")]
    StreamClosed,
    #[error("timed out after {0:?}")]
    Timeout(Duration),
}

#[derive(Debug, Clone)]
pub struct GatewayClient {
    base: Url,
    http: reqwest::Client,
}

impl GatewayClient {
    pub fn new(base: Url) -> Self {
        Self {
            base,
            http: reqwest::Client::new(),
        }
    }

    pub fn base(&self) -> &Url {
        &self.base
    }

    fn url(&self, path: &str) -> Url {
        self.base.join(path).expect("static relative path")
    }

    fn client_url(&self, path: &str, client_id: &str) -> Url {
        let mut url = self.url(path);
        url.query_pairs_mut().append_pair("clientId", client_id);
        url
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        let text = resp.text().await?;
        if status.is_success() {
            return serde_json::from_str(&text).map_err(|e| ClientError::Decode(format!("{e}: {text}")));
        }
        let body: Value = serde_json::from_str(&text).unwrap_or(Value::Null);
        Err(ClientError::Api {
            status: status.as_u16(),
            message: body["message"]
                .as_str()
                .map(str::to_string)
                .unwrap_or(text),
            process_job_id: body["processJobId"].as_str().map(str::to_string),
        })
    }

    pub async fn create_session(&self) -> Result<ClientSession, ClientError> {
        let resp = self.http.post(self.url("api/sessions")).send().await?;
        Self::decode(resp).await
    }

    pub async fn submit(&self, client_id: &str, request: &SubmitRequest) -> Result<String, ClientError> {
        let resp = self
            .http
            .post(self.client_url("api/jobs", client_id))
            .json(request)
            .send()
            .await?;
        Ok(Self::decode::<Submitted>(resp).await?.process_job_id)
    }

    pub async fn job(&self, client_id: &str, process_job_id: &str) -> Result<JobRecord, ClientError> {
        let resp = self
            .http
            .get(self.client_url(&format!("api/jobs/{process_job_id}"), client_id))
            .send()
            .await?;
        Self::decode(resp).await
    }

    pub async fn algorithms(&self) -> Result<Vec<String>, ClientError> {
        let resp = self.http.get(self.url("api/algorithms")).send().await?;
        Self::decode(resp).await
    }

    pub async fn reload_config(&self) -> Result<Vec<String>, ClientError> {
        let resp = self.http.post(self.url("api/admin/reload")).send().await?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<Value, ClientError> {
        let resp = self.http.get(self.url("api/health")).send().await?;
        let status = resp.status();
        let body: Value = resp.json().await?;
        if status.is_success() {
            Ok(body)
        } else {
            Err(ClientError::Api {
                status: status.as_u16(),
                message: body.to_string(),
                process_job_id: None,
            })
        }
    }

    /// Opens the session's live channel.
    pub async fn stream(&self, client_id: &str) -> Result<LiveStream, ClientError> {
        let resp = self
            .http
            .get(self.client_url("api/stream", client_id))
            .send()
            .await?;
        if !resp.status().is_success() {
            return Err(Self::decode::<Value>(resp).await.unwrap_err());
        }
        Ok(LiveStream {
            resp,
            buf: Vec::new(),
            ready: VecDeque::new(),
        })
    }
}

/// Server-sent event reader yielding [`JobRecord`]s.
pub struct LiveStream {
    resp: reqwest::Response,
    buf: Vec<u8>,
    ready: VecDeque<JobRecord>,
}

impl LiveStream {
    fn drain_events(&mut self) -> Result<(), ClientError> {
        while let Some(end) = self.buf.windows(2).position(|w| w == b"\n\n") {
            let raw: Vec<u8> = self.buf.drain(..end + 2).collect();
            let block = String::from_utf8_lossy(&raw);
            let data: Vec<&str> = block
                .lines()
                .filter_map(|l| l.strip_prefix("data:"))
                .map(|d| d.strip_prefix(' ').unwrap_or(d))
                .collect();
            if data.is_empty() {
                continue; // keep-alive comment
            }
            let record = serde_json::from_str(&data.join("\n"))
                .map_err(|e| ClientError::Decode(e.to_string()))?;
            self.ready.push_back(record);
        }
        Ok(())
    }

    pub async fn next(&mut self) -> Result<JobRecord, ClientError> {
        loop {
            if let Some(r) = self.ready.pop_front() {
                return Ok(r);
            }
            match self.resp.chunk().await? {
                Some(bytes) => {
                    self.buf.extend(bytes.iter().filter(|&&b| b != b'\r'));
                    self.drain_events()?;
                }
                None => return Err(ClientError::StreamClosed),
            }
        }
    }

    pub async fn next_timeout(&mut self, timeout: Duration) -> Result<JobRecord, ClientError> {
        tokio::time::timeout(timeout, self.next())
            .await
            .map_err(|_| ClientError::Timeout(timeout))?
    }
}
