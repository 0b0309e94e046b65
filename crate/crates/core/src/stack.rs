//! Wires broker, provider, functions, collector and gateway together.
//!
//! Every component gets its own HTTP listener. By default the functions
//! runtime and the collector talk to the broker and provider in process;
//! with `detached_services` they go through the HTTP surfaces instead, the
//! way separately deployed services would.

use std::collections::BTreeSet;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::Router;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use url::Url;

use crate::algorithms;
use crate::broker::{self, Broker, EventBus, RemoteBus};
use crate::collector::{Collector, CollectorConfig, CollectorError, CollectorHandle};
use crate::config_store::{ConfigError, ConfigSet, ConfigStore, FunctionConfig};
use crate::functions::{self, FunctionError, FunctionRuntime};
use crate::gateway::{self, Gateway, HttpInvoker};
use crate::provider::{self, DeviceWorkers, FleetConfig, Provider, ProviderError, QuantumProvider, RemoteProvider};

pub const INPUT_TOPIC: &str = "qbridge-in";
pub const DEFAULT_AUTH_TOKEN: &str = "qbridge-dev-token";
pub const DEFAULT_GATEWAY_PORT: u16 = 7080;
pub const DEFAULT_FUNCTIONS_PORT: u16 = 7081;
pub const DEFAULT_PROVIDER_PORT: u16 = 7082;
pub const DEFAULT_RESULT_TIMEOUT: Duration = Duration::from_secs(3600);

#[derive(Debug, Error)]
pub enum StackError {
    #[error("invalid stack config: {0}")]
    InvalidConfig(String),
    #[error("cannot bind {component} on {addr}: {source}")]
    Bind {
        component: &'static str,
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Collector(#[from] CollectorError),
    #[error(transparent)]
    Function(#[from] FunctionError),
    #[error(transparent)]
    Broker(#[from] broker::BrokerError),
}

#[derive(Debug, Clone)]
pub struct StackConfig {
    /// Dispatch config file. `None` uses one record per built-in algorithm
    /// pointing at this stack's functions listener.
    pub config_path: Option<PathBuf>,
    pub fleet: FleetConfig,
    pub host: IpAddr,
    /// Port 0 picks a free port.
    pub gateway_port: u16,
    pub functions_port: u16,
    pub provider_port: u16,
    pub collector: CollectorConfig,
    pub seed: u64,
    pub auth_token: String,
    pub detached_services: bool,
    /// PENDING records older than this are failed by the gateway.
    pub result_timeout: Duration,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            config_path: None,
            fleet: FleetConfig::default(),
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            gateway_port: DEFAULT_GATEWAY_PORT,
            functions_port: DEFAULT_FUNCTIONS_PORT,
            provider_port: DEFAULT_PROVIDER_PORT,
            collector: CollectorConfig::default(),
            seed: 0,
            auth_token: DEFAULT_AUTH_TOKEN.into(),
            detached_services: false,
            result_timeout: DEFAULT_RESULT_TIMEOUT,
        }
    }
}

impl StackConfig {
    /// Free ports everywhere; for tests.
    pub fn ephemeral() -> Self {
        Self {
            gateway_port: 0,
            functions_port: 0,
            provider_port: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), StackError> {
        let fixed: Vec<u16> = [self.gateway_port, self.functions_port, self.provider_port]
            .into_iter()
            .filter(|&p| p != 0)
            .collect();
        if fixed.iter().collect::<BTreeSet<_>>().len() != fixed.len() {
            return Err(StackError::InvalidConfig("ports must be distinct".into()));
        }
        if let Some(path) = &self.config_path {
            if !path.is_file() {
                return Err(StackError::InvalidConfig(format!(
                    "config file {} does not exist",
                    path.display()
                )));
            }
        }
        self.fleet.validate()?;
        self.collector.validate()?;
        if self.result_timeout.is_zero() {
            return Err(StackError::InvalidConfig("result timeout must be positive".into()));
        }
        Ok(())
    }
}

/// Already-bound listeners, so callers can learn the ports before start.
pub struct Listeners {
    pub gateway: TcpListener,
    pub functions: TcpListener,
    pub provider: TcpListener,
}

impl Listeners {
    pub async fn bind(config: &StackConfig) -> Result<Self, StackError> {
        async fn one(component: &'static str, host: IpAddr, port: u16) -> Result<TcpListener, StackError> {
            let addr = SocketAddr::new(host, port);
            TcpListener::bind(addr)
                .await
                .map_err(|source| StackError::Bind { component, addr, source })
        }
        Ok(Self {
            gateway: one("gateway", config.host, config.gateway_port).await?,
            functions: one("functions", config.host, config.functions_port).await?,
            provider: one("provider", config.host, config.provider_port).await?,
        })
    }

    pub fn gateway_url(&self) -> Url {
        url_of(&self.gateway)
    }

    pub fn functions_url(&self) -> Url {
        url_of(&self.functions)
    }

    pub fn provider_url(&self) -> Url {
        url_of(&self.provider)
    }
}

pub fn url_of(listener: &TcpListener) -> Url {
    let addr = listener.local_addr().expect("bound listener has an address");
    Url::parse(&format!("http://{addr}/")).expect("socket address forms a URL")
}

/// Default dispatch records for the built-in algorithms.
pub fn default_config_set(functions_url: &Url) -> ConfigSet {
    let url = functions_url
        .join(&format!("fn/{}", algorithms::SMILE_SUPER_POSITION))
        .expect("relative path joins");
    ConfigSet::from_records(vec![FunctionConfig::standard(algorithms::SMILE_SUPER_POSITION, url)])
        .expect("built-in config is valid")
}

pub fn serve(listener: TcpListener, router: Router, name: &'static str) -> JoinHandle<()> {
    tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router).await {
            tracing::error!(component = name, error = %e, "server stopped");
        }
    })
}

pub struct Stack {
    broker: Arc<Broker>,
    provider: Provider,
    functions: Arc<FunctionRuntime>,
    gateway: Arc<Gateway>,
    collector: CollectorHandle,
    _device_workers: Arc<DeviceWorkers>,
    servers: Vec<JoinHandle<()>>,
    gateway_url: Url,
    functions_url: Url,
    provider_url: Url,
}

impl Drop for Stack {
    fn drop(&mut self) {
        for s in &self.servers {
            s.abort();
        }
    }
}

impl Stack {
    /// Binds the configured ports and starts everything.
    pub async fn start(config: StackConfig) -> Result<Self, StackError> {
        config.validate()?;
        let listeners = Listeners::bind(&config).await?;
        Self::start_with(config, listeners).await
    }

    pub async fn start_with(config: StackConfig, listeners: Listeners) -> Result<Self, StackError> {
        config.validate()?;
        let gateway_url = listeners.gateway_url();
        let functions_url = listeners.functions_url();
        let provider_url = listeners.provider_url();

        let config_store = match &config.config_path {
            Some(path) => ConfigStore::open(path)?,
            None => ConfigStore::fixed(default_config_set(&functions_url)),
        };

        let broker = Arc::new(Broker::new());
        broker.create_topic(INPUT_TOPIC)?;
        let provider = Provider::new(config.fleet.clone(), config.seed)?;
        let device_workers = Arc::new(provider.run_device_workers());

        let (bus, provider_client): (Arc<dyn EventBus>, Arc<dyn QuantumProvider>) =
            if config.detached_services {
                (
                    Arc::new(RemoteBus::new(gateway_url.clone())),
                    Arc::new(RemoteProvider::new(provider_url.clone())),
                )
            } else {
                (broker.clone(), Arc::new(provider.clone()))
            };

        let functions = Arc::new(FunctionRuntime::new(
            provider_client.clone(),
            bus.clone(),
            INPUT_TOPIC,
            config.auth_token.clone(),
        ));
        algorithms::register_builtin(&functions)?;

        let collector = Arc::new(Collector::new(
            bus,
            provider_client,
            INPUT_TOPIC,
            config.collector,
        )?)
        .spawn();

        let gateway = Gateway::new(
            Arc::new(config_store),
            broker.clone(),
            Arc::new(HttpInvoker::new()),
            config.auth_token.clone(),
        );
        gateway.register_post_processor(
            algorithms::SMILE_SUPER_POSITION,
            algorithms::emoticon_frequencies,
        );

        let sweeper = tokio::spawn(gateway::run_pending_sweeper(
            Arc::downgrade(&gateway),
            config.result_timeout,
            Duration::from_secs(1).min(config.result_timeout),
        ));

        let mut servers = vec![
            serve(listeners.provider, provider::http::router(provider.clone()), "provider"),
            serve(listeners.functions, functions::http::router(functions.clone()), "functions"),
            serve(
                listeners.gateway,
                gateway::http::router(gateway.clone()).merge(broker::http::router(broker.clone())),
                "gateway",
            ),
        ];

        servers.push(sweeper);

        gateway.register_health_check("broker", || true);
        let workers = Arc::downgrade(&device_workers);
        gateway.register_health_check("provider", move || {
            workers.upgrade().is_some_and(|w| w.is_running())
        });
        let functions_server = servers[1].abort_handle();
        gateway.register_health_check("functions", move || !functions_server.is_finished());
        let collector_alive = collector.liveness();
        gateway.register_health_check("collector", collector_alive);

        tracing::info!(%gateway_url, %functions_url, %provider_url, detached = config.detached_services, "stack started");
        Ok(Self {
            broker,
            provider,
            functions,
            gateway,
            collector,
            _device_workers: device_workers,
            servers,
            gateway_url,
            functions_url,
            provider_url,
        })
    }

    pub fn broker(&self) -> &Arc<Broker> {
        &self.broker
    }

    pub fn provider(&self) -> &Provider {
        &self.provider
    }

    pub fn functions(&self) -> &Arc<FunctionRuntime> {
        &self.functions
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn collector(&self) -> &Arc<Collector> {
        self.collector.collector()
    }

    pub fn gateway_url(&self) -> &Url {
        &self.gateway_url
    }

    pub fn functions_url(&self) -> &Url {
        &self.functions_url
    }

    pub fn provider_url(&self) -> &Url {
        &self.provider_url
    }

    /// Polls the health endpoint until every component reports up.
    pub async fn wait_healthy(&self, timeout: Duration) -> bool {
        let deadline = tokio::time::Instant::now() + timeout;
        let client = reqwest::Client::new();
        let url = self.gateway_url.join("api/health").expect("static path");
        loop {
            if let Ok(r) = client.get(url.clone()).send().await {
                if r.status().is_success() {
                    return true;
                }
            }
            if tokio::time::Instant::now() >= deadline {
                return false;
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    pub fn shutdown(self) {
        drop(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn port_validation() {
        let mut c = StackConfig::default();
        assert!(c.validate().is_ok());
        c.functions_port = c.gateway_port;
        assert!(c.validate().is_err());
        let mut c = StackConfig::ephemeral();
        assert!(c.validate().is_ok());
        c.config_path = Some("/definitely/missing.json".into());
        assert!(matches!(c.validate(), Err(StackError::InvalidConfig(_))));
    }

    #[tokio::test]
    async fn port_in_use_is_reported() {
        let taken = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let mut c = StackConfig::ephemeral();
        c.gateway_port = taken.local_addr().unwrap().port();
        assert!(matches!(
            Stack::start(c).await,
            Err(StackError::Bind { component: "gateway", .. })
        ));
    }

    #[tokio::test]
    async fn stack_reports_healthy() {
        let stack = Stack::start(StackConfig::ephemeral()).await.unwrap();
        assert!(stack.wait_healthy(Duration::from_secs(5)).await);
        let report = stack.gateway().health();
        let names: Vec<_> = report.keys().map(String::as_str).collect();
        assert_eq!(names, ["broker", "collector", "functions", "gateway", "provider"]);
        assert!(report.values().all(|&v| v));
    }
}
