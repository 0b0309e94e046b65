//! Serverless-style gateway, function runtime, broker, results collector
//! and mock quantum provider, plus the simulator they run on.

pub mod algorithms;
pub mod broker;
pub mod client;
pub mod collector;
pub mod config_store;
pub mod functions;
pub mod gateway;
pub mod loadgen;
pub mod provider;
pub mod qsim;
pub mod stack;

pub use broker::{Broker, BrokerError, EventBus, Message, Subscription};
pub use collector::{decide_poll_action, CollectorConfig, PollDecision, ResultEvent, ResultStatus};
pub use config_store::{ConfigSet, ConfigStore, FunctionConfig};
pub use functions::{ActionRequest, ActionResponse, BackendType, SubmissionEvent};
pub use gateway::{ClientSession, JobRecord, JobStatus, SubmitRequest};
pub use provider::{least_busy, Device, DeviceSpec, FleetConfig, JobState, Provider};
pub use qsim::{CircuitSpec, Counts, Gate, NoiseModel};
pub use stack::{Stack, StackConfig};
