//! In-process, append-only topic log with consumer-group offsets.
//!
//! Every topic is a single ordered partition. Consumers identify themselves
//! with a [`Subscription`] (topic + group id); the committed offset is held
//! by the broker and shared by every handle carrying the same pair. A
//! consume returns everything past the committed offset, so a group that
//! crashes before committing sees the same messages again.
//!
//! [`EventBus`] abstracts over the embedded [`Broker`] and the HTTP client in
//! [`http::RemoteBus`] so that producers and consumers do not care which
//! deployment mode they run in.

pub mod http;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Notify;

pub use http::RemoteBus;

pub const MAX_TOPIC_NAME_LEN: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Message {
    pub offset: u64,
    pub payload: String,
    /// Microseconds since the broker was created.
    pub produced_at_micros: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Subscription {
    pub topic: String,
    pub group_id: String,
}

impl Subscription {
    pub fn new(topic: impl Into<String>, group_id: impl Into<String>) -> Self {
        Self {
            topic: topic.into(),
            group_id: group_id.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail")]
pub enum BrokerError {
    #[error("topic `{0}` already exists")]
    DuplicateTopic(String),
    #[error("invalid topic name `{0}`")]
    InvalidName(String),
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("offset regression: committed {committed}, requested {requested}")]
    OffsetRegression { committed: i64, requested: i64 },
    #[error("payload must not be empty")]
    EmptyPayload,
    #[error("maxMessages must be at least 1")]
    InvalidBatchSize,
    #[error("broker unavailable: {0}")]
    Unavailable(String),
}

/// Returns true when `name` is 1..=128 characters from `[a-zA-Z0-9._-]`.
pub fn is_valid_topic_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= MAX_TOPIC_NAME_LEN
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

#[derive(Default)]
struct TopicLog {
    messages: Mutex<Vec<Message>>,
    appended: Notify,
}

pub struct Broker {
    epoch: Instant,
    topics: RwLock<HashMap<String, Arc<TopicLog>>>,
    committed: Mutex<HashMap<Subscription, i64>>,
}

impl Default for Broker {
    fn default() -> Self {
        Self::new()
    }
}

impl Broker {
    pub fn new() -> Self {
        Self {
            epoch: Instant::now(),
            topics: RwLock::new(HashMap::new()),
            committed: Mutex::new(HashMap::new()),
        }
    }

    pub fn create_topic(&self, name: &str) -> Result<(), BrokerError> {
        if !is_valid_topic_name(name) {
            return Err(BrokerError::InvalidName(name.to_string()));
        }
        let mut topics = self.topics.write().expect("topic table poisoned");
        if topics.contains_key(name) {
            return Err(BrokerError::DuplicateTopic(name.to_string()));
        }
        topics.insert(name.to_string(), Arc::default());
        Ok(())
    }

    /// Creates the topic unless it already exists.
    pub fn ensure_topic(&self, name: &str) -> Result<(), BrokerError> {
        match self.create_topic(name) {
            Ok(()) | Err(BrokerError::DuplicateTopic(_)) => Ok(()),
            Err(e) => Err(e),
        }
    }

    pub fn has_topic(&self, name: &str) -> bool {
        self.topics
            .read()
            .expect("topic table poisoned")
            .contains_key(name)
    }

    pub fn topic_names(&self) -> Vec<String> {
        let mut names: Vec<_> = self
            .topics
            .read()
            .expect("topic table poisoned")
            .keys()
            .cloned()
            .collect();
        names.sort();
        names
    }

    fn topic(&self, name: &str) -> Result<Arc<TopicLog>, BrokerError> {
        self.topics
            .read()
            .expect("topic table poisoned")
            .get(name)
            .cloned()
            .ok_or_else(|| BrokerError::UnknownTopic(name.to_string()))
    }

    /// Appends `payload` and returns its offset.
    pub fn produce(&self, topic: &str, payload: impl Into<String>) -> Result<u64, BrokerError> {
        let payload = payload.into();
        let log = self.topic(topic)?;
        if payload.is_empty() {
            return Err(BrokerError::EmptyPayload);
        }
        let offset = {
            let mut messages = log.messages.lock().expect("topic log poisoned");
            let offset = messages.len() as u64;
            messages.push(Message {
                offset,
                payload,
                produced_at_micros: self.epoch.elapsed().as_micros() as u64,
            });
            offset
        };
        log.appended.notify_waiters();
        Ok(offset)
    }

    pub fn committed_offset(&self, sub: &Subscription) -> i64 {
        *self
            .committed
            .lock()
            .expect("offset table poisoned")
            .get(sub)
            .unwrap_or(&-1)
    }

    /// Returns up to `max_messages` messages past the group's committed
    /// offset, waiting up to `timeout` for the first one to arrive.
    pub async fn consume(
        &self,
        sub: &Subscription,
        max_messages: usize,
        timeout: Duration,
    ) -> Result<Vec<Message>, BrokerError> {
        if max_messages == 0 {
            return Err(BrokerError::InvalidBatchSize);
        }
        let log = self.topic(&sub.topic)?;
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let notified = log.appended.notified();
            tokio::pin!(notified);
            // Register before reading so an append between the read and the
            // await is not missed.
            notified.as_mut().enable();

            let start = (self.committed_offset(sub) + 1) as usize;
            {
                let messages = log.messages.lock().expect("topic log poisoned");
                if start < messages.len() {
                    let end = messages.len().min(start + max_messages);
                    return Ok(messages[start..end].to_vec());
                }
            }
            if tokio::time::timeout_at(deadline, notified).await.is_err() {
                return Ok(Vec::new());
            }
        }
    }

    pub fn commit(&self, sub: &Subscription, offset: i64) -> Result<(), BrokerError> {
        self.topic(&sub.topic)?;
        let mut committed = self.committed.lock().expect("offset table poisoned");
        let current = committed.entry(sub.clone()).or_insert(-1);
        if offset < *current {
            return Err(BrokerError::OffsetRegression {
                committed: *current,
                requested: offset,
            });
        }
        *current = offset;
        Ok(())
    }

    /// Copy of a topic's full log, independent of any consumer group.
    pub fn snapshot(&self, topic: &str) -> Result<Vec<Message>, BrokerError> {
        let log = self.topic(topic)?;
        let messages = log.messages.lock().expect("topic log poisoned");
        Ok(messages.clone())
    }

    pub fn topic_len(&self, topic: &str) -> Result<u64, BrokerError> {
        let log = self.topic(topic)?;
        let len = log.messages.lock().expect("topic log poisoned").len();
        Ok(len as u64)
    }
}

/// Producer/consumer surface shared by the embedded broker and its HTTP client.
#[async_trait]
pub trait EventBus: Send + Sync {
    async fn create_topic(&self, name: &str) -> Result<(), BrokerError>;

    async fn produce(&self, topic: &str, payload: String) -> Result<u64, BrokerError>;

    async fn consume(
        &self,
        sub: &Subscription,
        max_messages: usize,
        timeout: Duration,
    ) -> Result<Vec<Message>, BrokerError>;

    async fn commit(&self, sub: &Subscription, offset: i64) -> Result<(), BrokerError>;
}

#[async_trait]
impl EventBus for Broker {
    async fn create_topic(&self, name: &str) -> Result<(), BrokerError> {
        Broker::create_topic(self, name)
    }

    async fn produce(&self, topic: &str, payload: String) -> Result<u64, BrokerError> {
        Broker::produce(self, topic, payload)
    }

    async fn consume(
        &self,
        sub: &Subscription,
        max_messages: usize,
        timeout: Duration,
    ) -> Result<Vec<Message>, BrokerError> {
        Broker::consume(self, sub, max_messages, timeout).await
    }

    async fn commit(&self, sub: &Subscription, offset: i64) -> Result<(), BrokerError> {
        Broker::commit(self, sub, offset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub(topic: &str) -> Subscription {
        Subscription::new(topic, "g")
    }

    #[test]
    fn create_topic_rules() {
        let broker = Broker::new();
        broker.create_topic("qbridge-in").unwrap();
        assert_eq!(broker.topic_len("qbridge-in").unwrap(), 0);
        assert_eq!(
            broker.create_topic("qbridge-in"),
            Err(BrokerError::DuplicateTopic("qbridge-in".into()))
        );
        assert_eq!(
            broker.create_topic("bad topic!"),
            Err(BrokerError::InvalidName("bad topic!".into()))
        );
        assert!(broker.create_topic("").is_err());
        assert!(broker.create_topic(&"a".repeat(128)).is_ok());
        assert!(broker.create_topic(&"a".repeat(129)).is_err());
    }

    #[test]
    fn produce_assigns_consecutive_offsets() {
        let broker = Broker::new();
        broker.create_topic("t").unwrap();
        assert_eq!(broker.produce("t", "a").unwrap(), 0);
        assert_eq!(broker.produce("t", "b").unwrap(), 1);
        assert_eq!(
            broker.produce("missing", "x"),
            Err(BrokerError::UnknownTopic("missing".into()))
        );
        assert_eq!(broker.produce("t", ""), Err(BrokerError::EmptyPayload));
    }

    #[tokio::test]
    async fn consume_replays_from_committed_offset() {
        let broker = Broker::new();
        broker.create_topic("t").unwrap();
        for p in ["a", "b", "c"] {
            broker.produce("t", p).unwrap();
        }
        let got = broker.consume(&sub("t"), 10, Duration::ZERO).await.unwrap();
        assert_eq!(got.iter().map(|m| m.offset).collect::<Vec<_>>(), [0, 1, 2]);

        broker.commit(&sub("t"), 1).unwrap();
        let got = broker.consume(&sub("t"), 10, Duration::ZERO).await.unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].offset, 2);
        assert_eq!(got[0].payload, "c");
    }

    #[tokio::test]
    async fn consume_times_out_empty() {
        let broker = Broker::new();
        broker.create_topic("t").unwrap();
        let start = std::time::Instant::now();
        let got = broker
            .consume(&sub("t"), 1, Duration::from_millis(10))
            .await
            .unwrap();
        assert!(got.is_empty());
        assert!(start.elapsed() >= Duration::from_millis(10));
    }

    #[tokio::test]
    async fn consume_wakes_on_produce() {
        let broker = Arc::new(Broker::new());
        broker.create_topic("t").unwrap();
        let b = broker.clone();
        let waiter =
            tokio::spawn(async move { b.consume(&sub("t"), 5, Duration::from_secs(5)).await });
        tokio::time::sleep(Duration::from_millis(20)).await;
        broker.produce("t", "hello").unwrap();
        let got = waiter.await.unwrap().unwrap();
        assert_eq!(got[0].payload, "hello");
    }

    #[tokio::test]
    async fn consume_errors() {
        let broker = Broker::new();
        assert_eq!(
            broker.consume(&sub("nope"), 1, Duration::ZERO).await,
            Err(BrokerError::UnknownTopic("nope".into()))
        );
        broker.create_topic("t").unwrap();
        assert_eq!(
            broker.consume(&sub("t"), 0, Duration::ZERO).await,
            Err(BrokerError::InvalidBatchSize)
        );
    }

    #[tokio::test]
    async fn commit_is_monotonic_and_shared_by_group() {
        let broker = Broker::new();
        broker.create_topic("t").unwrap();
        for i in 0..5 {
            broker.produce("t", format!("m{i}")).unwrap();
        }
        let a = Subscription::new("t", "grp");
        let b = Subscription::new("t", "grp");
        broker.commit(&a, 2).unwrap();
        let got = broker.consume(&b, 10, Duration::ZERO).await.unwrap();
        assert_eq!(got[0].offset, 3);
        assert_eq!(
            broker.commit(&a, 0),
            Err(BrokerError::OffsetRegression {
                committed: 2,
                requested: 0
            })
        );
        broker.commit(&a, 2).unwrap();

        // Other groups are unaffected.
        let other = Subscription::new("t", "other");
        assert_eq!(broker.committed_offset(&other), -1);
    }

    #[tokio::test]
    async fn uncommitted_messages_are_redelivered() {
        let broker = Broker::new();
        broker.create_topic("t").unwrap();
        broker.produce("t", "job").unwrap();
        let first = broker.consume(&sub("t"), 1, Duration::ZERO).await.unwrap();
        // consumer "crashes" here without committing
        let again = broker.consume(&sub("t"), 1, Duration::ZERO).await.unwrap();
        assert_eq!(first, again);
        broker.commit(&sub("t"), 0).unwrap();
        let none = broker.consume(&sub("t"), 1, Duration::ZERO).await.unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn error_wire_form_round_trips() {
        let err = BrokerError::OffsetRegression {
            committed: 4,
            requested: 1,
        };
        let json = serde_json::to_string(&err).unwrap();
        assert_eq!(serde_json::from_str::<BrokerError>(&json).unwrap(), err);
    }
}
