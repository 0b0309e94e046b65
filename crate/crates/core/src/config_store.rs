//! Function dispatch configuration.
//!
//! The file is a JSON array of records shaped like:
//!
//! ```json
//! {
//!   "_id": "smile_super_position",
//!   "functionHttpMethod": "POST",
//!   "functionBackendUrl": "http://127.0.0.1:8081/fn/smile_super_position",
//!   "functionParams": {
//!     "body": "incomingRequestBody",
//!     "headers": {
//!       "Authorization": "IAMBearerToken",
//!       "Content-Type": "application/json",
//!       "Accept": "application/json"
//!     }
//!   }
//! }
//! ```
//!
//! `"IAMBearerToken"` and `"incomingRequestBody"` are placeholders filled in
//! by [`render_invocation`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

pub const AUTHORIZATION: &str = "Authorization";
pub const REQUIRED_HEADERS: [&str; 3] = [AUTHORIZATION, "Content-Type", "Accept"];
pub const TOKEN_PLACEHOLDER: &str = "IAMBearerToken";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config document: {0}")]
    Parse(String),
    #[error("config record `{record}`: invalid field `{field}`: {reason}")]
    Validation {
        record: String,
        field: String,
        reason: String,
    },
    #[error("no function configured for algorithm `{0}`")]
    UnknownAlgorithm(String),
    #[error("request body must not be empty")]
    EmptyBody,
}

impl ConfigError {
    fn invalid(record: &str, field: &str, reason: impl Into<String>) -> Self {
        ConfigError::Validation {
            record: record.to_string(),
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HttpMethod {
    #[serde(rename = "POST")]
    Post,
}

impl HttpMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            HttpMethod::Post => "POST",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BodyBinding {
    #[serde(rename = "incomingRequestBody")]
    IncomingRequestBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionParams {
    pub body: BodyBinding,
    pub headers: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionConfig {
    #[serde(rename = "_id")]
    pub id: String,
    #[serde(rename = "functionHttpMethod")]
    pub http_method: HttpMethod,
    #[serde(rename = "functionBackendUrl")]
    pub backend_url: Url,
    #[serde(rename = "functionParams")]
    pub params: FunctionParams,
}

impl FunctionConfig {
    /// A record in the canonical shape pointing at `backend_url`.
    pub fn standard(id: impl Into<String>, backend_url: Url) -> Self {
        let headers = [
            (AUTHORIZATION, TOKEN_PLACEHOLDER),
            ("Content-Type", "application/json"),
            ("Accept", "application/json"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Self {
            id: id.into(),
            http_method: HttpMethod::Post,
            backend_url,
            params: FunctionParams {
                body: BodyBinding::IncomingRequestBody,
                headers,
            },
        }
    }
}

/// Loosely typed mirror of a record so that validation can name the field.
#[derive(Deserialize)]
struct RawRecord {
    #[serde(rename = "_id")]
    id: Option<String>,
    #[serde(rename = "functionHttpMethod")]
    http_method: Option<String>,
    #[serde(rename = "functionBackendUrl")]
    backend_url: Option<String>,
    #[serde(rename = "functionParams")]
    params: Option<RawParams>,
}

#[derive(Deserialize)]
struct RawParams {
    body: Option<String>,
    headers: Option<BTreeMap<String, String>>,
}

fn validate(index: usize, raw: RawRecord) -> Result<FunctionConfig, ConfigError> {
    let id = match raw.id {
        Some(id) if !id.trim().is_empty() => id,
        _ => return Err(ConfigError::invalid(&format!("#{index}"), "_id", "missing or empty")),
    };
    let http_method = match raw.http_method.as_deref() {
        Some("POST") => HttpMethod::Post,
        Some(other) => {
            return Err(ConfigError::invalid(
                &id,
                "functionHttpMethod",
                format!("unsupported method `{other}`"),
            ))
        }
        None => return Err(ConfigError::invalid(&id, "functionHttpMethod", "missing")),
    };
    let backend_url = raw
        .backend_url
        .ok_or_else(|| ConfigError::invalid(&id, "functionBackendUrl", "missing"))
        .and_then(|s| {
            Url::parse(&s).map_err(|e| {
                ConfigError::invalid(&id, "functionBackendUrl", format!("not an absolute URL: {e}"))
            })
        })?;
    let params = raw
        .params
        .ok_or_else(|| ConfigError::invalid(&id, "functionParams", "missing"))?;
    let body = match params.body.as_deref() {
        Some("incomingRequestBody") => BodyBinding::IncomingRequestBody,
        Some(other) => {
            return Err(ConfigError::invalid(
                &id,
                "functionParams.body",
                format!("unsupported binding `{other}`"),
            ))
        }
        None => return Err(ConfigError::invalid(&id, "functionParams.body", "missing")),
    };
    let headers = params
        .headers
        .ok_or_else(|| ConfigError::invalid(&id, "functionParams.headers", "missing"))?;
    if let Some(missing) = REQUIRED_HEADERS.iter().find(|h| !headers.contains_key(**h)) {
        return Err(ConfigError::invalid(
            &id,
            "functionParams.headers",
            format!("missing header `{missing}`"),
        ));
    }
    Ok(FunctionConfig {
        id,
        http_method,
        backend_url,
        params: FunctionParams { body, headers },
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigSet {
    records: BTreeMap<String, FunctionConfig>,
}

impl ConfigSet {
    pub fn from_records(records: Vec<FunctionConfig>) -> Result<Self, ConfigError> {
        if records.is_empty() {
            return Err(ConfigError::invalid("<none>", "_id", "config contains no records"));
        }
        let mut map = BTreeMap::new();
        for record in records {
            if map.contains_key(&record.id) {
                return Err(ConfigError::invalid(&record.id, "_id", "duplicate id"));
            }
            map.insert(record.id.clone(), record);
        }
        Ok(Self { records: map })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw: Vec<RawRecord> =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let records = raw
            .into_iter()
            .enumerate()
            .map(|(i, r)| validate(i, r))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_records(records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.records.values().collect::<Vec<_>>())
            .expect("config records always serialize")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ConfigError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn get(&self, id: &str) -> Result<&FunctionConfig, ConfigError> {
        self.records
            .get(id)
            .ok_or_else(|| ConfigError::UnknownAlgorithm(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Cached [`ConfigSet`] with explicit, atomic reload.
#[derive(Debug)]
pub struct ConfigStore {
    path: Option<PathBuf>,
    current: RwLock<Arc<ConfigSet>>,
}

impl ConfigStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, ConfigError> {
        let path = path.into();
        let set = ConfigSet::load(&path)?;
        Ok(Self {
            path: Some(path),
            current: RwLock::new(Arc::new(set)),
        })
    }

    pub fn fixed(set: ConfigSet) -> Self {
        Self {
            path: None,
            current: RwLock::new(Arc::new(set)),
        }
    }

    pub fn current(&self) -> Arc<ConfigSet> {
        self.current.read().expect("config lock poisoned").clone()
    }

    /// Re-reads the backing file. On error the previous set stays active.
    pub fn reload(&self) -> Result<Arc<ConfigSet>, ConfigError> {
        let Some(path) = &self.path else {
            return Ok(self.current());
        };
        let set = Arc::new(ConfigSet::load(path)?);
        *self.current.write().expect("config lock poisoned") = set.clone();
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvocationRequest {
    pub method: HttpMethod,
    pub url: Url,
    pub headers: BTreeMap<String, String>,
    pub body: String,
}

/// Turns a config record plus the incoming request body into the concrete
/// call: the Authorization header becomes `Bearer <token>` and the body is
/// passed through untouched.
pub fn render_invocation(
    config: &FunctionConfig,
    request_body: &str,
    auth_token: &str,
) -> Result<InvocationRequest, ConfigError> {
    if request_body.is_empty() {
        return Err(ConfigError::EmptyBody);
    }
    let mut headers = config.params.headers.clone();
    headers.insert(AUTHORIZATION.to_string(), format!("Bearer {auth_token}"));
    let body = match config.params.body {
        BodyBinding::IncomingRequestBody => request_body.to_string(),
    };
    Ok(InvocationRequest {
        method: config.http_method,
        url: config.backend_url.clone(),
        headers,
        body,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SMILE: &str = r#"[{
      "_id": "smile_super_position",
      "functionHttpMethod": "POST",
      "functionBackendUrl": "http://functions.local/fn/smile_super_position",
      "functionParams": {
        "body": "incomingRequestBody",
        "headers": {
          "Authorization": "IAMBearerToken",
          "Content-Type": "application/json",
          "Accept": "application/json"
        }
      }
    }]"#;

    #[test]
    fn loads_reference_record() {
        let set = ConfigSet::parse(SMILE).unwrap();
        assert_eq!(set.len(), 1);
        let rec = set.get("smile_super_position").unwrap();
        assert_eq!(rec.http_method, HttpMethod::Post);
        assert_eq!(rec.params.headers[AUTHORIZATION], "IAMBearerToken");
        assert_eq!(rec.params.body, BodyBinding::IncomingRequestBody);
    }

    #[test]
    fn empty_file_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(ConfigSet::load(&path), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn missing_backend_url_names_field() {
        let text = SMILE.replace(
            r#""functionBackendUrl": "http://functions.local/fn/smile_super_position","#,
            "",
        );
        match ConfigSet::parse(&text) {
            Err(ConfigError::Validation { record, field, .. }) => {
                assert_eq!(record, "smile_super_position");
                assert_eq!(field, "functionBackendUrl");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn other_validation_failures() {
        let relative = SMILE.replace("http://functions.local/fn/smile_super_position", "/fn/x");
        assert!(matches!(
            ConfigSet::parse(&relative),
            Err(ConfigError::Validation { field, .. }) if field == "functionBackendUrl"
        ));
        let no_accept = SMILE.replace(r#""Accept": "application/json""#, r#""X": "y""#);
        assert!(matches!(
            ConfigSet::parse(&no_accept),
            Err(ConfigError::Validation { field, .. }) if field == "functionParams.headers"
        ));
        let get = SMILE.replace(r#""POST""#, r#""GET""#);
        assert!(matches!(
            ConfigSet::parse(&get),
            Err(ConfigError::Validation { field, .. }) if field == "functionHttpMethod"
        ));
        assert!(matches!(ConfigSet::parse("[]"), Err(ConfigError::Validation { .. })));

        let rec: serde_json::Value = serde_json::from_str::<Vec<serde_json::Value>>(SMILE).unwrap()[0].clone();
        let dup = serde_json::to_string(&vec![rec.clone(), rec]).unwrap();
        assert!(matches!(
            ConfigSet::parse(&dup),
            Err(ConfigError::Validation { field, .. }) if field == "_id"
        ));
    }

    #[test]
    fn lookup() {
        let a = FunctionConfig::standard("a", Url::parse("http://h/fn/a").unwrap());
        let b = FunctionConfig::standard("b", Url::parse("http://h/fn/b").unwrap());
        let set = ConfigSet::from_records(vec![a, b.clone()]).unwrap();
        assert_eq!(set.get("b").unwrap(), &b);
        assert!(matches!(set.get("nope"), Err(ConfigError::UnknownAlgorithm(id)) if id == "nope"));
    }

    #[test]
    fn render_substitutes_token_and_passes_body() {
        let set = ConfigSet::parse(SMILE).unwrap();
        let rec = set.get("smile_super_position").unwrap();
        let inv = render_invocation(rec, r#"{"a":1}"#, "t0k").unwrap();
        assert_eq!(inv.method, HttpMethod::Post);
        assert_eq!(inv.url, rec.backend_url);
        assert_eq!(inv.headers[AUTHORIZATION], "Bearer t0k");
        assert_eq!(inv.headers["Content-Type"], "application/json");
        assert_eq!(inv.body, r#"{"a":1}"#);

        let inv = render_invocation(rec, "x", "").unwrap();
        assert_eq!(inv.headers[AUTHORIZATION], "Bearer ");
        assert!(matches!(render_invocation(rec, "", "t"), Err(ConfigError::EmptyBody)));

        let odd = " \u{e9}\n{\"k\": [1, 2]}\t";
        assert_eq!(render_invocation(rec, odd, "t").unwrap().body, odd);
    }

    #[test]
    fn reload_picks_up_new_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, SMILE).unwrap();
        let store = ConfigStore::open(&path).unwrap();
        assert!(store.current().get("coin_flip").is_err());

        let mut records: Vec<FunctionConfig> = serde_json::from_str(SMILE).unwrap();
        records.push(FunctionConfig::standard(
            "coin_flip",
            Url::parse("http://functions.local/fn/coin_flip").unwrap(),
        ));
        ConfigSet::from_records(records).unwrap().save(&path).unwrap();
        store.reload().unwrap();
        assert!(store.current().get("coin_flip").is_ok());

        std::fs::write(&path, "not json").unwrap();
        assert!(store.reload().is_err());
        assert_eq!(store.current().len(), 2);
    }

    fn record() -> impl Strategy<Value = FunctionConfig> {
        ("[a-z_]{1,12}", "[a-z]{1,8}", 1u16..9999, prop::collection::btree_map("X-[A-Z][a-z]{0,6}", "[ -~]{0,10}", 0..3))
            .prop_map(|(id, host, port, extra)| {
                let mut rec = FunctionConfig::standard(
                    id.clone(),
                    Url::parse(&format!("http://{host}:{port}/fn/{id}")).unwrap(),
                );
                rec.params.headers.extend(extra);
                rec
            })
    }

    proptest! {
        #[test]
        fn save_load_round_trip(records in prop::collection::vec(record(), 1..6)) {
            let mut seen = std::collections::BTreeSet::new();
            let records: Vec<_> = records.into_iter().filter(|r| seen.insert(r.id.clone())).collect();
            let set = ConfigSet::from_records(records).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c.json");
            set.save(&path).unwrap();
            prop_assert_eq!(ConfigSet::load(&path).unwrap(), set);
        }
    }
}
