//! Blocking HTTP oracle for model-serving endpoints.
//!
//! Each query POSTs the PNG-encoded image as a `multipart/form-data` file
//! field and reads the score out of the JSON response at a configurable
//! slash-delimited path such as `predictions/0/probability`.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use onepixel_core::imaging::encode_png;
use onepixel_core::oracle::{Oracle, OracleError, ScoreValue};
use onepixel_core::RgbImage;
use reqwest::blocking::multipart::{Form, Part};
use serde_json::Value;

pub const DEFAULT_ENDPOINT: &str = "http://localhost:5000/model/predict";
pub const DEFAULT_FIELD_PATH: &str = "predictions/0/probability";
pub const DEFAULT_FIELD_NAME: &str = "image";
pub const ENDPOINT_ENV: &str = "ONEPIXEL_ENDPOINT";
pub const FIELD_PATH_ENV: &str = "ONEPIXEL_FIELD_PATH";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpOracleConfig {
    pub endpoint: String,
    /// Multipart form field carrying the PNG.
    pub field_name: String,
    pub field_path: String,
    pub timeout: Duration,
    /// Extra attempts after a transport failure.
    pub retries: u32,
    /// First retry delay; doubles on each further attempt.
    pub backoff: Duration,
    /// Upper bound on concurrent requests from this oracle.
    pub max_in_flight: usize,
}

impl Default for HttpOracleConfig {
    fn default() -> Self {
        Self {
            endpoint: DEFAULT_ENDPOINT.to_string(),
            field_name: DEFAULT_FIELD_NAME.to_string(),
            field_path: DEFAULT_FIELD_PATH.to_string(),
            timeout: Duration::from_secs(30),
            retries: 2,
            backoff: Duration::from_millis(100),
            max_in_flight: 4,
        }
    }
}

impl HttpOracleConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            ..Self::default()
        }
    }

    /// Applies `ONEPIXEL_ENDPOINT` and `ONEPIXEL_FIELD_PATH` when set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Some(v) = std::env::var(ENDPOINT_ENV).ok().filter(|v| !v.is_empty()) {
            self.endpoint = v;
        }
        if let Some(v) = std::env::var(FIELD_PATH_ENV).ok().filter(|v| !v.is_empty()) {
            self.field_path = v;
        }
        self
    }
}

/// Walks a `/`-delimited path of object keys and array indices.
pub fn extract_score(body: &Value, field_path: &str) -> Result<ScoreValue, OracleError> {
    let missing = || OracleError::MissingField {
        path: field_path.to_string(),
    };
    let mut current = body;
    for segment in field_path.split('/').filter(|s| !s.is_empty()) {
        current = match current {
            Value::Object(map) => map.get(segment).ok_or_else(missing)?,
            Value::Array(items) => {
                let index: usize = segment.parse().map_err(|_| missing())?;
                items.get(index).ok_or_else(missing)?
            }
            _ => return Err(missing()),
        };
    }
    let value = current.as_f64().ok_or_else(|| OracleError::NonNumeric {
        path: field_path.to_string(),
        value: current.to_string(),
    })?;
    ScoreValue::new(value)
}

pub fn parse_response(body: &[u8], field_path: &str) -> Result<ScoreValue, OracleError> {
    let json: Value = serde_json::from_slice(body).map_err(|e| OracleError::Parse(e.to_string()))?;
    extract_score(&json, field_path)
}

struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut n = self.available.lock().expect("permit lock");
        while *n == 0 {
            n = self.freed.wait(n).expect("permit lock");
        }
        *n -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("permit lock") += 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpOracle {
    client: reqwest::blocking::Client,
    config: HttpOracleConfig,
    permits: Permits,
}

impl std::fmt::Debug for HttpOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpOracle").field("config", &self.config).finish()
    }
}

fn transport_error(e: reqwest::Error) -> OracleError {
    if e.is_timeout() {
        return OracleError::Timeout { attempts: 1 };
    }
    let mut message = e.to_string();
    let mut source = std::error::Error::source(&e);
    while let Some(s) = source {
        message.push_str(": ");
        message.push_str(&s.to_string());
        source = s.source();
    }
    OracleError::Connection { attempts: 1, message }
}

fn with_attempts(err: OracleError, attempts: u32) -> OracleError {
    match err {
        OracleError::Timeout { .. } => OracleError::Timeout { attempts },
        OracleError::Connection { message, .. } => OracleError::Connection { attempts, message },
        other => other,
    }
}

impl HttpOracle {
    pub fn new(config: HttpOracleConfig) -> Result<Self, OracleError> {
        reqwest::Url::parse(&config.endpoint)
            .map_err(|e| OracleError::Config(format!("invalid endpoint `{}`: {e}", config.endpoint)))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| OracleError::Config(e.to_string()))?;
        Ok(Self {
            client,
            permits: Permits::new(config.max_in_flight),
            config,
        })
    }

    pub fn config(&self) -> &HttpOracleConfig {
        &self.config
    }

    fn send_once(&self, png: &[u8]) -> Result<ScoreValue, OracleError> {
        let part = Part::bytes(png.to_vec())
            .file_name("image.png")
            .mime_str("image/png")
            .map_err(|e| OracleError::Config(e.to_string()))?;
        let form = Form::new().part(self.config.field_name.clone(), part);
        let response = self
            .client
            .post(&self.config.endpoint)
            .multipart(form)
            .send()
            .map_err(transport_error)?;
        let status = response.status();
        let body = response.bytes().map_err(transport_error)?;
        if !status.is_success() {
            let mut text = String::from_utf8_lossy(&body).into_owned();
            text.truncate(200);
            return Err(OracleError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        parse_response(&body, &self.config.field_path)
    }

    /// Scores already-encoded PNG bytes, retrying transport failures
    /// (timeouts, refused connections, 5xx) with exponential backoff.
    pub fn http_score(&self, png: &[u8]) -> Result<ScoreValue, OracleError> {
        let _permit = self.permits.acquire();
        let mut attempt = 0;
        loop {
            match self.send_once(png) {
                Ok(score) => return Ok(score),
                Err(e) if e.is_transient() && attempt < self.config.retries => {
                    let delay = self.config.backoff.saturating_mul(1 << attempt.min(16));
                    tracing::debug!(attempt, error = %e, ?delay, "retrying oracle query");
                    thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(with_attempts(e, attempt + 1)),
            }
        }
    }
}

impl Oracle for HttpOracle {
    fn score(&self, image: &RgbImage) -> Result<ScoreValue, OracleError> {
        self.http_score(&encode_png(image)?)
    }
}

/// One-off query with default timeout and retry settings.
pub fn http_score(endpoint: &str, image_bytes: &[u8], field_path: &str) -> Result<ScoreValue, OracleError> {
    let oracle = HttpOracle::new(HttpOracleConfig {
        field_path: field_path.to_string(),
        ..HttpOracleConfig::new(endpoint)
    })?;
    oracle.http_score(image_bytes)
}
