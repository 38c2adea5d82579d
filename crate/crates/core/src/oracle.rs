//! Classifier oracles: the black-box `image -> score` interface, synthetic
//! classifiers for offline work, and an LRU memoizing wrapper.

use std::fmt;
use std::num::NonZeroUsize;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use lru::LruCache;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imaging::{ImagingError, Rgb, RgbImage};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("connection failed after {attempts} attempt(s): {message}")]
    Connection { attempts: u32, message: String },
    #[error("endpoint answered HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("response body is not valid JSON: {0}")]
    Parse(String),
    #[error("response has no value at `{path}`")]
    MissingField { path: String },
    #[error("value at `{path}` is not a number: {value}")]
    NonNumeric { path: String, value: String },
    #[error("score {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("could not prepare image: {0}")]
    Image(#[from] ImagingError),
    #[error("invalid oracle configuration: {0}")]
    Config(String),
}

impl OracleError {
    /// Transport-level failures worth retrying. Parse and schema errors are not.
    pub fn is_transient(&self) -> bool {
        match self {
            OracleError::Timeout { .. } | OracleError::Connection { .. } => true,
            OracleError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// Classifier confidence in `[0, 1]`; 1 means mitosis, 0 means normal.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ScoreValue(f64);

impl ScoreValue {
    pub fn new(value: f64) -> Result<Self, OracleError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(OracleError::OutOfRange(value))
        }
    }

    /// Clamps into `[0, 1]`. Only for synthetic oracles whose formula is
    /// defined with a clamp; remote scores go through [`ScoreValue::new`].
    pub fn saturating(value: f64) -> Self {
        Self(if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) })
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ScoreValue {
    type Error = OracleError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ScoreValue> for f64 {
    fn from(s: ScoreValue) -> f64 {
        s.0
    }
}

impl fmt::Display for ScoreValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A black-box classifier. Implementations must be deterministic for the
/// lifetime of a campaign: the same image always gets the same score.
pub trait Oracle: Send + Sync {
    fn score(&self, image: &RgbImage) -> Result<ScoreValue, OracleError>;
}

impl<T: Oracle + ?Sized> Oracle for &T {
    fn score(&self, image: &RgbImage) -> Result<ScoreValue, OracleError> {
        (**self).score(image)
    }
}

impl<T: Oracle + ?Sized> Oracle for Box<T> {
    fn score(&self, image: &RgbImage) -> Result<ScoreValue, OracleError> {
        (**self).score(image)
    }
}

impl<T: Oracle + ?Sized> Oracle for Arc<T> {
    fn score(&self, image: &RgbImage) -> Result<ScoreValue, OracleError> {
        (**self).score(image)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantOracle(pub ScoreValue);

impl Oracle for ConstantOracle {
    fn score(&self, _: &RgbImage) -> Result<ScoreValue, OracleError> {
        Ok(self.0)
    }
}

/// Synthetic classifier with a planted one-pixel vulnerability.
///
/// `score = clamp01(base + delta * max_p proximity(p))` where
/// `proximity(p) = max(0, 1 - |color(p) - trigger|_1 / (3 * 255 * width))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedOracle {
    pub base: f64,
    pub trigger: Rgb,
    pub width: f64,
    pub delta: f64,
}

impl PlantedOracle {
    pub fn new(base: f64, trigger: Rgb, width: f64, delta: f64) -> Result<Self, OracleError> {
        if !(0.0..=1.0).contains(&base) {
            return Err(OracleError::Config(format!("base score {base} outside [0, 1]")));
        }
        if !(width.is_finite() && width > 0.0) {
            return Err(OracleError::Config(format!(
                "color width must be positive, got {width}"
            )));
        }
        if !delta.is_finite() {
            return Err(OracleError::Config(format!("effect must be finite, got {delta}")));
        }
        Ok(Self {
            base,
            trigger,
            width,
            delta,
        })
    }

    pub fn proximity(&self, color: Rgb) -> f64 {
        let l1: u32 = color.iter().zip(self.trigger).map(|(&c, t)| c.abs_diff(t) as u32).sum();
        (1.0 - l1 as f64 / (3.0 * 255.0 * self.width)).max(0.0)
    }

    pub fn score_value(&self, image: &RgbImage) -> f64 {
        let closest = image.pixels().map(|c| self.proximity(c)).fold(0.0, f64::max);
        (self.base + self.delta * closest).clamp(0.0, 1.0)
    }
}

impl Oracle for PlantedOracle {
    fn score(&self, image: &RgbImage) -> Result<ScoreValue, OracleError> {
        Ok(ScoreValue::saturating(self.score_value(image)))
    }
}

/// Scores images by mean darkness passed through a logistic squash:
/// `1 / (1 + exp(-steepness * (darkness - threshold)))` with
/// `darkness = mean(1 - (r + g + b) / 765)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DarknessOracle {
    pub threshold: f64,
    pub steepness: f64,
}

impl Default for DarknessOracle {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            steepness: 10.0,
        }
    }
}

impl DarknessOracle {
    pub fn darkness(image: &RgbImage) -> f64 {
        let total: f64 = image
            .pixels()
            .map(|[r, g, b]| 1.0 - (r as f64 + g as f64 + b as f64) / 765.0)
            .sum();
        total / image.pixel_count() as f64
    }
}

impl Oracle for DarknessOracle {
    fn score(&self, image: &RgbImage) -> Result<ScoreValue, OracleError> {
        let d = Self::darkness(image);
        Ok(ScoreValue::saturating(
            1.0 / (1.0 + (-self.steepness * (d - self.threshold)).exp()),
        ))
    }
}

/// Mirrors another oracle: `score = 1 - inner`.
#[derive(Debug, Clone)]
pub struct Complement<O>(pub O);

impl<O: Oracle> Oracle for Complement<O> {
    fn score(&self, image: &RgbImage) -> Result<ScoreValue, OracleError> {
        Ok(ScoreValue::saturating(1.0 - self.0.score(image)?.get()))
    }
}

/// Text form of a synthetic oracle, e.g.
/// `planted:base=0.97,trigger=255-255-0,w=0.5,delta=-0.95`,
/// `constant:value=0.42` (or `constant:0.42`) and
/// `darkness:threshold=0.5,steepness=10`.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleSpec {
    Constant(f64),
    Planted(PlantedOracle),
    Darkness(DarknessOracle),
}

impl OracleSpec {
    pub fn build(&self) -> Result<Box<dyn Oracle>, OracleError> {
        Ok(match *self {
            OracleSpec::Constant(v) => Box::new(ConstantOracle(ScoreValue::new(v)?)),
            OracleSpec::Planted(p) => Box::new(PlantedOracle::new(p.base, p.trigger, p.width, p.delta)?),
            OracleSpec::Darkness(d) => Box::new(d),
        })
    }
}

fn parse_number(key: &str, value: &str) -> Result<f64, OracleError> {
    value
        .trim()
        .parse()
        .map_err(|_| OracleError::Config(format!("`{key}` expects a number, got `{value}`")))
}

fn parse_color(value: &str) -> Result<Rgb, OracleError> {
    let parts: Vec<&str> = value.split('-').collect();
    let bad = || OracleError::Config(format!("color must look like 255-255-0, got `{value}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut rgb = [0; 3];
    for (slot, part) in rgb.iter_mut().zip(parts) {
        *slot = part.trim().parse().map_err(|_| bad())?;
    }
    Ok(rgb)
}

impl FromStr for OracleSpec {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, params) = s.split_once(':').unwrap_or((s, ""));
        let mut pairs = Vec::new();
        for item in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match item.split_once('=') {
                Some((k, v)) => pairs.push((k.trim(), v.trim())),
                None => pairs.push(("", item)),
            }
        }
        let unknown = |key: &str| OracleError::Config(format!("unknown parameter `{key}` for {kind} oracle"));

        match kind.trim() {
            "constant" => {
                let mut value = None;
                for (k, v) in pairs {
                    match k {
                        "" | "value" => value = Some(parse_number("value", v)?),
                        other => return Err(unknown(other)),
                    }
                }
                let value = value.ok_or_else(|| OracleError::Config("constant oracle needs a value".into()))?;
                ScoreValue::new(value)?;
                Ok(OracleSpec::Constant(value))
            }
            "planted" => {
                let mut p = PlantedOracle {
                    base: 0.97,
                    trigger: [255, 255, 0],
                    width: 0.5,
                    delta: -0.95,
                };
                for (k, v) in pairs {
                    match k {
                        "base" => p.base = parse_number(k, v)?,
                        "trigger" => p.trigger = parse_color(v)?,
                        "w" | "width" => p.width = parse_number(k, v)?,
                        "delta" => p.delta = parse_number(k, v)?,
                        other => return Err(unknown(other)),
                    }
                }
                Ok(OracleSpec::Planted(PlantedOracle::new(
                    p.base, p.trigger, p.width, p.delta,
                )?))
            }
            "darkness" => {
                let mut d = DarknessOracle::default();
                for (k, v) in pairs {
                    match k {
                        "threshold" => d.threshold = parse_number(k, v)?,
                        "steepness" => d.steepness = parse_number(k, v)?,
                        other => return Err(unknown(other)),
                    }
                }
                Ok(OracleSpec::Darkness(d))
            }
            other => Err(OracleError::Config(format!(
                "unknown oracle kind `{other}` (expected constant, planted or darkness)"
            ))),
        }
    }
}

impl fmt::Display for OracleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleSpec::Constant(v) => write!(f, "constant:value={v}"),
            OracleSpec::Planted(p) => write!(
                f,
                "planted:base={},trigger={}-{}-{},w={},delta={}",
                p.base, p.trigger[0], p.trigger[1], p.trigger[2], p.width, p.delta
            ),
            OracleSpec::Darkness(d) => {
                write!(f, "darkness:threshold={},steepness={}", d.threshold, d.steepness)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleStats {
    pub total_queries: u64,
    pub cache_hits: u64,
    pub total_latency: Duration,
    /// Cache hits whose re-query disagreed with the cached score (verification mode only).
    pub purity_violations: u64,
}

type CacheKey = [u8; 32];

fn cache_key(image: &RgbImage) -> CacheKey {
    let mut hasher = Sha256::new();
    hasher.update(image.width().to_le_bytes());
    hasher.update(image.height().to_le_bytes());
    hasher.update(image.as_bytes());
    hasher.finalize().into()
}

/// LRU memoization keyed by a digest of the pixel data. Errors are never cached.
pub struct CachedOracle<O> {
    inner: O,
    cache: Mutex<LruCache<CacheKey, ScoreValue>>,
    verify: bool,
    total_queries: AtomicU64,
    cache_hits: AtomicU64,
    latency_nanos: AtomicU64,
    purity_violations: AtomicU64,
}

impl<O: Oracle> CachedOracle<O> {
    pub fn new(inner: O, capacity: usize) -> Result<Self, OracleError> {
        let capacity = NonZeroUsize::new(capacity)
            .ok_or_else(|| OracleError::Config("cache capacity must be at least 1".into()))?;
        Ok(Self {
            inner,
            cache: Mutex::new(LruCache::new(capacity)),
            verify: false,
            total_queries: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            latency_nanos: AtomicU64::new(0),
            purity_violations: AtomicU64::new(0),
        })
    }

    /// In verification mode every hit is re-queried and compared against
    /// the cached score; mismatches are counted and logged.
    pub fn verifying(mut self, verify: bool) -> Self {
        self.verify = verify;
        self
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn stats(&self) -> OracleStats {
        OracleStats {
            total_queries: self.total_queries.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            total_latency: Duration::from_nanos(self.latency_nanos.load(Ordering::Relaxed)),
            purity_violations: self.purity_violations.load(Ordering::Relaxed),
        }
    }

    /// Queries that reached the wrapped oracle.
    pub fn inner_queries(&self) -> u64 {
        let s = self.stats();
        s.total_queries - s.cache_hits
    }

    fn query_inner(&self, image: &RgbImage) -> Result<ScoreValue, OracleError> {
        let start = Instant::now();
        let result = self.inner.score(image);
        self.latency_nanos
            .fetch_add(start.elapsed().as_nanos() as u64, Ordering::Relaxed);
        result
    }
}

impl<O: Oracle> Oracle for CachedOracle<O> {
    fn score(&self, image: &RgbImage) -> Result<ScoreValue, OracleError> {
        self.total_queries.fetch_add(1, Ordering::Relaxed);
        let key = cache_key(image);
        let cached = self.cache.lock().expect("cache lock").get(&key).copied();
        if let Some(score) = cached {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            if self.verify {
                let fresh = self.query_inner(image)?;
                if fresh != score {
                    self.purity_violations.fetch_add(1, Ordering::Relaxed);
                    tracing::warn!(
                        cached = score.get(),
                        fresh = fresh.get(),
                        "oracle returned a different score for an identical image"
                    );
                }
            }
            return Ok(score);
        }
        let score = self.query_inner(image)?;
        self.cache.lock().expect("cache lock").put(key, score);
        Ok(score)
    }
}
