use std::path::Path;
use std::time::Duration;

use anyhow::Context;
use clap::Args;
use onepixel_client::{
    HttpOracle, HttpOracleConfig, DEFAULT_ENDPOINT, DEFAULT_FIELD_NAME, DEFAULT_FIELD_PATH, ENDPOINT_ENV,
    FIELD_PATH_ENV,
};
use onepixel_core::oracle::{CachedOracle, Oracle, OracleSpec};
use onepixel_core::DeConfig;

pub type CliOracle = CachedOracle<Box<dyn Oracle>>;

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Score with an in-process synthetic oracle instead of HTTP; takes
    /// precedence over --endpoint. Forms: constant:0.42,
    /// planted:base=0.97,trigger=255-255-0,w=0.5,delta=-0.95,
    /// darkness:threshold=0.5,steepness=10
    #[arg(long, value_name = "SPEC")]
    pub oracle: Option<OracleSpec>,

    /// Model prediction endpoint
    #[arg(long, value_name = "URL", env = ENDPOINT_ENV, hide_env_values = true, default_value = DEFAULT_ENDPOINT)]
    pub endpoint: String,

    /// Slash-delimited path to the score in the JSON response
    #[arg(long, value_name = "PATH", env = FIELD_PATH_ENV, hide_env_values = true, default_value = DEFAULT_FIELD_PATH)]
    pub field_path: String,

    /// Multipart form field carrying the PNG
    #[arg(long, value_name = "NAME", default_value = DEFAULT_FIELD_NAME)]
    pub field_name: String,

    /// Per-request timeout in seconds
    #[arg(long, value_name = "SECONDS", default_value_t = 30.0)]
    pub timeout: f64,

    /// Retries after a timeout, refused connection or 5xx response
    #[arg(long, default_value_t = 2)]
    pub retries: u32,

    /// Maximum concurrent HTTP requests
    #[arg(long, value_name = "N", default_value_t = 8)]
    pub max_in_flight: usize,

    /// Entries kept in the score cache (keyed by pixel digest)
    #[arg(long, value_name = "N", default_value_t = 65536, value_parser = clap::value_parser!(u64).range(1..))]
    pub cache_capacity: u64,
}

impl OracleArgs {
    pub fn build(&self) -> anyhow::Result<CliOracle> {
        let inner: Box<dyn Oracle> = match &self.oracle {
            Some(spec) => spec.build()?,
            None => {
                anyhow::ensure!(
                    self.timeout.is_finite() && self.timeout > 0.0,
                    "--timeout must be a positive number of seconds"
                );
                Box::new(HttpOracle::new(HttpOracleConfig {
                    endpoint: self.endpoint.clone(),
                    field_name: self.field_name.clone(),
                    field_path: self.field_path.clone(),
                    timeout: Duration::from_secs_f64(self.timeout),
                    retries: self.retries,
                    max_in_flight: self.max_in_flight,
                    ..HttpOracleConfig::default()
                })?)
            }
        };
        Ok(CachedOracle::new(inner, self.cache_capacity as usize)?)
    }

    pub fn describe(&self) -> String {
        match &self.oracle {
            Some(spec) => spec.to_string(),
            None => self.endpoint.clone(),
        }
    }
}

#[derive(Debug, Args)]
pub struct DeArgs {
    /// Population size
    #[arg(long, default_value_t = 200)]
    pub np: usize,

    /// Mutation factor
    #[arg(long, default_value_t = 0.5)]
    pub f: f64,

    /// Crossover probability
    #[arg(long, default_value_t = 0.7)]
    pub cr: f64,

    /// Maximum generations
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,

    /// Relative convergence tolerance on population scores
    #[arg(long, default_value_t = 0.01)]
    pub tol: f64,

    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl DeArgs {
    pub fn config(&self) -> DeConfig {
        DeConfig {
            population_size: self.np,
            mutation_factor: self.f,
            recombination: self.cr,
            max_iterations: self.max_iter,
            tolerance: self.tol,
            rng_seed: self.seed,
        }
    }
}

pub fn log_oracle_stats(oracle: &CliOracle) {
    let s = oracle.stats();
    tracing::info!(
        queries = s.total_queries,
        cache_hits = s.cache_hits,
        latency_ms = s.total_latency.as_millis() as u64,
        "oracle usage"
    );
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
