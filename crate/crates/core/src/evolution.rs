//! Differential evolution over box-bounded integer vectors.
//!
//! The engine follows the classic `best1bin` scheme: Latin hypercube
//! initialization, donor `best + F * (r1 - r2)`, binomial crossover with one
//! forced donor dimension, greedy replacement, and a relative-tolerance
//! convergence test on the population energies.
//!
//! Vectors are integral at every evaluation: the initial population is
//! floored from stratified continuous samples, and each trial is rounded
//! (half away from zero) and clamped after crossover. The donor arithmetic
//! itself is real-valued.
//!
//! Randomness comes from ChaCha8 seeded with [`DeConfig::rng_seed`]. Stream 0
//! drives initialization and stream `g` drives generation `g` (1-based), so a
//! run is reproducible bit-for-bit across platforms.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("bounds need at least one dimension")]
    NoDimensions,
    #[error("dimension {dim}: low {low} exceeds high {high}")]
    InvertedBounds { dim: usize, low: i64, high: i64 },
    #[error("population size {0} is too small for best1bin (need at least 4)")]
    PopulationTooSmall(usize),
    #[error("mutation factor must be positive and finite, got {0}")]
    MutationFactor(f64),
    #[error("recombination must lie in [0, 1], got {0}")]
    Recombination(f64),
    #[error("tolerance must be non-negative and finite, got {0}")]
    Tolerance(f64),
    #[error("population has {population} members but {energies} energies")]
    Misaligned { population: usize, energies: usize },
    #[error("target index {index} outside population of {len}")]
    TargetIndex { index: usize, len: usize },
}

#[derive(Debug, Error)]
pub enum DeError<E> {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("objective failed during iteration {iteration}: {source}")]
    Objective {
        /// 0 for the initial population, `g` for generation `g`.
        iteration: usize,
        /// Best energies recorded before the failure.
        trace: Vec<f64>,
        #[source]
        source: E,
    },
}

/// Inclusive integer bounds per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    dims: Vec<(i64, i64)>,
}

impl Bounds {
    pub fn new(dims: Vec<(i64, i64)>) -> Result<Self, ConfigError> {
        if dims.is_empty() {
            return Err(ConfigError::NoDimensions);
        }
        for (dim, &(low, high)) in dims.iter().enumerate() {
            if low > high {
                return Err(ConfigError::InvertedBounds { dim, low, high });
            }
        }
        Ok(Self { dims })
    }

    pub fn dimension(&self) -> usize {
        self.dims.len()
    }

    pub fn low(&self, dim: usize) -> i64 {
        self.dims[dim].0
    }

    pub fn high(&self, dim: usize) -> i64 {
        self.dims[dim].1
    }

    pub fn contains(&self, v: &[i64]) -> bool {
        v.len() == self.dims.len() && v.iter().zip(&self.dims).all(|(x, (l, h))| l <= x && x <= h)
    }

    /// Rounds half away from zero, then clamps into `[low, high]`.
    fn snap(&self, dim: usize, value: f64) -> i64 {
        let (low, high) = self.dims[dim];
        if value.is_nan() {
            return low;
        }
        (value.round().clamp(low as f64, high as f64)) as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeConfig {
    pub population_size: usize,
    pub mutation_factor: f64,
    pub recombination: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub rng_seed: u64,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self {
            population_size: 200,
            mutation_factor: 0.5,
            recombination: 0.7,
            max_iterations: 100,
            tolerance: 0.01,
            rng_seed: 0,
        }
    }
}

impl DeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.population_size < 4 {
            return Err(ConfigError::PopulationTooSmall(self.population_size));
        }
        if !(self.mutation_factor.is_finite() && self.mutation_factor > 0.0) {
            return Err(ConfigError::MutationFactor(self.mutation_factor));
        }
        if !(0.0..=1.0).contains(&self.recombination) {
            return Err(ConfigError::Recombination(self.recombination));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(ConfigError::Tolerance(self.tolerance));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    EarlyStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeRunResult {
    pub best_vector: Vec<i64>,
    pub best_energy: f64,
    /// Generations run after the initial population.
    pub iterations_completed: usize,
    pub converged_after_initial: bool,
    pub stop_reason: StopReason,
    /// Best energy after the initial population (index 0) and after each generation.
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

/// Seeded generator for one stream of a run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Continuous Latin hypercube samples over `[low, high + 1)` per dimension.
///
/// Each dimension is cut into `n` equal strata; every stratum receives one
/// uniform sample and the strata are dealt to members in a random order.
pub fn lhs_samples<R: Rng + ?Sized>(bounds: &Bounds, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(bounds.dimension()); n];
    for dim in 0..bounds.dimension() {
        let low = bounds.low(dim) as f64;
        let span = (bounds.high(dim) - bounds.low(dim) + 1) as f64;
        let mut column: Vec<f64> = (0..n)
            .map(|k| {
                let u: f64 = rng.random();
                low + span * (k as f64 + u) / n as f64
            })
            .collect();
        column.shuffle(rng);
        for (member, value) in out.iter_mut().zip(column) {
            member.push(value);
        }
    }
    out
}

/// Integer Latin hypercube population: [`lhs_samples`] floored and clamped.
pub fn lhs_init<R: Rng + ?Sized>(bounds: &Bounds, n: usize, rng: &mut R) -> Vec<Vec<i64>> {
    lhs_samples(bounds, n, rng)
        .into_iter()
        .map(|member| {
            member
                .into_iter()
                .enumerate()
                .map(|(dim, v)| (v.floor() as i64).clamp(bounds.low(dim), bounds.high(dim)))
                .collect()
        })
        .collect()
}

/// Index of the lowest energy; ties go to the lowest index.
pub fn best_index(energies: &[f64]) -> usize {
    let mut best = 0;
    for (i, &e) in energies.iter().enumerate().skip(1) {
        if e < energies[best] {
            best = i;
        }
    }
    best
}

/// `best + f * (r1 - r2)`, component-wise.
pub fn best1_donor(best: &[i64], r1: &[i64], r2: &[i64], f: f64) -> Vec<f64> {
    best.iter()
        .zip(r1.iter().zip(r2))
        .map(|(&b, (&a, &c))| b as f64 + f * (a - c) as f64)
        .collect()
}

/// Binomial crossover of `donor` into `target`, then rounding and clamping.
pub fn binomial_crossover<R: Rng + ?Sized>(
    target: &[i64],
    donor: &[f64],
    recombination: f64,
    bounds: &Bounds,
    rng: &mut R,
) -> Vec<i64> {
    let dims = target.len();
    let forced = rng.random_range(0..dims);
    (0..dims)
        .map(|d| {
            let take_donor = rng.random::<f64>() < recombination || d == forced;
            if take_donor {
                bounds.snap(d, donor[d])
            } else {
                target[d]
            }
        })
        .collect()
}

/// Builds one best1bin trial vector for `target_index`.
pub fn best1bin_trial<R: Rng + ?Sized>(
    population: &[Vec<i64>],
    energies: &[f64],
    target_index: usize,
    bounds: &Bounds,
    config: &DeConfig,
    rng: &mut R,
) -> Result<Vec<i64>, ConfigError> {
    let n = population.len();
    if n < 4 {
        return Err(ConfigError::PopulationTooSmall(n));
    }
    if energies.len() != n {
        return Err(ConfigError::Misaligned {
            population: n,
            energies: energies.len(),
        });
    }
    if target_index >= n {
        return Err(ConfigError::TargetIndex {
            index: target_index,
            len: n,
        });
    }
    let best = best_index(energies);
    let r1 = loop {
        let i = rng.random_range(0..n);
        if i != target_index {
            break i;
        }
    };
    let r2 = loop {
        let i = rng.random_range(0..n);
        if i != target_index && i != r1 {
            break i;
        }
    };
    let donor = best1_donor(
        &population[best],
        &population[r1],
        &population[r2],
        config.mutation_factor,
    );
    Ok(binomial_crossover(
        &population[target_index],
        &donor,
        config.recombination,
        bounds,
        rng,
    ))
}

/// True iff the population standard deviation (divide by N) is at most
/// `tolerance * |mean|`. Empty input never counts as converged.
pub fn check_convergence(energies: &[f64], tolerance: f64) -> bool {
    if energies.is_empty() {
        return false;
    }
    let n = energies.len() as f64;
    // shifted by the first energy so identical values give exactly zero spread
    let shift = energies[0];
    let offset = energies.iter().map(|e| e - shift).sum::<f64>() / n;
    let var = energies.iter().map(|e| (e - shift - offset).powi(2)).sum::<f64>() / n;
    var.sqrt() <= tolerance * (shift + offset).abs()
}

type StopPredicate<'a> = Box<dyn Fn(f64) -> bool + 'a>;

/// A configured minimizer. Use [`de_minimize`] for the common case.
pub struct DifferentialEvolution<'a> {
    bounds: Bounds,
    config: DeConfig,
    early_stop: Option<StopPredicate<'a>>,
}

impl<'a> DifferentialEvolution<'a> {
    pub fn new(bounds: Bounds, config: DeConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self {
            bounds,
            config,
            early_stop: None,
        })
    }

    /// Stops the run as soon as the best energy satisfies `predicate`.
    pub fn with_early_stop(mut self, predicate: impl Fn(f64) -> bool + 'a) -> Self {
        self.early_stop = Some(Box::new(predicate));
        self
    }

    fn should_stop(&self, best: f64) -> bool {
        self.early_stop.as_ref().is_some_and(|p| p(best))
    }

    pub fn minimize<F, E>(&self, mut objective: F) -> Result<DeRunResult, DeError<E>>
    where
        F: FnMut(&[i64]) -> Result<f64, E>,
    {
        let cfg = &self.config;
        let np = cfg.population_size;
        let mut init_rng = stream_rng(cfg.rng_seed, 0);
        let mut population = lhs_init(&self.bounds, np, &mut init_rng);

        let mut trace = Vec::with_capacity(cfg.max_iterations + 1);
        let mut evaluations = 0;
        let mut energies = Vec::with_capacity(np);
        for member in &population {
            let e = objective(member).map_err(|source| DeError::Objective {
                iteration: 0,
                trace: trace.clone(),
                source,
            })?;
            evaluations += 1;
            energies.push(e);
        }
        let mut best = best_index(&energies);
        trace.push(energies[best]);

        let finish = |population: &[Vec<i64>],
                      energies: &[f64],
                      best: usize,
                      iterations: usize,
                      reason: StopReason,
                      trace: Vec<f64>,
                      evaluations: usize| DeRunResult {
            best_vector: population[best].clone(),
            best_energy: energies[best],
            iterations_completed: iterations,
            converged_after_initial: iterations == 0 && reason == StopReason::Converged,
            stop_reason: reason,
            trace,
            evaluations,
        };

        if check_convergence(&energies, cfg.tolerance) {
            return Ok(finish(
                &population,
                &energies,
                best,
                0,
                StopReason::Converged,
                trace,
                evaluations,
            ));
        }
        if self.should_stop(energies[best]) {
            return Ok(finish(
                &population,
                &energies,
                best,
                0,
                StopReason::EarlyStop,
                trace,
                evaluations,
            ));
        }

        for generation in 1..=cfg.max_iterations {
            let mut rng = stream_rng(cfg.rng_seed, generation as u64);
            for target in 0..np {
                let trial = best1bin_trial(&population, &energies, target, &self.bounds, cfg, &mut rng)?;
                let e = objective(&trial).map_err(|source| DeError::Objective {
                    iteration: generation,
                    trace: trace.clone(),
                    source,
                })?;
                evaluations += 1;
                if e <= energies[target] {
                    population[target] = trial;
                    energies[target] = e;
                    if e < energies[best] || (e == energies[best] && target < best) {
                        best = target;
                    }
                }
            }
            trace.push(energies[best]);

            if self.should_stop(energies[best]) {
                return Ok(finish(
                    &population,
                    &energies,
                    best,
                    generation,
                    StopReason::EarlyStop,
                    trace,
                    evaluations,
                ));
            }
            if check_convergence(&energies, cfg.tolerance) {
                return Ok(finish(
                    &population,
                    &energies,
                    best,
                    generation,
                    StopReason::Converged,
                    trace,
                    evaluations,
                ));
            }
        }
        Ok(finish(
            &population,
            &energies,
            best,
            cfg.max_iterations,
            StopReason::MaxIterations,
            trace,
            evaluations,
        ))
    }
}

pub fn de_minimize<F, E>(objective: F, bounds: &Bounds, config: &DeConfig) -> Result<DeRunResult, DeError<E>>
where
    F: FnMut(&[i64]) -> Result<f64, E>,
{
    DifferentialEvolution::new(bounds.clone(), config.clone())?.minimize(objective)
}
