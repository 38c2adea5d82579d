//! A single one-pixel attack: objective construction, evolution, outcome
//! classification and the resulting record.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::{Bounds, ConfigError, DeConfig, DeError, DifferentialEvolution};
use crate::imaging::{PixelPerturbation, RgbImage};
use crate::oracle::{Oracle, OracleError, ScoreValue};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid attack thresholds: {0}")]
    Thresholds(String),
    #[error("oracle failed while scoring the original image: {0}")]
    Original(#[source] OracleError),
    #[error("oracle failed during iteration {iteration}: {source}")]
    Evolution {
        iteration: usize,
        /// Best raw scores recorded before the failure.
        partial_trace: Vec<f64>,
        #[source]
        source: OracleError,
    },
    #[error("oracle failed while verifying the final perturbation: {0}")]
    Verification(#[source] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackDirection {
    /// Minimize the score.
    MitosisToNormal,
    /// Maximize the score.
    NormalToMitosis,
}

impl AttackDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackDirection::MitosisToNormal => "mitosis-to-normal",
            AttackDirection::NormalToMitosis => "normal-to-mitosis",
        }
    }

    pub fn default_strong_threshold(self) -> f64 {
        match self {
            AttackDirection::MitosisToNormal => 0.05,
            AttackDirection::NormalToMitosis => 0.95,
        }
    }

    /// Whether `score` lies strictly past `threshold` in this direction.
    pub fn crosses(self, score: f64, threshold: f64) -> bool {
        match self {
            AttackDirection::MitosisToNormal => score < threshold,
            AttackDirection::NormalToMitosis => score > threshold,
        }
    }

    fn energy(self, score: f64) -> f64 {
        match self {
            AttackDirection::MitosisToNormal => score,
            AttackDirection::NormalToMitosis => -score,
        }
    }
}

impl fmt::Display for AttackDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mitosis-to-normal" | "mitosis_to_normal" | "minimize" => Ok(Self::MitosisToNormal),
            "normal-to-mitosis" | "normal_to_mitosis" | "maximize" => Ok(Self::NormalToMitosis),
            other => Err(format!("unknown attack direction `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    EarlyConverged,
    Failed,
    Success,
    StrongSuccess,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::EarlyConverged => "early_converged",
            Outcome::Failed => "failed",
            Outcome::Success => "success",
            Outcome::StrongSuccess => "strong_success",
        }
    }

    pub fn is_success(self) -> bool {
        matches!(self, Outcome::Success | Outcome::StrongSuccess)
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "early_converged" => Ok(Outcome::EarlyConverged),
            "failed" => Ok(Outcome::Failed),
            "success" => Ok(Outcome::Success),
            "strong_success" => Ok(Outcome::StrongSuccess),
            other => Err(format!("unknown outcome `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub direction: AttackDirection,
    pub de: DeConfig,
    pub success_threshold: f64,
    pub strong_threshold: f64,
    /// Stop evolving once the strong threshold is crossed.
    pub early_stop_on_strong: bool,
}

impl AttackConfig {
    pub fn new(direction: AttackDirection) -> Self {
        Self {
            direction,
            de: DeConfig::default(),
            success_threshold: 0.5,
            strong_threshold: direction.default_strong_threshold(),
            early_stop_on_strong: false,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        self.de.validate()?;
        for (name, t) in [("success", self.success_threshold), ("strong", self.strong_threshold)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(AttackError::Thresholds(format!("{name} threshold {t} outside [0, 1]")));
            }
        }
        let ordered = match self.direction {
            AttackDirection::MitosisToNormal => self.strong_threshold <= self.success_threshold,
            AttackDirection::NormalToMitosis => self.strong_threshold >= self.success_threshold,
        };
        if !ordered {
            return Err(AttackError::Thresholds(format!(
                "strong threshold {} must lie beyond success threshold {} for {}",
                self.strong_threshold, self.success_threshold, self.direction
            )));
        }
        Ok(())
    }
}

/// Tier for a finished run. Threshold comparisons are strict.
pub fn classify_outcome(
    direction: AttackDirection,
    converged_after_initial: bool,
    iterations: usize,
    final_score: f64,
    success_threshold: f64,
    strong_threshold: f64,
) -> Outcome {
    if converged_after_initial && iterations == 0 {
        Outcome::EarlyConverged
    } else if direction.crosses(final_score, strong_threshold) {
        Outcome::StrongSuccess
    } else if direction.crosses(final_score, success_threshold) {
        Outcome::Success
    } else {
        Outcome::Failed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub image_id: String,
    pub direction: AttackDirection,
    pub original_score: ScoreValue,
    pub final_score: ScoreValue,
    pub best_perturbation: PixelPerturbation,
    pub outcome: Outcome,
    pub iterations: usize,
    /// Oracle calls including the original-score and verification queries.
    pub evaluations: usize,
    /// Best raw score after the initial population and after each generation.
    pub trace: Vec<f64>,
    pub de_params: DeConfig,
}

impl AttackRecord {
    pub fn score_change(&self) -> f64 {
        (self.final_score.get() - self.original_score.get()).abs()
    }
}

/// Search bounds `(x, y, r, g, b)` for an image.
pub fn perturbation_bounds(image: &RgbImage) -> Bounds {
    Bounds::new(vec![
        (0, image.width() as i64 - 1),
        (0, image.height() as i64 - 1),
        (0, 255),
        (0, 255),
        (0, 255),
    ])
    .expect("images are never empty")
}

/// Runs one attack against `oracle`.
///
/// The evolution minimizes the raw score (mitosis-to-normal) or its negation
/// (normal-to-mitosis); traces and the convergence rule always see raw scores
/// because the relative tolerance test uses `|mean|`.
pub fn run_attack<O: Oracle + ?Sized>(
    image_id: &str,
    image: &RgbImage,
    oracle: &O,
    config: &AttackConfig,
) -> Result<AttackRecord, AttackError> {
    config.validate()?;
    let direction = config.direction;
    let original = oracle.score(image).map_err(AttackError::Original)?;

    let (width, height) = (image.width(), image.height());
    let objective = |v: &[i64]| -> Result<f64, OracleError> {
        let p = PixelPerturbation::from_vector(v, width, height);
        let score = oracle.score(&image.apply_perturbation(&p)?)?;
        Ok(direction.energy(score.get()))
    };

    let mut de = DifferentialEvolution::new(perturbation_bounds(image), config.de.clone())?;
    if config.early_stop_on_strong {
        let strong = config.strong_threshold;
        de = de.with_early_stop(move |e| direction.crosses(direction.energy(e), strong));
    }
    let run = de.minimize(objective).map_err(|e| match e {
        DeError::Config(c) => AttackError::Config(c),
        DeError::Objective {
            iteration,
            trace,
            source,
        } => AttackError::Evolution {
            iteration,
            partial_trace: trace.into_iter().map(|e| direction.energy(e)).collect(),
            source,
        },
    })?;

    let best = PixelPerturbation::from_vector(&run.best_vector, width, height);
    let adversarial = image
        .apply_perturbation(&best)
        .map_err(|e| AttackError::Verification(e.into()))?;
    let final_score = oracle.score(&adversarial).map_err(AttackError::Verification)?;
    let expected = direction.energy(run.best_energy);
    if final_score.get() != expected {
        tracing::warn!(
            image_id,
            evolved = expected,
            verified = final_score.get(),
            "verification query disagrees with the evolved score"
        );
    }

    let outcome = classify_outcome(
        direction,
        run.converged_after_initial,
        run.iterations_completed,
        final_score.get(),
        config.success_threshold,
        config.strong_threshold,
    );
    Ok(AttackRecord {
        image_id: image_id.to_string(),
        direction,
        original_score: original,
        final_score,
        best_perturbation: best,
        outcome,
        iterations: run.iterations_completed,
        evaluations: run.evaluations + 2,
        trace: run.trace.into_iter().map(|e| direction.energy(e)).collect(),
        de_params: config.de.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{Complement, ConstantOracle, PlantedOracle};
    use crate::synthetic::tissue_tile;

    fn planted() -> PlantedOracle {
        PlantedOracle::new(0.97, [255, 255, 0], 0.5, -0.95).unwrap()
    }

    fn small_de(seed: u64) -> DeConfig {
        DeConfig {
            population_size: 40,
            max_iterations: 40,
            rng_seed: seed,
            ..Default::default()
        }
    }

    #[test]
    fn tiers_for_minimize() {
        let m = AttackDirection::MitosisToNormal;
        assert_eq!(classify_outcome(m, false, 40, 0.04, 0.5, 0.05), Outcome::StrongSuccess);
        assert_eq!(classify_outcome(m, false, 40, 0.4, 0.5, 0.05), Outcome::Success);
        assert_eq!(classify_outcome(m, false, 40, 0.6, 0.5, 0.05), Outcome::Failed);
        assert_eq!(classify_outcome(m, false, 40, 0.5, 0.5, 0.05), Outcome::Failed);
        assert_eq!(classify_outcome(m, false, 40, 0.05, 0.5, 0.05), Outcome::Success);
        assert_eq!(classify_outcome(m, true, 0, 0.01, 0.5, 0.05), Outcome::EarlyConverged);
        // converging later is not an early convergence
        assert_eq!(classify_outcome(m, true, 3, 0.01, 0.5, 0.05), Outcome::StrongSuccess);
    }

    #[test]
    fn tiers_for_maximize() {
        let n = AttackDirection::NormalToMitosis;
        assert_eq!(classify_outcome(n, false, 40, 0.96, 0.5, 0.95), Outcome::StrongSuccess);
        assert_eq!(classify_outcome(n, false, 40, 0.86, 0.5, 0.95), Outcome::Success);
        assert_eq!(classify_outcome(n, false, 40, 0.6, 0.5, 0.95), Outcome::Success);
        assert_eq!(classify_outcome(n, false, 40, 0.4, 0.5, 0.95), Outcome::Failed);
        assert_eq!(classify_outcome(n, false, 40, 0.5, 0.5, 0.95), Outcome::Failed);
    }

    #[test]
    fn threshold_validation() {
        let mut cfg = AttackConfig::new(AttackDirection::MitosisToNormal);
        assert!(cfg.validate().is_ok());
        cfg.strong_threshold = 0.6;
        assert!(matches!(cfg.validate(), Err(AttackError::Thresholds(_))));
        let mut cfg = AttackConfig::new(AttackDirection::NormalToMitosis);
        assert_eq!(cfg.strong_threshold, 0.95);
        cfg.success_threshold = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = AttackConfig::new(AttackDirection::NormalToMitosis);
        cfg.de.population_size = 2;
        assert!(matches!(
            cfg.validate(),
            Err(AttackError::Config(ConfigError::PopulationTooSmall(2)))
        ));
    }

    #[test]
    fn direction_parsing() {
        assert_eq!("mitosis-to-normal".parse(), Ok(AttackDirection::MitosisToNormal));
        assert_eq!("maximize".parse(), Ok(AttackDirection::NormalToMitosis));
        assert!("sideways".parse::<AttackDirection>().is_err());
        assert_eq!(
            serde_json::to_string(&Outcome::StrongSuccess).unwrap(),
            "\"strong_success\""
        );
    }

    #[test]
    fn constant_oracle_converges_early() {
        let oracle = ConstantOracle(ScoreValue::new(0.95).unwrap());
        let img = tissue_tile(64, 64, 1);
        let cfg = AttackConfig::new(AttackDirection::MitosisToNormal);
        let rec = run_attack("flat", &img, &oracle, &cfg).unwrap();
        assert_eq!(rec.outcome, Outcome::EarlyConverged);
        assert_eq!(rec.final_score.get(), 0.95);
        assert_eq!(rec.score_change(), 0.0);
        assert_eq!(rec.iterations, 0);
        assert_eq!(rec.evaluations, 202);
        assert_eq!(rec.trace, vec![0.95]);
    }

    #[test]
    fn planted_minimize_reaches_strong_success() {
        let img = tissue_tile(64, 64, 7);
        let oracle = planted();
        let cfg = AttackConfig::new(AttackDirection::MitosisToNormal);
        let rec = run_attack("tile", &img, &oracle, &cfg).unwrap();
        assert_eq!(rec.original_score.get(), 0.97);
        assert_eq!(rec.outcome, Outcome::StrongSuccess, "{rec:?}");
        assert!(rec.final_score.get() <= 0.05);
        // final <= 0.05 needs proximity >= 0.9474, i.e. L1 distance below ~20.1
        let l1: u32 = rec
            .best_perturbation
            .color()
            .iter()
            .zip([255u8, 255, 0])
            .map(|(&a, b)| a.abs_diff(b) as u32)
            .sum();
        assert!(l1 <= 20, "{:?}", rec.best_perturbation);
        assert!(rec.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(rec.evaluations <= 200 * (rec.iterations + 1) + 2);
        let verify = oracle
            .score(&img.apply_perturbation(&rec.best_perturbation).unwrap())
            .unwrap();
        assert_eq!(verify, rec.final_score);
    }

    #[test]
    fn maximize_trace_is_non_decreasing() {
        let img = tissue_tile(32, 32, 2);
        let oracle = PlantedOracle::new(0.05, [255, 255, 0], 0.5, 0.9).unwrap();
        let mut cfg = AttackConfig::new(AttackDirection::NormalToMitosis);
        cfg.de = small_de(3);
        let rec = run_attack("n", &img, &oracle, &cfg).unwrap();
        assert!(rec.trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(rec.final_score.get() > 0.5, "{rec:?}");
        assert!(rec.outcome.is_success());
    }

    #[test]
    fn early_stop_on_strong_cuts_the_run_short() {
        let img = tissue_tile(64, 64, 4);
        let mut cfg = AttackConfig::new(AttackDirection::MitosisToNormal);
        cfg.early_stop_on_strong = true;
        let rec = run_attack("s", &img, &planted(), &cfg).unwrap();
        assert_eq!(rec.outcome, Outcome::StrongSuccess);
        assert!(rec.iterations < 100);
        assert!(*rec.trace.last().unwrap() < 0.05);
        assert!(rec.trace[..rec.trace.len() - 1].iter().all(|&s| s >= 0.05));
    }

    #[test]
    fn direction_symmetry_with_complement_oracle() {
        let img = tissue_tile(16, 16, 9);
        let oracle = PlantedOracle::new(0.125, [255, 255, 0], 0.5, 0.75).unwrap();
        for seed in 0..3 {
            let de = DeConfig {
                tolerance: 0.0,
                ..small_de(seed)
            };
            let max_cfg = AttackConfig {
                de: de.clone(),
                ..AttackConfig::new(AttackDirection::NormalToMitosis)
            };
            let min_cfg = AttackConfig {
                de,
                ..AttackConfig::new(AttackDirection::MitosisToNormal)
            };
            let up = run_attack("x", &img, &oracle, &max_cfg).unwrap();
            let down = run_attack("x", &img, &Complement(oracle), &min_cfg).unwrap();
            assert_eq!(up.best_perturbation, down.best_perturbation);
            assert_eq!(up.outcome, down.outcome);
            assert_eq!(up.iterations, down.iterations);
            assert_eq!(up.evaluations, down.evaluations);
            assert!((up.final_score.get() - (1.0 - down.final_score.get())).abs() < 1e-12);
            for (a, b) in up.trace.iter().zip(&down.trace) {
                assert!((a - (1.0 - b)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_failure_carries_partial_trace() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        struct DiesLater(AtomicUsize, PlantedOracle);
        impl Oracle for DiesLater {
            fn score(&self, image: &RgbImage) -> Result<ScoreValue, OracleError> {
                if self.0.fetch_add(1, Ordering::SeqCst) >= 100 {
                    return Err(OracleError::Connection {
                        attempts: 3,
                        message: "refused".into(),
                    });
                }
                self.1.score(image)
            }
        }
        let img = tissue_tile(16, 16, 1);
        let mut cfg = AttackConfig::new(AttackDirection::MitosisToNormal);
        cfg.de = DeConfig {
            tolerance: 0.0,
            ..small_de(1)
        };
        let err = run_attack("x", &img, &DiesLater(AtomicUsize::new(0), planted()), &cfg).unwrap_err();
        match err {
            AttackError::Evolution {
                iteration,
                partial_trace,
                ..
            } => {
                // 1 original + 40 initial + 40 per generation
                assert_eq!(iteration, 2);
                assert_eq!(partial_trace.len(), 2);
            }
            other => panic!("unexpected {other}"),
        }
    }
}
