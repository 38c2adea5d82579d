//! One-pixel black-box adversarial attacks against image classifiers.
//!
//! The building blocks are layered bottom-up: [`imaging`] (rasters, PNG and
//! perturbations), [`evolution`] (integer differential evolution),
//! [`oracle`] (the classifier interface and synthetic classifiers),
//! [`attack`] (one attack end to end) and [`campaign`] (datasets, batch
//! runs, CSV results, statistics and plots).

pub mod attack;
pub mod campaign;
pub mod evolution;
pub mod imaging;
pub mod oracle;
pub mod synthetic;

pub use attack::{run_attack, AttackConfig, AttackDirection, AttackRecord, Outcome};
pub use evolution::{check_convergence, de_minimize, Bounds, DeConfig, DeRunResult};
pub use imaging::{decode_png, encode_png, PixelPerturbation, RgbImage};
pub use oracle::{CachedOracle, Oracle, OracleError, OracleSpec, ScoreValue};
