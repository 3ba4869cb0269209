//! Bundled example problems, shipped as JSON data files.
//!
//! - `fig1`: the two-node motivating model (identity dynamics, orthogonal
//!   position/velocity sensors, shared process noise) after one Kalman
//!   update per node, as a common-noise problem.
//! - `toy-identity`: two estimators whose split components are all the
//!   identity; the bound has the closed form `((2 + w wbar)/(1 + 2 w wbar)) I`.
//! - `ring4`: the four-node ring tracking scenario (position / velocity /
//!   acceleration / velocity sensors).

use crate::error::{Error, Result};
use crate::fusion::{CommonNoiseProblem, FusionProblem};
use crate::sim::ScenarioConfig;

const FIG1: &str = include_str!("../data/fig1.json");
const TOY_IDENTITY: &str = include_str!("../data/toy_identity.json");
const RING4: &str = include_str!("../data/ring4.json");

/// Names accepted by [`raw`] and the CLI `--builtin` flag.
pub const NAMES: [&str; 3] = ["fig1", "toy-identity", "ring4"];

/// Raw JSON of a builtin by name.
pub fn raw(name: &str) -> Result<&'static str> {
    match name {
        "fig1" => Ok(FIG1),
        "toy-identity" | "toy_identity" => Ok(TOY_IDENTITY),
        "ring4" => Ok(RING4),
        other => Err(Error::InvalidProblem(format!(
            "unknown builtin '{other}' (expected one of {NAMES:?})"
        ))),
    }
}

/// The two-node motivating example as a common-noise problem.
pub fn fig1() -> Result<CommonNoiseProblem> {
    Ok(serde_json::from_str(FIG1)?)
}

/// The identity-split two-estimator problem.
pub fn toy_identity() -> Result<FusionProblem> {
    Ok(serde_json::from_str(TOY_IDENTITY)?)
}

/// The four-node ring tracking scenario.
pub fn ring4() -> Result<ScenarioConfig> {
    Ok(serde_json::from_str(RING4)?)
}
