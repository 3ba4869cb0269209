//! Conservative fusion of estimators with partially known error correlations.
//!
//! The crate provides:
//! - symmetric-matrix utilities (Loewner comparison, PSD square roots,
//!   ellipse export) in [`matrix`];
//! - the fusion rules (optimal, information filter, CI, SCI, ESCI and the
//!   common-noise fast path) in [`fusion`];
//! - simplex weight optimization in [`weights`];
//! - numerical verification of the two-estimator optimality theory
//!   (minimal volume, witness covariances, tightness certificates, a
//!   random-gain falsifier) in [`oracle`] and [`suites`];
//! - the distributed-estimation Monte-Carlo experiment in [`sim`];
//! - bundled example problems in [`builtin`].

pub mod builtin;
pub mod error;
pub mod fusion;
pub mod gen;
pub mod matrix;
pub mod oracle;
pub mod sim;
pub mod stream;
pub mod suites;
pub mod weights;

pub use error::{Error, Result};
pub use fusion::{
    ci_fuse, decorrelate, esci_centralized_bound, esci_fuse, esci_fuse_common_noise,
    information_fusion, optimal_fusion, sci_fuse, CommonNoiseEstimate, CommonNoiseProblem,
    Estimate, FusedResult, FusionProblem, SplitEstimate,
};
pub use matrix::{ellipse_boundary, loewner_leq, stacked_identity, BlockMatrix, SymMatrix};
pub use weights::{evaluate_cost, optimize_pair, optimize_simplex, Cost, WeightSolution};
