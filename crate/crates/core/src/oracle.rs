//! Numerical verification machinery for the two-estimator optimality theory:
//! admissible-set sampling, the direction-wise minimal-volume function `g`,
//! witness covariances achieving it, tightness certificates, and a
//! random-gain falsifier for the optimality of the extended split rule.
//!
//! The scalar function `h_x(w) = x^T A_F(w) x` (precision of the fused bound
//! at weight `w`, evaluated in direction `x`) is strictly concave for SPD
//! inputs; `g(x)` — the smallest achievable precision over the admissible
//! set — equals `max_w h_x(w)`, attained either at a boundary weight or at
//! the unique stationary point. Witness covariances realize the maximum with
//! a rank-one correlation block.
//!
//! All operations here evaluate on an internally regularized copy of the
//! problem: whenever one of the two unknown blocks or the known centralized
//! covariance is near-singular, `eps * I` is added to all three (with
//! `eps = 1e-8 * max spectral norm`) before evaluation. Fusion rules never
//! regularize; only this oracle does.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusion::{esci_fuse, FusionProblem};
use crate::matrix::{stacked_identity, BlockMatrix, SymMatrix};
use crate::stream::{stream, unit_directions};
use crate::weights::{optimize_pair, Cost, DEFAULT_OMEGA_TOL};

/// Relative regularization strength for the Assumption-1 surrogate.
const REGULARIZATION: f64 = 1e-8;

/// Bisection tolerance on the stationary weight of `h_x`.
const ROOT_TOL: f64 = 1e-12;

/// Central-difference step for the second derivative of `h_x`.
const H2_STEP: f64 = 1e-5;

/// Which case of the exhaustive trichotomy produced a `g` evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GCase {
    LeftBoundary,
    RightBoundary,
    Interior,
}

/// `g(x)` together with the weight attaining it.
#[derive(Debug, Clone)]
pub struct GEvaluation {
    pub x: DVector<f64>,
    pub value: f64,
    pub case: GCase,
    pub omega0: f64,
}

/// An admissible centralized covariance achieving `g(x)` in direction `x`,
/// built from a rank-one correlation block.
#[derive(Debug, Clone)]
pub struct WitnessCovariance {
    pub p_cent: BlockMatrix,
    pub x: DVector<f64>,
    pub achieved: f64,
    pub correlation: DMatrix<f64>,
}

/// Report of the random-gain falsification search.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FalsifyReport {
    pub trials: usize,
    pub samples_per_trial: usize,
    pub esci_omega: f64,
    pub esci_cost: f64,
    pub best_gain_cost: f64,
    /// `(best_gain_cost - esci_cost) / esci_cost`; a value below the slack
    /// would falsify two-estimator optimality.
    pub best_margin: f64,
    pub slack: f64,
    pub beaten: bool,
}

/// Relative slack granted to the sampled-envelope bounds in the falsifier.
pub const FALSIFY_SLACK: f64 = 1e-3;

// ---------------------------------------------------------------------------
// Regularized pair core
// ---------------------------------------------------------------------------

/// Regularized view of a two-estimator problem, with the factorization
/// `B_c(w) = Bbar(w) D(w)^{-1}` used for weight derivatives.
#[derive(Debug, Clone)]
pub struct PairOracle {
    d: usize,
    p1: DMatrix<f64>,
    p2: DMatrix<f64>,
    pc2: DMatrix<f64>,
    h: DMatrix<f64>,
}

impl PairOracle {
    pub fn new(problem: &FusionProblem) -> Result<Self> {
        if problem.len() != 2 {
            return Err(Error::InvalidProblem(format!(
                "the optimality machinery handles exactly two estimators, got {}",
                problem.len()
            )));
        }
        let d = problem.dim();
        let mut p1 = problem.estimates()[0].unknown_cov.clone();
        let mut p2 = problem.estimates()[1].unknown_cov.clone();
        let mut pc2 = problem.known_central_cov().as_sym().clone();
        let norms = [p1.spectral_norm(), p2.spectral_norm(), pc2.spectral_norm()];
        let scale = norms.iter().fold(1.0f64, |a, &b| a.max(b));
        let near_singular = |m: &SymMatrix| m.min_eigenvalue() <= 1e-12 * scale;
        if near_singular(&p1) || near_singular(&p2) || near_singular(&pc2) {
            let eps = REGULARIZATION * scale;
            p1 = SymMatrix::new(p1.as_matrix() + DMatrix::identity(d, d) * eps)?;
            p2 = SymMatrix::new(p2.as_matrix() + DMatrix::identity(d, d) * eps)?;
            pc2 = SymMatrix::new(pc2.as_matrix() + DMatrix::identity(2 * d, 2 * d) * eps)?;
        }
        Ok(Self {
            d,
            p1: p1.into_matrix(),
            p2: p2.into_matrix(),
            pc2: pc2.into_matrix(),
            h: stacked_identity(2, d)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// `Bbar(w) = B_c(w) D(w)` with `D(w) = diag(w I, (1-w) I)`; well defined
    /// and invertible on the whole closed interval under regularization.
    fn bbar(&self, w: f64) -> DMatrix<f64> {
        let d = self.d;
        let wb = 1.0 - w;
        let mut m = DMatrix::zeros(2 * d, 2 * d);
        m.view_mut((0, 0), (d, d))
            .copy_from(&(&self.p1 + self.pc2.view((0, 0), (d, d)) * w));
        m.view_mut((0, d), (d, d))
            .copy_from(&(self.pc2.view((0, d), (d, d)) * wb));
        m.view_mut((d, 0), (d, d))
            .copy_from(&(self.pc2.view((d, 0), (d, d)) * w));
        m.view_mut((d, d), (d, d))
            .copy_from(&(&self.p2 + self.pc2.view((d, d), (d, d)) * wb));
        m
    }

    fn solve_bbar(&self, w: f64, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.bbar(w)
            .lu()
            .solve(rhs)
            .ok_or_else(|| Error::SingularMatrix("Bbar factorization failed".into()))
    }

    /// `(h, h')` at weight `w` for direction `x`:
    /// `h = (Hx)^T D(w) y` and `h' = y1^T P1 y1 - y2^T P2 y2` with
    /// `y = Bbar(w)^{-1} H x`.
    pub fn h_and_slope(&self, x: &DVector<f64>, w: f64) -> Result<(f64, f64)> {
        let d = self.d;
        let hx = &self.h * x;
        let y = self.solve_bbar(w, &DMatrix::from_column_slice(2 * d, 1, hx.as_slice()))?;
        let y1 = y.view((0, 0), (d, 1));
        let y2 = y.view((d, 0), (d, 1));
        let h = w * hx.rows(0, d).dot(&y1.column(0)) + (1.0 - w) * hx.rows(d, d).dot(&y2.column(0));
        let slope = (y1.transpose() * &self.p1 * y1)[(0, 0)] - (y2.transpose() * &self.p2 * y2)[(0, 0)];
        Ok((h, slope))
    }

    /// `h` for many directions at one weight, sharing the factorization.
    pub fn h_many(&self, xs: &[DVector<f64>], w: f64) -> Result<Vec<f64>> {
        let d = self.d;
        let mut rhs = DMatrix::zeros(2 * d, xs.len());
        for (c, x) in xs.iter().enumerate() {
            let hx = &self.h * x;
            rhs.view_mut((0, c), (2 * d, 1))
                .copy_from(&DMatrix::from_column_slice(2 * d, 1, hx.as_slice()));
        }
        let y = self.solve_bbar(w, &rhs)?;
        Ok(xs
            .iter()
            .enumerate()
            .map(|(c, x)| {
                let y1 = y.view((0, c), (d, 1));
                let y2 = y.view((d, c), (d, 1));
                w * x.dot(&y1.column(0)) + (1.0 - w) * x.dot(&y2.column(0))
            })
            .collect())
    }

    /// The split `y = (y1, y2)` at weight `w`, used by witness construction.
    fn y_split(&self, x: &DVector<f64>, w: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let d = self.d;
        let hx = &self.h * x;
        let y = self.solve_bbar(w, &DMatrix::from_column_slice(2 * d, 1, hx.as_slice()))?;
        Ok((
            y.view((0, 0), (d, 1)).column(0).into_owned(),
            y.view((d, 0), (d, 1)).column(0).into_owned(),
        ))
    }

    /// Evaluate `g(x)` through the exhaustive trichotomy on `h'`.
    pub fn eval_g(&self, x: &DVector<f64>) -> Result<GEvaluation> {
        if x.norm() == 0.0 {
            return Err(Error::InvalidProblem("direction x must be nonzero".into()));
        }
        let (h0, s0) = self.h_and_slope(x, 0.0)?;
        if s0 < 0.0 {
            return Ok(GEvaluation {
                x: x.clone(),
                value: h0,
                case: GCase::LeftBoundary,
                omega0: 0.0,
            });
        }
        let (h1, s1) = self.h_and_slope(x, 1.0)?;
        if s1 > 0.0 {
            return Ok(GEvaluation {
                x: x.clone(),
                value: h1,
                case: GCase::RightBoundary,
                omega0: 1.0,
            });
        }
        // h' is strictly decreasing (h strictly concave), with
        // h'(0) >= 0 >= h'(1): bisect for the unique root.
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > ROOT_TOL {
            let mid = 0.5 * (lo + hi);
            let (_, s) = self.h_and_slope(x, mid)?;
            if s >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let omega0 = 0.5 * (lo + hi);
        let (value, _) = self.h_and_slope(x, omega0)?;
        Ok(GEvaluation {
            x: x.clone(),
            value,
            case: GCase::Interior,
            omega0,
        })
    }

    /// Build the admissible covariance achieving `g(x)` from its rank-one
    /// correlation block, and check that it does.
    pub fn witness(&self, x: &DVector<f64>) -> Result<WitnessCovariance> {
        let g = self.eval_g(x)?;
        let (y1, y2) = self.y_split(x, g.omega0)?;
        let q1 = (y1.transpose() * &self.p1 * &y1)[(0, 0)];
        let q2 = (y2.transpose() * &self.p2 * &y2)[(0, 0)];
        let denom = match g.case {
            GCase::LeftBoundary => q2,
            GCase::RightBoundary => q1,
            GCase::Interior => q1,
        };
        if denom <= 0.0 {
            return Err(Error::WitnessFailed(format!(
                "degenerate normalization ({denom:.3e}) in case {:?}",
                g.case
            )));
        }
        let root1 = SymMatrix::new(self.p1.clone())?.psd_sqrt()?;
        let root2 = SymMatrix::new(self.p2.clone())?.psd_sqrt()?;
        let omega =
            (root1.as_matrix() * y1) * (y2.transpose() * root2.as_matrix()) / denom;

        let gram = SymMatrix::new(omega.transpose() * &omega)?;
        let top = gram.max_eigenvalue();
        if top > 1.0 + 1e-9 {
            return Err(Error::WitnessFailed(format!(
                "correlation spectral norm {:.12} exceeds one",
                top.sqrt()
            )));
        }

        let p_cent = self.assemble(&omega)?;
        let inv = p_cent
            .as_matrix()
            .clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::WitnessFailed("witness covariance is singular".into()))?;
        let m_f = self.h.transpose() * inv * &self.h;
        let achieved = (x.transpose() * m_f * x)[(0, 0)];
        let rel = (achieved - g.value).abs() / g.value.abs().max(1e-300);
        if rel > 1e-7 {
            return Err(Error::WitnessFailed(format!(
                "achieved {achieved:.12e} differs from g {:.12e} (relative {rel:.3e})",
                g.value
            )));
        }
        Ok(WitnessCovariance {
            p_cent,
            x: x.clone(),
            achieved,
            correlation: omega,
        })
    }

    /// The regularized admissible covariance for a correlation block.
    fn assemble(&self, omega: &DMatrix<f64>) -> Result<BlockMatrix> {
        let d = self.d;
        let root1 = SymMatrix::new(self.p1.clone())?.psd_sqrt()?;
        let root2 = SymMatrix::new(self.p2.clone())?.psd_sqrt()?;
        let cross = root1.as_matrix() * omega * root2.as_matrix();
        let mut m = self.pc2.clone();
        {
            let mut v = m.view_mut((0, 0), (d, d));
            v += &self.p1;
        }
        {
            let mut v = m.view_mut((d, d), (d, d));
            v += &self.p2;
        }
        {
            let mut v = m.view_mut((0, d), (d, d));
            v += &cross;
        }
        {
            let mut v = m.view_mut((d, 0), (d, d));
            v += cross.transpose();
        }
        BlockMatrix::new(SymMatrix::new(m)?, d)
    }
}

// ---------------------------------------------------------------------------
// Free-function interface
// ---------------------------------------------------------------------------

/// `(h, h', h'')` of the weight-to-precision function in direction `x`.
///
/// `h` and `h'` come from the `Bbar` factorization; `h''` is a central
/// difference of `h'` with step `1e-5`, one-sided at the interval ends.
pub fn h_and_derivatives(
    problem: &FusionProblem,
    x: &DVector<f64>,
    omega: f64,
) -> Result<(f64, f64, f64)> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::InvalidWeights(format!("omega {omega} outside [0, 1]")));
    }
    let core = PairOracle::new(problem)?;
    let (h, s) = core.h_and_slope(x, omega)?;
    let hi = (omega + H2_STEP).min(1.0);
    let lo = (omega - H2_STEP).max(0.0);
    let (_, s_hi) = core.h_and_slope(x, hi)?;
    let (_, s_lo) = core.h_and_slope(x, lo)?;
    let h2 = (s_hi - s_lo) / (hi - lo);
    Ok((h, s, h2))
}

/// Evaluate the minimal-volume function `g` in direction `x`.
pub fn eval_g(problem: &FusionProblem, x: &DVector<f64>) -> Result<GEvaluation> {
    PairOracle::new(problem)?.eval_g(x)
}

/// Construct the admissible covariance achieving `g(x)`.
pub fn witness_covariance(problem: &FusionProblem, x: &DVector<f64>) -> Result<WitnessCovariance> {
    PairOracle::new(problem)?.witness(x)
}

/// Membership of `x` in the minimal volume `{x : g(x) <= 1}`.
pub fn minimal_volume_membership(problem: &FusionProblem, x: &DVector<f64>) -> Result<bool> {
    if x.norm() == 0.0 {
        return Ok(true);
    }
    Ok(eval_g(problem, x)?.value <= 1.0)
}

/// Search a deterministic direction sweep for an `x` with
/// `g(x) = x^T A_F(omega1) x` (relative `1e-7`), certifying that the bound at
/// `omega1` touches the minimal volume and is therefore tight.
///
/// The sweep (720 directions for `d = 2`, 10^4 low-discrepancy directions for
/// `d >= 3`) first checks each probe directly; the certificate condition for
/// an interior `omega1` is `omega0(x) = omega1`, and `omega0` varies
/// continuously with the direction, so probe pairs whose `omega0` straddle
/// `omega1` are refined by bisection along the connecting arc before the
/// equality is re-checked. Returns `None` when no certificate is found at
/// this resolution; that is a statement about the resolution, not a proof of
/// non-tightness.
pub fn tightness_certificate(
    problem: &FusionProblem,
    omega1: f64,
) -> Result<Option<DVector<f64>>> {
    if !(0.0..=1.0).contains(&omega1) {
        return Err(Error::InvalidWeights(format!("omega {omega1} outside [0, 1]")));
    }
    let core = PairOracle::new(problem)?;
    let d = core.dim();
    let count = if d <= 2 { 720 } else { 10_000 };
    let dirs = unit_directions(d, count);

    let certifies = |x: &DVector<f64>| -> Result<bool> {
        let g = core.eval_g(x)?;
        let (h, _) = core.h_and_slope(x, omega1)?;
        Ok((g.value - h).abs() <= 1e-7 * g.value.abs().max(1e-300))
    };

    let mut omega0 = Vec::with_capacity(dirs.len());
    for x in &dirs {
        let g = core.eval_g(x)?;
        let (h, _) = core.h_and_slope(x, omega1)?;
        if (g.value - h).abs() <= 1e-7 * g.value.abs().max(1e-300) {
            return Ok(Some(x.clone()));
        }
        omega0.push(g.omega0);
    }
    if dirs.len() < 2 {
        return Ok(None);
    }

    // Refine across probe pairs whose attaining weights straddle omega1
    // (wrapping: antipodal directions share the quadratic form).
    for i in 0..dirs.len() {
        let j = (i + 1) % dirs.len();
        let (a, b) = (omega0[i] - omega1, omega0[j] - omega1);
        if a == 0.0 || b == 0.0 || a.signum() == b.signum() {
            continue;
        }
        let mut lo = dirs[i].clone();
        let mut hi = dirs[j].clone();
        if (&lo + &hi).norm() < 1e-9 {
            continue;
        }
        for _ in 0..80 {
            let mid = (&lo + &hi).normalize();
            if certifies(&mid)? {
                return Ok(Some(mid));
            }
            let w_mid = core.eval_g(&mid)?.omega0;
            if (w_mid - omega1).signum() == a.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Admissible-set sampling
// ---------------------------------------------------------------------------

/// Sampler of admissible centralized covariances: every emitted matrix is PSD
/// with diagonal unknown blocks exactly equal to the problem's, plus the
/// known centralized covariance.
#[derive(Debug, Clone)]
pub struct AdmissibleSampler {
    d: usize,
    n: usize,
    unknown: Vec<DMatrix<f64>>,
    roots: Vec<DMatrix<f64>>,
    pc2: DMatrix<f64>,
    seed: u64,
}

impl AdmissibleSampler {
    pub fn new(problem: &FusionProblem, seed: u64) -> Result<Self> {
        let d = problem.dim();
        let n = problem.len();
        let unknown: Vec<DMatrix<f64>> = problem
            .estimates()
            .iter()
            .map(|e| e.unknown_cov.as_matrix().clone())
            .collect();
        let roots = problem
            .estimates()
            .iter()
            .map(|e| Ok(e.unknown_cov.psd_sqrt()?.into_matrix()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            d,
            n,
            unknown,
            roots,
            pc2: problem.known_central_cov().as_matrix().clone(),
            seed,
        })
    }

    /// Sample with an explicit correlation block (two estimators only):
    /// `P_c(Omega) = [[P1, R1 Omega R2], [sym, P2]] + P_c^(2)` with
    /// `R_i = (P_i^(1))^(1/2)`. Requires `||Omega||_2 <= 1`.
    pub fn sample_with_correlation(&self, omega: &DMatrix<f64>) -> Result<BlockMatrix> {
        if self.n != 2 {
            return Err(Error::InvalidProblem(
                "explicit correlation sampling needs exactly two estimators".into(),
            ));
        }
        if omega.nrows() != self.d || omega.ncols() != self.d {
            return Err(Error::DimensionMismatch("correlation must be d x d".into()));
        }
        let gram = SymMatrix::new(omega.transpose() * omega)?;
        let top = gram.max_eigenvalue();
        if top > 1.0 + 1e-9 {
            return Err(Error::InvalidCorrelation(top.sqrt()));
        }
        let d = self.d;
        let cross = &self.roots[0] * omega * &self.roots[1];
        let mut m = self.pc2.clone();
        {
            let mut v = m.view_mut((0, 0), (d, d));
            v += &self.unknown[0];
        }
        {
            let mut v = m.view_mut((d, d), (d, d));
            v += &self.unknown[1];
        }
        {
            let mut v = m.view_mut((0, d), (d, d));
            v += &cross;
        }
        {
            let mut v = m.view_mut((d, 0), (d, d));
            v += cross.transpose();
        }
        BlockMatrix::new(SymMatrix::new(m)?, d)
    }

    /// Draw the `index`-th random admissible covariance. Deterministic in
    /// `(seed, index)` and independent of evaluation order.
    pub fn sample(&self, index: u64) -> BlockMatrix {
        let mut rng = stream(self.seed, &[SAMPLE_TAG, index]);
        if self.n == 2 {
            let omega = random_contraction(self.d, &mut rng);
            self.sample_with_correlation(&omega)
                .expect("contraction is a valid correlation")
        } else {
            self.sample_subspace(&mut rng)
        }
    }

    /// General-N sampling: unknown block `(i, j)` is
    /// `R_i (V_i^T V_j) R_j` with orthonormal frames `V_i` drawn from a
    /// blend of a shared and an independent Gaussian basis, so the unknown
    /// part is `(L V^T)(V L^T) >= 0` with exact diagonal blocks.
    fn sample_subspace(&self, rng: &mut rand_chacha::ChaCha8Rng) -> BlockMatrix {
        let d = self.d;
        let n = self.n;
        let m = n * d + d;
        let t: f64 = rng.random_range(0.0..=1.0);
        let shared = DMatrix::from_fn(m, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let frames: Vec<DMatrix<f64>> = (0..n)
            .map(|_| {
                let mix = DMatrix::from_fn(m, d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let rot = random_orthogonal(d, rng);
                let a = &shared * rot * t.sqrt() + mix * (1.0 - t).sqrt();
                let qr = a.qr();
                qr.q().columns(0, d).into_owned()
            })
            .collect();
        let mut out = self.pc2.clone();
        for i in 0..n {
            for j in 0..n {
                let c = if i == j {
                    DMatrix::identity(d, d)
                } else {
                    frames[i].transpose() * &frames[j]
                };
                let block = &self.roots[i] * c * &self.roots[j];
                let mut v = out.view_mut((i * d, j * d), (d, d));
                v += &block;
            }
        }
        BlockMatrix::new(SymMatrix::new(out).expect("finite"), d).expect("layout")
    }
}

const SAMPLE_TAG: u64 = 0x5a4d_9e1e_0000_0001;

/// Random orthogonal matrix: QR of a Gaussian with R-diagonal sign fix.
fn random_orthogonal(d: usize, rng: &mut rand_chacha::ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// `U diag(s) V^T` with `s_i` uniform on `[-1, 1]`: a random contraction,
/// guaranteeing `Omega^T Omega <= I`.
fn random_contraction(d: usize, rng: &mut rand_chacha::ChaCha8Rng) -> DMatrix<f64> {
    let u = random_orthogonal(d, rng);
    let v = random_orthogonal(d, rng);
    let s = DVector::from_fn(d, |_, _| rng.random_range(-1.0..=1.0));
    u * DMatrix::from_diagonal(&s) * v.transpose()
}

// ---------------------------------------------------------------------------
// Falsifier
// ---------------------------------------------------------------------------

/// Loewner envelope of a set of symmetric matrices: grow `acc` by the
/// positive part of `s - acc`, so the result dominates every absorbed matrix.
fn envelope_absorb(acc: &mut DMatrix<f64>, s: &DMatrix<f64>) {
    let diff = SymMatrix::new(s - &*acc).expect("finite symmetric");
    let eig = nalgebra::SymmetricEigen::new(diff.into_matrix());
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > 0.0 {
            let v = eig.eigenvectors.column(k);
            *acc += v * v.transpose() * lambda;
        }
    }
}

/// Random search for a conservative fusion beating the optimized two-
/// estimator bound.
///
/// Gains `K = [I - W, W]` are drawn around the optimal gain at four scales;
/// each is paired with the smallest dominating bound over `10^3` sampled plus
/// extreme admissible covariances (an eigen-max envelope, since the exact
/// supremum over the admissible set is a semidefinite program). The report
/// compares the best trial cost against the optimized bound cost; trials are
/// expected to stay within [`FALSIFY_SLACK`] of it.
pub fn falsify_optimality(
    problem: &FusionProblem,
    budget: usize,
    seed: u64,
) -> Result<FalsifyReport> {
    if problem.len() != 2 {
        return Err(Error::InvalidProblem(
            "falsification handles exactly two estimators".into(),
        ));
    }
    let d = problem.dim();
    let sol = optimize_pair(
        |w| Ok(esci_fuse(problem, &[w, 1.0 - w])?.bound),
        Cost::Trace,
        DEFAULT_OMEGA_TOL,
    )?;
    let esci_cost = sol.cost;
    let esci_omega = sol.omega[0];
    let reference = esci_fuse(problem, &sol.omega)?;
    let w_star = reference.gain.view((0, d), (d, d)).into_owned();

    // Shared sample set: random correlations plus extremes (zero, +/- identity,
    // full rotations, and rank-one witness correlations from a direction sweep).
    let sampler = AdmissibleSampler::new(problem, seed)?;
    let n_random = 1000usize;
    let mut samples: Vec<DMatrix<f64>> = (0..n_random)
        .map(|i| sampler.sample(i as u64).as_matrix().clone())
        .collect();
    let core = PairOracle::new(problem)?;
    let eye = DMatrix::<f64>::identity(d, d);
    let mut extremes: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d), eye.clone(), -&eye];
    let mut rng = stream(seed, &[0xfa15_1f1e, 0]);
    for _ in 0..4 {
        let u = random_orthogonal(d, &mut rng);
        let v = random_orthogonal(d, &mut rng);
        extremes.push(u * v.transpose());
    }
    for x in unit_directions(d, 2 * d + 4) {
        if let Ok(w) = core.witness(&x) {
            extremes.push(w.correlation);
        }
    }
    for omega in extremes {
        if let Ok(p) = sampler.sample_with_correlation(&omega) {
            samples.push(p.as_matrix().clone());
        }
    }
    let samples = std::sync::Arc::new(samples);
    let samples_per_trial = samples.len();

    let scales = [0.02, 0.1, 0.5, 2.0];
    let best_gain_cost = (0..budget)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream(seed, &[0xfa15_1f1e, 1 + trial as u64]);
            let scale = scales[trial % scales.len()];
            let noise = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let w = &w_star + noise * scale;
            let mut k = DMatrix::zeros(d, 2 * d);
            k.view_mut((0, 0), (d, d)).copy_from(&(&eye - &w));
            k.view_mut((0, d), (d, d)).copy_from(&w);
            let mut env = DMatrix::<f64>::zeros(d, d);
            for p in samples.iter() {
                let s = &k * p * k.transpose();
                let s = (&s + s.transpose()) * 0.5;
                envelope_absorb(&mut env, &s);
            }
            env.trace()
        })
        .reduce(|| f64::INFINITY, f64::min);

    let best_margin = (best_gain_cost - esci_cost) / esci_cost.abs().max(1e-300);
    Ok(FalsifyReport {
        trials: budget,
        samples_per_trial,
        esci_omega,
        esci_cost,
        best_gain_cost,
        best_margin,
        slack: FALSIFY_SLACK,
        beaten: best_margin < -FALSIFY_SLACK,
    })
}
