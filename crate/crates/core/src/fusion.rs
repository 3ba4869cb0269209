//! Linear fusion rules for estimators with unknown cross-correlations.
//!
//! Implements optimal fusion (known centralized covariance), the information
//! filter, covariance intersection (CI), split covariance intersection (SCI),
//! the extended split rule (ESCI) that also exploits correlated known
//! components, the common-noise fast path, and the decorrelation transform
//! that removes a known cross-covariance between the two error components.
//!
//! All rules return a [`FusedResult`] whose gain satisfies `K H = I` and whose
//! bound dominates `K P K^T` for every admissible centralized covariance `P`.
//! Pure functions over immutable inputs; safe to call concurrently.

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::matrix::{stacked_identity, BlockMatrix, SymMatrix, DEFAULT_PSD_TOL};

/// Tolerance on `|sum(omega) - 1|` for simplex membership.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// An unbiased estimate: mean and error covariance.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
}

impl Estimate {
    pub fn new(mean: DVector<f64>, cov: SymMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch(format!(
                "mean of dim {} vs covariance of dim {}",
                mean.len(),
                cov.dim()
            )));
        }
        if !cov.is_psd(DEFAULT_PSD_TOL) {
            return Err(Error::NotPsd(cov.min_eigenvalue()));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// An estimate whose error splits into an unknown-correlation component and a
/// known-second-moment component.
#[derive(Debug, Clone)]
pub struct SplitEstimate {
    pub mean: DVector<f64>,
    /// Covariance of the component with unknown cross-correlations.
    pub unknown_cov: SymMatrix,
    /// Covariance of the known component (this estimator's diagonal block of
    /// the known centralized covariance).
    pub known_cov: SymMatrix,
}

impl SplitEstimate {
    pub fn new(mean: DVector<f64>, unknown_cov: SymMatrix, known_cov: SymMatrix) -> Result<Self> {
        let d = mean.len();
        if unknown_cov.dim() != d || known_cov.dim() != d {
            return Err(Error::DimensionMismatch(
                "split estimate parts must share the state dimension".into(),
            ));
        }
        if !unknown_cov.is_psd(DEFAULT_PSD_TOL) {
            return Err(Error::NotPsd(unknown_cov.min_eigenvalue()));
        }
        if !known_cov.is_psd(DEFAULT_PSD_TOL) {
            return Err(Error::NotPsd(known_cov.min_eigenvalue()));
        }
        Ok(Self {
            mean,
            unknown_cov,
            known_cov,
        })
    }

    /// Total error covariance `unknown + known`.
    pub fn total_cov(&self) -> SymMatrix {
        SymMatrix::new(self.unknown_cov.as_matrix() + self.known_cov.as_matrix())
            .expect("sum of finite symmetric matrices")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// A fusion instance: `N` split estimates plus the full known centralized
/// covariance (whose diagonal blocks are the estimates' known components),
/// and an optional known cross-covariance between the two components.
///
/// The fusion rules require `cross_cov` to be absent; [`decorrelate`] removes
/// it while preserving the error sum.
#[derive(Debug, Clone)]
pub struct FusionProblem {
    estimates: Vec<SplitEstimate>,
    known_central_cov: BlockMatrix,
    cross_cov: Option<DMatrix<f64>>,
}

impl FusionProblem {
    pub fn new(
        estimates: Vec<SplitEstimate>,
        known_central_cov: SymMatrix,
        cross_cov: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        if estimates.is_empty() {
            return Err(Error::InvalidProblem("no estimates".into()));
        }
        let d = estimates[0].dim();
        if estimates.iter().any(|e| e.dim() != d) {
            return Err(Error::DimensionMismatch(
                "estimates of unequal state dimension".into(),
            ));
        }
        let n = estimates.len();
        if known_central_cov.dim() != n * d {
            return Err(Error::DimensionMismatch(format!(
                "known centralized covariance must be {}x{0}, got {}",
                n * d,
                known_central_cov.dim()
            )));
        }
        if !known_central_cov.is_psd(DEFAULT_PSD_TOL) {
            return Err(Error::NotPsd(known_central_cov.min_eigenvalue()));
        }
        let central = BlockMatrix::new(known_central_cov, d)?;
        let scale = central.as_matrix().norm().max(1.0);
        for (i, est) in estimates.iter().enumerate() {
            let diff = (central.block(i, i) - est.known_cov.as_matrix()).norm();
            if diff > 1e-9 * scale {
                return Err(Error::InvalidProblem(format!(
                    "diagonal block {i} of the known centralized covariance differs \
                     from the estimate's known component (|diff| = {diff:.3e})"
                )));
            }
        }
        if let Some(c) = &cross_cov {
            if c.nrows() != n * d || c.ncols() != n * d {
                return Err(Error::DimensionMismatch(
                    "cross covariance must be Nd x Nd".into(),
                ));
            }
            if c.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(Self {
            estimates,
            known_central_cov: central,
            cross_cov,
        })
    }

    pub fn estimates(&self) -> &[SplitEstimate] {
        &self.estimates
    }

    pub fn known_central_cov(&self) -> &BlockMatrix {
        &self.known_central_cov
    }

    pub fn cross_cov(&self) -> Option<&DMatrix<f64>> {
        self.cross_cov.as_ref()
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.estimates[0].dim()
    }

    fn has_cross_cov(&self) -> bool {
        match &self.cross_cov {
            None => false,
            Some(c) => c.norm() > 1e-12,
        }
    }

    /// The estimates with their total covariances `unknown + known`, as CI
    /// inputs.
    pub fn total_estimates(&self) -> Result<Vec<Estimate>> {
        self.estimates
            .iter()
            .map(|e| Estimate::new(e.mean.clone(), e.total_cov()))
            .collect()
    }
}

/// One estimator of a common-noise fusion instance: the unknown component,
/// an independent known component, and a gain mapping the shared noise into
/// the error.
#[derive(Debug, Clone)]
pub struct CommonNoiseEstimate {
    pub mean: DVector<f64>,
    pub unknown_cov: SymMatrix,
    pub indep_cov: SymMatrix,
    /// `d x q` gain of the shared noise (q = noise dimension).
    pub noise_gain: DMatrix<f64>,
}

/// Fusion instance whose correlated known components are induced by a shared
/// zero-mean noise with SPD covariance `noise_cov`.
#[derive(Debug, Clone)]
pub struct CommonNoiseProblem {
    estimates: Vec<CommonNoiseEstimate>,
    noise_cov: SymMatrix,
}

impl CommonNoiseProblem {
    pub fn new(estimates: Vec<CommonNoiseEstimate>, noise_cov: SymMatrix) -> Result<Self> {
        if estimates.is_empty() {
            return Err(Error::InvalidProblem("no estimates".into()));
        }
        let d = estimates[0].mean.len();
        let q = noise_cov.dim();
        if !noise_cov.is_spd() {
            return Err(Error::SingularMatrix("noise covariance must be SPD".into()));
        }
        for (i, e) in estimates.iter().enumerate() {
            if e.mean.len() != d || e.unknown_cov.dim() != d || e.indep_cov.dim() != d {
                return Err(Error::DimensionMismatch(format!(
                    "estimate {i} does not match state dimension {d}"
                )));
            }
            if e.noise_gain.nrows() != d || e.noise_gain.ncols() != q {
                return Err(Error::DimensionMismatch(format!(
                    "noise gain {i} must be {d}x{q}"
                )));
            }
            if !e.unknown_cov.is_psd(DEFAULT_PSD_TOL) || !e.indep_cov.is_psd(DEFAULT_PSD_TOL) {
                return Err(Error::NotPsd(
                    e.unknown_cov
                        .min_eigenvalue()
                        .min(e.indep_cov.min_eigenvalue()),
                ));
            }
        }
        Ok(Self {
            estimates,
            noise_cov,
        })
    }

    pub fn estimates(&self) -> &[CommonNoiseEstimate] {
        &self.estimates
    }

    pub fn noise_cov(&self) -> &SymMatrix {
        &self.noise_cov
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.estimates[0].mean.len()
    }

    /// SCI-compatible degradation: the shared-noise term folds into the
    /// unknown component (whose cross-correlations are unknown anyway) and
    /// the independent part becomes the known component. The resulting
    /// admissible set contains this problem's, so SCI bounds on these splits
    /// stay conservative here.
    pub fn sci_splits(&self) -> Result<Vec<SplitEstimate>> {
        self.estimates
            .iter()
            .map(|e| {
                let unknown = SymMatrix::new(
                    e.unknown_cov.as_matrix()
                        + &e.noise_gain * self.noise_cov.as_matrix() * e.noise_gain.transpose(),
                )?;
                SplitEstimate::new(e.mean.clone(), unknown, e.indep_cov.clone())
            })
            .collect()
    }

    /// Assemble the generic fusion instance: the known centralized covariance
    /// is `diag(indep_i) + M Q M^T` with `M` the stacked noise gains.
    pub fn assemble(&self) -> Result<FusionProblem> {
        let n = self.len();
        let d = self.dim();
        let q = self.noise_cov.dim();
        let mut m_stack = DMatrix::zeros(n * d, q);
        for (i, e) in self.estimates.iter().enumerate() {
            m_stack.view_mut((i * d, 0), (d, q)).copy_from(&e.noise_gain);
        }
        let mut central = DMatrix::zeros(n * d, n * d);
        for (i, e) in self.estimates.iter().enumerate() {
            central
                .view_mut((i * d, i * d), (d, d))
                .copy_from(e.indep_cov.as_matrix());
        }
        central += &m_stack * self.noise_cov.as_matrix() * m_stack.transpose();
        let estimates = self
            .estimates
            .iter()
            .map(|e| {
                let known = SymMatrix::new(
                    e.indep_cov.as_matrix()
                        + &e.noise_gain * self.noise_cov.as_matrix() * e.noise_gain.transpose(),
                )?;
                SplitEstimate::new(e.mean.clone(), e.unknown_cov.clone(), known)
            })
            .collect::<Result<Vec<_>>>()?;
        FusionProblem::new(estimates, SymMatrix::new(central)?, None)
    }
}

/// Result of a fusion: fused mean, conservative bound, the gain over the
/// stacked estimators, and the simplex weights used (empty when the rule has
/// no weights).
#[derive(Debug, Clone)]
pub struct FusedResult {
    pub mean: DVector<f64>,
    pub bound: SymMatrix,
    /// `d x Nd` gain; excluded estimators contribute zero blocks.
    pub gain: DMatrix<f64>,
    pub weights: Vec<f64>,
}

impl FusedResult {
    /// `|| sum_i K_i - I ||`, the unbiasedness defect of the gain.
    pub fn unbiasedness_defect(&self) -> f64 {
        let d = self.mean.len();
        let n = self.gain.ncols() / d;
        let mut sum = DMatrix::<f64>::zeros(d, d);
        for i in 0..n {
            sum += self.gain.view((0, i * d), (d, d));
        }
        (sum - DMatrix::identity(d, d)).norm()
    }
}

/// Validate a simplex weight vector: entries >= 0 and summing to one within
/// [`SIMPLEX_TOL`].
pub fn check_simplex(omega: &[f64]) -> Result<()> {
    if omega.is_empty() {
        return Err(Error::InvalidWeights("empty weight vector".into()));
    }
    if omega.iter().any(|w| !w.is_finite() || *w < -SIMPLEX_TOL) {
        return Err(Error::InvalidWeights(format!("negative entry in {omega:?}")));
    }
    let sum: f64 = omega.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidWeights(format!(
            "weights sum to {sum} (must be 1 within {SIMPLEX_TOL:.0e})"
        )));
    }
    Ok(())
}

fn stack_means(means: &[DVector<f64>]) -> DVector<f64> {
    let d = means[0].len();
    let mut out = DVector::zeros(means.len() * d);
    for (i, m) in means.iter().enumerate() {
        out.rows_mut(i * d, d).copy_from(m);
    }
    out
}

/// Optimal linear fusion for a known SPD centralized covariance:
/// `K = (H^T P^{-1} H)^{-1} H^T P^{-1}`, bound `(H^T P^{-1} H)^{-1}`.
pub fn optimal_fusion(p_cent: &BlockMatrix, means: &[DVector<f64>]) -> Result<FusedResult> {
    let n = p_cent.block_count();
    let d = p_cent.block_dim();
    if means.len() != n || means.iter().any(|m| m.len() != d) {
        return Err(Error::DimensionMismatch(
            "means do not match the centralized covariance layout".into(),
        ));
    }
    let a_cent = p_cent.as_sym().spd_inverse()?;
    let h = stacked_identity(n, d)?;
    let info = SymMatrix::new(h.transpose() * a_cent.as_matrix() * &h)?;
    let bound = info.spd_inverse()?;
    let gain = bound.as_matrix() * h.transpose() * a_cent.as_matrix();
    let mean = &gain * stack_means(means);
    Ok(FusedResult {
        mean,
        bound,
        gain,
        weights: Vec::new(),
    })
}

/// Information-filter fusion of uncorrelated estimators:
/// bound `(sum_i P_i^{-1})^{-1}`, mean `bound * sum_i P_i^{-1} x_i`.
pub fn information_fusion(estimates: &[Estimate]) -> Result<FusedResult> {
    if estimates.is_empty() {
        return Err(Error::InvalidProblem("no estimates".into()));
    }
    let d = estimates[0].dim();
    if estimates.iter().any(|e| e.dim() != d) {
        return Err(Error::DimensionMismatch("estimates of unequal dim".into()));
    }
    let n = estimates.len();
    let mut info = DMatrix::zeros(d, d);
    let mut gain_parts = Vec::with_capacity(n);
    let mut weighted = DVector::zeros(d);
    for e in estimates {
        let inv = e.cov.spd_inverse()?;
        info += inv.as_matrix();
        weighted += inv.as_matrix() * &e.mean;
        gain_parts.push(inv);
    }
    let bound = SymMatrix::new(info)?.spd_inverse()?;
    let mean = bound.as_matrix() * weighted;
    let mut gain = DMatrix::zeros(d, n * d);
    for (i, inv) in gain_parts.iter().enumerate() {
        gain.view_mut((0, i * d), (d, d))
            .copy_from(&(bound.as_matrix() * inv.as_matrix()));
    }
    Ok(FusedResult {
        mean,
        bound,
        gain,
        weights: Vec::new(),
    })
}

/// Covariance intersection: bound `(sum_i w_i P_i^{-1})^{-1}`.
///
/// Entries `w_i = 0` drop estimator `i` from the combination.
pub fn ci_fuse(estimates: &[Estimate], omega: &[f64]) -> Result<FusedResult> {
    if estimates.len() != omega.len() {
        return Err(Error::DimensionMismatch(
            "one weight per estimate required".into(),
        ));
    }
    check_simplex(omega)?;
    let d = estimates[0].dim();
    let n = estimates.len();
    let mut info = DMatrix::zeros(d, d);
    let mut weighted = DVector::zeros(d);
    let mut gain_parts: Vec<Option<SymMatrix>> = vec![None; n];
    let mut any = false;
    for (i, (e, &w)) in estimates.iter().zip(omega).enumerate() {
        if w <= 0.0 {
            continue;
        }
        let inv = e.cov.spd_inverse()?;
        info += inv.as_matrix() * w;
        weighted += inv.as_matrix() * &e.mean * w;
        gain_parts[i] = Some(inv);
        any = true;
    }
    if !any {
        return Err(Error::DegenerateWeights);
    }
    let bound = SymMatrix::new(info)?.spd_inverse()?;
    let mean = bound.as_matrix() * weighted;
    let mut gain = DMatrix::zeros(d, n * d);
    for (i, part) in gain_parts.iter().enumerate() {
        if let Some(inv) = part {
            gain.view_mut((0, i * d), (d, d))
                .copy_from(&(bound.as_matrix() * inv.as_matrix() * omega[i]));
        }
    }
    Ok(FusedResult {
        mean,
        bound,
        gain,
        weights: omega.to_vec(),
    })
}

/// Split covariance intersection:
/// bound `[sum_i w_i (P_i^(1) + w_i P_i^(2))^{-1}]^{-1}`.
pub fn sci_fuse(estimates: &[SplitEstimate], omega: &[f64]) -> Result<FusedResult> {
    if estimates.len() != omega.len() {
        return Err(Error::DimensionMismatch(
            "one weight per estimate required".into(),
        ));
    }
    check_simplex(omega)?;
    let d = estimates[0].dim();
    let n = estimates.len();
    let mut info = DMatrix::zeros(d, d);
    let mut weighted = DVector::zeros(d);
    let mut gain_parts: Vec<Option<SymMatrix>> = vec![None; n];
    let mut any = false;
    for (i, (e, &w)) in estimates.iter().zip(omega).enumerate() {
        if w <= 0.0 {
            continue;
        }
        let blended = SymMatrix::new(e.unknown_cov.as_matrix() + e.known_cov.as_matrix() * w)?;
        let inv = blended.spd_inverse()?;
        info += inv.as_matrix() * w;
        weighted += inv.as_matrix() * &e.mean * w;
        gain_parts[i] = Some(inv);
        any = true;
    }
    if !any {
        return Err(Error::DegenerateWeights);
    }
    let bound = SymMatrix::new(info)?.spd_inverse()?;
    let mean = bound.as_matrix() * weighted;
    let mut gain = DMatrix::zeros(d, n * d);
    for (i, part) in gain_parts.iter().enumerate() {
        if let Some(inv) = part {
            gain.view_mut((0, i * d), (d, d))
                .copy_from(&(bound.as_matrix() * inv.as_matrix() * omega[i]));
        }
    }
    Ok(FusedResult {
        mean,
        bound,
        gain,
        weights: omega.to_vec(),
    })
}

/// The centralized ESCI bound `diag(P_i^(1) / w_i) + P_c^(2)` for strictly
/// interior weights. Boundary weights raise [`Error::BoundaryWeight`];
/// callers wanting the limit form use [`esci_fuse`].
pub fn esci_centralized_bound(problem: &FusionProblem, omega: &[f64]) -> Result<BlockMatrix> {
    if problem.len() != omega.len() {
        return Err(Error::DimensionMismatch(
            "one weight per estimate required".into(),
        ));
    }
    check_simplex(omega)?;
    if let Some(i) = omega.iter().position(|&w| w <= 0.0) {
        return Err(Error::BoundaryWeight(i));
    }
    let d = problem.dim();
    let mut m = problem.known_central_cov.as_matrix().clone();
    for (i, est) in problem.estimates.iter().enumerate() {
        let mut view = m.view_mut((i * d, i * d), (d, d));
        view += est.unknown_cov.as_matrix() / omega[i];
    }
    BlockMatrix::new(SymMatrix::new(m)?, d)
}

/// ESCI fusion: `B_F = (H^T B_c^{-1} H)^{-1}`, `K = B_F H^T B_c^{-1}` with
/// the centralized bound of [`esci_centralized_bound`].
///
/// Boundary weights are handled by the continuity limit: estimators with
/// `w_i = 0` are deleted (their rows and columns leave both the unknown
/// diagonal and the known centralized covariance) and the remainder is fused.
/// Problems carrying a nonzero cross covariance are rejected; apply
/// [`decorrelate`] first.
pub fn esci_fuse(problem: &FusionProblem, omega: &[f64]) -> Result<FusedResult> {
    if problem.len() != omega.len() {
        return Err(Error::DimensionMismatch(
            "one weight per estimate required".into(),
        ));
    }
    if problem.has_cross_cov() {
        return Err(Error::InvalidProblem(
            "problem carries a nonzero cross covariance; decorrelate first".into(),
        ));
    }
    check_simplex(omega)?;
    let keep: Vec<usize> = (0..omega.len()).filter(|&i| omega[i] > 0.0).collect();
    if keep.is_empty() {
        return Err(Error::DegenerateWeights);
    }
    let d = problem.dim();
    let n = problem.len();
    let k = keep.len();

    let mut b_cent = DMatrix::zeros(k * d, k * d);
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            b_cent
                .view_mut((a * d, b * d), (d, d))
                .copy_from(&problem.known_central_cov.block(i, j));
        }
        let mut diag = b_cent.view_mut((a * d, a * d), (d, d));
        diag += problem.estimates[i].unknown_cov.as_matrix() / omega[i];
    }
    let a_cent = SymMatrix::new(b_cent)?.spd_inverse()?;
    let h = stacked_identity(k, d)?;
    let info = SymMatrix::new(h.transpose() * a_cent.as_matrix() * &h)?;
    let bound = info.spd_inverse()?;
    let gain_kept = bound.as_matrix() * h.transpose() * a_cent.as_matrix();

    let mut gain = DMatrix::zeros(d, n * d);
    let mut mean = DVector::zeros(d);
    for (a, &i) in keep.iter().enumerate() {
        let block = gain_kept.view((0, a * d), (d, d)).into_owned();
        mean += &block * &problem.estimates[i].mean;
        gain.view_mut((0, i * d), (d, d)).copy_from(&block);
    }
    Ok(FusedResult {
        mean,
        bound,
        gain,
        weights: omega.to_vec(),
    })
}

/// ESCI fusion specialized to a shared noise, avoiding the `Nd x Nd`
/// inversion via the Woodbury identity:
///
/// `B_F = (sum_i w_i P'_i^{-1} - S_1 S_0^{-1} S_1^T)^{-1}` with
/// `P'_i = P_i^(1) + w_i P_i^(ind)`,
/// `S_0 = sum_i w_i M_i^T P'_i^{-1} M_i + Q^{-1}` and
/// `S_1 = sum_i w_i P'_i^{-1} M_i`.
///
/// Boundary weights delete the estimator, matching [`esci_fuse`].
pub fn esci_fuse_common_noise(problem: &CommonNoiseProblem, omega: &[f64]) -> Result<FusedResult> {
    if problem.len() != omega.len() {
        return Err(Error::DimensionMismatch(
            "one weight per estimate required".into(),
        ));
    }
    check_simplex(omega)?;
    let d = problem.dim();
    let q = problem.noise_cov.dim();
    let n = problem.len();

    let mut info = DMatrix::zeros(d, d);
    let mut s0 = problem.noise_cov.spd_inverse()?.into_matrix();
    let mut s1 = DMatrix::zeros(d, q);
    let mut inverses: Vec<Option<SymMatrix>> = vec![None; n];
    let mut any = false;
    for (i, (e, &w)) in problem.estimates.iter().zip(omega).enumerate() {
        if w <= 0.0 {
            continue;
        }
        let blended = SymMatrix::new(e.unknown_cov.as_matrix() + e.indep_cov.as_matrix() * w)?;
        let inv = blended.spd_inverse()?;
        info += inv.as_matrix() * w;
        s0 += e.noise_gain.transpose() * inv.as_matrix() * &e.noise_gain * w;
        s1 += inv.as_matrix() * &e.noise_gain * w;
        inverses[i] = Some(inv);
        any = true;
    }
    if !any {
        return Err(Error::DegenerateWeights);
    }
    let s0_inv = SymMatrix::new(s0)?.spd_inverse()?;
    info -= &s1 * s0_inv.as_matrix() * s1.transpose();
    let bound = SymMatrix::new(info)?.spd_inverse()?;

    let mut gain = DMatrix::zeros(d, n * d);
    let mut mean = DVector::zeros(d);
    let eye = DMatrix::<f64>::identity(d, d);
    for (i, part) in inverses.iter().enumerate() {
        if let Some(inv) = part {
            let correction =
                &eye - &s1 * s0_inv.as_matrix() * problem.estimates[i].noise_gain.transpose();
            let block = bound.as_matrix() * correction * inv.as_matrix() * omega[i];
            mean += &block * &problem.estimates[i].mean;
            gain.view_mut((0, i * d), (d, d)).copy_from(&block);
        }
    }
    Ok(FusedResult {
        mean,
        bound,
        gain,
        weights: omega.to_vec(),
    })
}

/// Remove a known cross-covariance between the two error components.
///
/// With `C = P_c^(12) (P_c^(2))^{-1}`, the unknown components become
/// `x^(1) - C x^(2)` and the known components `(I + C) x^(2)`; the error sum
/// is preserved and the transformed cross-covariance vanishes, so ESCI bounds
/// on the transformed problem remain conservative for the original errors.
/// Means are untouched: only second moments transform.
pub fn decorrelate(problem: &FusionProblem) -> Result<FusionProblem> {
    let cross = match &problem.cross_cov {
        None => return Ok(problem.clone()),
        Some(c) => c.clone(),
    };
    let d = problem.dim();
    let p2 = problem.known_central_cov.as_sym();
    let p2_inv = p2.spd_inverse()?;
    let c = &cross * p2_inv.as_matrix();

    // Transformed cross-covariance (P^(12) - C P^(2)) (I + C)^T is zero in
    // exact arithmetic; assert the numerical residue stays small.
    let nd = cross.nrows();
    let residue = (&cross - &c * p2.as_matrix())
        * (DMatrix::identity(nd, nd) + &c).transpose();
    let scale = p2.as_matrix().norm().max(1.0);
    if residue.norm() > 1e-10 * scale {
        return Err(Error::InvalidProblem(format!(
            "decorrelation left a cross-covariance residue of {:.3e}",
            residue.norm()
        )));
    }

    // Correction to the unknown blocks: -C P^(21) - P^(12) C^T + C P^(2) C^T.
    let correction = -&c * cross.transpose() - &cross * c.transpose()
        + &c * p2.as_matrix() * c.transpose();
    let new_known_central =
        SymMatrix::new((DMatrix::identity(nd, nd) + &c) * p2.as_matrix()
            * (DMatrix::identity(nd, nd) + &c).transpose())?;
    let known_blocks = BlockMatrix::new(new_known_central.clone(), d)?;

    let estimates = problem
        .estimates
        .iter()
        .enumerate()
        .map(|(i, est)| {
            let corr = correction.view((i * d, i * d), (d, d)).into_owned();
            let unknown = SymMatrix::new(est.unknown_cov.as_matrix() + corr)?;
            SplitEstimate::new(est.mean.clone(), unknown, known_blocks.diagonal_block(i))
        })
        .collect::<Result<Vec<_>>>()?;
    FusionProblem::new(estimates, new_known_central, None)
}

// ---------------------------------------------------------------------------
// JSON encodings
// ---------------------------------------------------------------------------

fn encode_general(m: &DMatrix<f64>) -> GeneralMatrixJson {
    GeneralMatrixJson {
        dim: m.nrows(),
        rows: (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect(),
    }
}

fn decode_general(raw: &GeneralMatrixJson) -> std::result::Result<DMatrix<f64>, String> {
    if raw.rows.len() != raw.dim {
        return Err(format!("expected {} rows", raw.dim));
    }
    let cols = raw.rows.first().map(|r| r.len()).unwrap_or(0);
    if cols == 0 || raw.rows.iter().any(|r| r.len() != cols) {
        return Err("ragged matrix rows".into());
    }
    let m = DMatrix::from_fn(raw.dim, cols, |i, j| raw.rows[i][j]);
    if m.iter().any(|x| !x.is_finite()) {
        return Err("non-finite entry".into());
    }
    Ok(m)
}

/// `{"dim", "rows"}` shape shared with the symmetric encoding, but without
/// the symmetry requirement (used for cross-covariances and noise gains).
#[derive(Serialize, Deserialize)]
struct GeneralMatrixJson {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SplitEstimateJson {
    mean: Vec<f64>,
    unknown_cov: SymMatrix,
    known_cov: SymMatrix,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct FusionProblemJson {
    d: usize,
    estimates: Vec<SplitEstimateJson>,
    known_central_cov: SymMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cross_cov: Option<GeneralMatrixJson>,
}

impl Serialize for FusionProblem {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FusionProblemJson {
            d: self.dim(),
            estimates: self
                .estimates
                .iter()
                .map(|e| SplitEstimateJson {
                    mean: e.mean.iter().copied().collect(),
                    unknown_cov: e.unknown_cov.clone(),
                    known_cov: e.known_cov.clone(),
                })
                .collect(),
            known_central_cov: self.known_central_cov.as_sym().clone(),
            cross_cov: self.cross_cov.as_ref().map(encode_general),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FusionProblem {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = FusionProblemJson::deserialize(de)?;
        let estimates = raw
            .estimates
            .into_iter()
            .map(|e| {
                if e.mean.len() != raw.d {
                    return Err(D::Error::custom("estimate mean does not match d"));
                }
                SplitEstimate::new(
                    DVector::from_vec(e.mean),
                    e.unknown_cov,
                    e.known_cov,
                )
                .map_err(D::Error::custom)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let cross = raw
            .cross_cov
            .as_ref()
            .map(decode_general)
            .transpose()
            .map_err(D::Error::custom)?;
        FusionProblem::new(estimates, raw.known_central_cov, cross).map_err(D::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct CommonNoiseEstimateJson {
    mean: Vec<f64>,
    unknown_cov: SymMatrix,
    indep_cov: SymMatrix,
    noise_gain: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct CommonNoiseProblemJson {
    d: usize,
    estimates: Vec<CommonNoiseEstimateJson>,
    noise_cov: SymMatrix,
}

impl Serialize for CommonNoiseProblem {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CommonNoiseProblemJson {
            d: self.dim(),
            estimates: self
                .estimates
                .iter()
                .map(|e| CommonNoiseEstimateJson {
                    mean: e.mean.iter().copied().collect(),
                    unknown_cov: e.unknown_cov.clone(),
                    indep_cov: e.indep_cov.clone(),
                    noise_gain: (0..e.noise_gain.nrows())
                        .map(|i| {
                            (0..e.noise_gain.ncols())
                                .map(|j| e.noise_gain[(i, j)])
                                .collect()
                        })
                        .collect(),
                })
                .collect(),
            noise_cov: self.noise_cov.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CommonNoiseProblem {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = CommonNoiseProblemJson::deserialize(de)?;
        let estimates = raw
            .estimates
            .into_iter()
            .map(|e| {
                if e.mean.len() != raw.d {
                    return Err(D::Error::custom("estimate mean does not match d"));
                }
                let rows = e.noise_gain.len();
                let cols = e.noise_gain.first().map(|r| r.len()).unwrap_or(0);
                if rows != raw.d || cols == 0 || e.noise_gain.iter().any(|r| r.len() != cols) {
                    return Err(D::Error::custom("noise gain must be d x q"));
                }
                let gain = DMatrix::from_fn(rows, cols, |i, j| e.noise_gain[i][j]);
                Ok(CommonNoiseEstimate {
                    mean: DVector::from_vec(e.mean),
                    unknown_cov: e.unknown_cov,
                    indep_cov: e.indep_cov,
                    noise_gain: gain,
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        CommonNoiseProblem::new(estimates, raw.noise_cov).map_err(D::Error::custom)
    }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct FusedResultJson {
    mean: Vec<f64>,
    bound: SymMatrix,
    gain: Vec<Vec<f64>>,
    omega: Vec<f64>,
}

impl Serialize for FusedResult {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FusedResultJson {
            mean: self.mean.iter().copied().collect(),
            bound: self.bound.clone(),
            gain: (0..self.gain.nrows())
                .map(|i| (0..self.gain.ncols()).map(|j| self.gain[(i, j)]).collect())
                .collect(),
            omega: self.weights.clone(),
        }
        .serialize(s)
    }
}
