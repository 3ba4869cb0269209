//! Verification suites: runnable property checks with machine-readable
//! reports, wrapping the sampling/witness/tightness/falsification machinery.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fusion::{ci_fuse, esci_fuse, sci_fuse, FusionProblem, SplitEstimate};
use crate::matrix::SymMatrix;
use crate::oracle::{
    eval_g, falsify_optimality, tightness_certificate, witness_covariance, AdmissibleSampler,
    PairOracle,
};
use crate::stream::stream;
use crate::sim::Rule;
use crate::suites::input::ProblemInput;
use crate::weights::{optimize_pair, Cost, DEFAULT_OMEGA_TOL};

/// Weights probed by the conservatism suite.
pub const OMEGA_PROBES: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// Conservatism margin: `max eig(K P K^T - B) <= MARGIN * ||B||`.
pub const CONSERVATISM_MARGIN: f64 = 1e-8;

/// Relative tolerance of `g` against the dense grid maximum.
pub const GRID_MATCH_TOL: f64 = 1e-8;

/// Relative tolerance of the witness achieved value against `g`.
pub const WITNESS_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    All,
    Conservatism,
    Theorem2,
    Tightness,
    Falsify,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Ok(Suite::All),
            "conservatism" => Ok(Suite::Conservatism),
            "theorem2" => Ok(Suite::Theorem2),
            "tightness" => Ok(Suite::Tightness),
            "falsify" => Ok(Suite::Falsify),
            other => Err(Error::InvalidProblem(format!("unknown suite '{other}'"))),
        }
    }
}

impl std::fmt::Display for Suite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Suite::All => "all",
            Suite::Conservatism => "conservatism",
            Suite::Theorem2 => "theorem2",
            Suite::Tightness => "tightness",
            Suite::Falsify => "falsify",
        })
    }
}

/// One checked property.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub name: String,
    pub pass: bool,
    /// Worst observed violation-style margin; semantics named in `detail`.
    pub worst_margin: f64,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<f64>>,
}

/// Full suite report.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub suite: String,
    pub seed: u64,
    pub budget: usize,
    pub pass: bool,
    pub properties: Vec<PropertyReport>,
}

pub mod input {
    //! Problem-file input: either a generic fusion problem or a common-noise
    //! problem (detected by the presence of `noiseCov`).

    use super::*;
    use crate::fusion::CommonNoiseProblem;

    #[derive(Debug, Clone)]
    pub enum ProblemInput {
        Generic(FusionProblem),
        CommonNoise(CommonNoiseProblem),
    }

    impl ProblemInput {
        pub fn from_json(text: &str) -> Result<Self> {
            let value: serde_json::Value = serde_json::from_str(text)?;
            if value.get("noiseCov").is_some() {
                Ok(ProblemInput::CommonNoise(serde_json::from_value(value)?))
            } else {
                Ok(ProblemInput::Generic(serde_json::from_value(value)?))
            }
        }

        /// The generic fusion problem (assembling common-noise inputs).
        pub fn generic(&self) -> Result<FusionProblem> {
            match self {
                ProblemInput::Generic(p) => Ok(p.clone()),
                ProblemInput::CommonNoise(c) => c.assemble(),
            }
        }

        pub fn len(&self) -> usize {
            match self {
                ProblemInput::Generic(p) => p.len(),
                ProblemInput::CommonNoise(c) => c.len(),
            }
        }

        pub fn is_empty(&self) -> bool {
            self.len() == 0
        }
    }
}

/// Apply a rule to a problem input at given weights: CI uses the total
/// covariances, SCI the uncorrelated-known splits (for common-noise inputs,
/// the shared-noise term folds into the unknown part), ESCI the full
/// structure (with the fast path on common-noise inputs).
pub fn fuse_rule(
    input: &ProblemInput,
    rule: Rule,
    omega: &[f64],
) -> crate::Result<crate::fusion::FusedResult> {
    match (rule, input) {
        (Rule::Ci, _) => ci_fuse(&input.generic()?.total_estimates()?, omega),
        (Rule::Sci, ProblemInput::CommonNoise(c)) => sci_fuse(&c.sci_splits()?, omega),
        (Rule::Sci, ProblemInput::Generic(p)) => sci_fuse(p.estimates(), omega),
        (Rule::Esci, ProblemInput::CommonNoise(c)) => {
            crate::fusion::esci_fuse_common_noise(c, omega)
        }
        (Rule::Esci, ProblemInput::Generic(p)) => esci_fuse(p, omega),
    }
}

/// The (rule label, fused results at the probe weights) rows checked by the
/// conservatism suite.
fn rule_rows(input: &ProblemInput) -> Result<Vec<(String, Vec<crate::fusion::FusedResult>)>> {
    let generic = input.generic()?;
    let n = generic.len();
    let probe_set: Vec<Vec<f64>> = if n == 2 {
        OMEGA_PROBES.iter().map(|&w| vec![w, 1.0 - w]).collect()
    } else {
        // interior probes for general N: blends of the centroid with each vertex
        let mut set = vec![vec![1.0 / n as f64; n]];
        for v in 0..n.min(4) {
            let mut w = vec![0.5 / n as f64; n];
            w[v] += 0.5;
            let sum: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= sum);
            set.push(w);
        }
        set
    };

    let mut rows = Vec::new();

    let totals = generic.total_estimates()?;
    rows.push((
        "ci".to_string(),
        probe_set
            .iter()
            .map(|w| ci_fuse(&totals, w))
            .collect::<Result<Vec<_>>>()?,
    ));

    // SCI needs uncorrelated known components that still cover the admissible
    // set: a common-noise input provides them by folding the shared-noise
    // term into the unknown part; a generic input qualifies only when its
    // known centralized covariance is already block-diagonal.
    let sci_splits: Option<Vec<SplitEstimate>> = match input {
        ProblemInput::CommonNoise(c) => Some(c.sci_splits()?),
        ProblemInput::Generic(p) => {
            let central = p.known_central_cov();
            let mut off_diag = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        off_diag = off_diag.max(central.block(i, j).norm());
                    }
                }
            }
            if off_diag <= 1e-12 {
                Some(p.estimates().to_vec())
            } else {
                None
            }
        }
    };
    if let Some(splits) = sci_splits {
        rows.push((
            "sci".to_string(),
            probe_set
                .iter()
                .map(|w| sci_fuse(&splits, w))
                .collect::<Result<Vec<_>>>()?,
        ));
    }

    rows.push((
        "esci".to_string(),
        probe_set
            .iter()
            .map(|w| esci_fuse(&generic, w))
            .collect::<Result<Vec<_>>>()?,
    ));
    Ok(rows)
}

/// Check every sampled admissible covariance against every rule bound;
/// returns the worst relative exceedance margin.
pub fn conservatism_property(
    input: &ProblemInput,
    samples: usize,
    seed: u64,
    inject_shrink: Option<f64>,
) -> Result<PropertyReport> {
    let generic = input.generic()?;
    let rows = rule_rows(input)?;
    let shrink = inject_shrink.unwrap_or(1.0);
    let pairs: Vec<(DMatrix<f64>, DMatrix<f64>, f64)> = rows
        .iter()
        .flat_map(|(_, results)| {
            results.iter().map(|r| {
                let b = r.bound.as_matrix() * shrink;
                let norm = SymMatrix::new(b.clone()).unwrap().spectral_norm();
                (r.gain.clone(), b, norm)
            })
        })
        .collect();
    let sampler = AdmissibleSampler::new(&generic, seed)?;
    let worst = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let p = sampler.sample(i);
            let mut local: f64 = f64::NEG_INFINITY;
            for (k, b, norm) in &pairs {
                let fused = k * p.as_matrix() * k.transpose();
                let diff = SymMatrix::new(fused - b).expect("finite");
                local = local.max(diff.max_eigenvalue() / norm.max(1e-300));
            }
            local
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    Ok(PropertyReport {
        name: "conservatism".into(),
        pass: worst <= CONSERVATISM_MARGIN,
        worst_margin: worst,
        detail: format!(
            "max eig(K P K^T - B)/||B|| over {samples} samples x {} (rule, omega) rows; limit {CONSERVATISM_MARGIN:.0e}",
            pairs.len()
        ),
        witness: None,
    })
}

/// `g` against the dense `omega`-grid maximum, and the witness achieved
/// value against `g`, over seeded random directions.
pub fn theorem2_properties(
    input: &ProblemInput,
    directions: usize,
    seed: u64,
) -> Result<Vec<PropertyReport>> {
    let generic = input.generic()?;
    let core = PairOracle::new(&generic)?;
    let d = generic.dim();
    let mut rng = stream(seed, &[0x7e02, 0]);
    let dirs: Vec<nalgebra::DVector<f64>> = (0..directions)
        .map(|_| {
            use rand::Rng;
            let mut x = nalgebra::DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            while x.norm() < 1e-6 {
                x = nalgebra::DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            }
            x.normalize()
        })
        .collect();

    // grid max shares one factorization per omega across all directions
    let grid = 10_000usize;
    let mut grid_max = vec![f64::NEG_INFINITY; dirs.len()];
    for k in 0..=grid {
        let w = k as f64 / grid as f64;
        for (i, h) in core.h_many(&dirs, w)?.iter().enumerate() {
            grid_max[i] = grid_max[i].max(*h);
        }
    }
    let mut worst_grid = 0.0f64;
    let mut worst_witness = 0.0f64;
    for (i, x) in dirs.iter().enumerate() {
        let g = eval_g(&generic, x)?;
        let rel = (g.value - grid_max[i]).abs() / g.value.abs().max(1e-300);
        worst_grid = worst_grid.max(rel);
        let w = witness_covariance(&generic, x)?;
        let relw = (w.achieved - g.value).abs() / g.value.abs().max(1e-300);
        worst_witness = worst_witness.max(relw);
    }
    Ok(vec![
        PropertyReport {
            name: "g-matches-grid-max".into(),
            pass: worst_grid <= GRID_MATCH_TOL,
            worst_margin: worst_grid,
            detail: format!(
                "relative |g - max over {grid}-point omega grid| over {} directions; limit {GRID_MATCH_TOL:.0e}",
                dirs.len()
            ),
            witness: None,
        },
        PropertyReport {
            name: "witness-achieves-g".into(),
            pass: worst_witness <= WITNESS_TOL,
            worst_margin: worst_witness,
            detail: format!(
                "relative |achieved - g| over {} directions; limit {WITNESS_TOL:.0e}",
                dirs.len()
            ),
            witness: None,
        },
    ])
}

/// Certificate search at the trace-optimal weight.
pub fn tightness_property(input: &ProblemInput) -> Result<PropertyReport> {
    let generic = input.generic()?;
    let sol = optimize_pair(
        |w| Ok(esci_fuse(&generic, &[w, 1.0 - w])?.bound),
        Cost::Trace,
        DEFAULT_OMEGA_TOL,
    )?;
    let cert = tightness_certificate(&generic, sol.omega[0])?;
    Ok(PropertyReport {
        name: "tightness-at-optimum".into(),
        pass: cert.is_some(),
        worst_margin: if cert.is_some() { 0.0 } else { 1.0 },
        detail: format!(
            "certificate direction for the trace-optimal omega = {:.9}",
            sol.omega[0]
        ),
        witness: cert.map(|x| x.iter().copied().collect()),
    })
}

/// Random-gain falsification search.
pub fn falsify_property(input: &ProblemInput, budget: usize, seed: u64) -> Result<PropertyReport> {
    let generic = input.generic()?;
    let report = falsify_optimality(&generic, budget, seed)?;
    Ok(PropertyReport {
        name: "no-gain-beats-esci".into(),
        pass: !report.beaten,
        worst_margin: report.best_margin,
        detail: format!(
            "best of {} random gains costs {:.9} vs optimized {:.9} at omega {:.6}; slack {:.0e}",
            report.trials, report.best_gain_cost, report.esci_cost, report.esci_omega, report.slack
        ),
        witness: None,
    })
}

/// Run a suite against a problem input.
///
/// `budget` scales the heavy searches: admissible samples for conservatism
/// (default `10^4`) and random gains for falsification (default `10^3`).
/// `inject_shrink` deliberately scales the bounds before the conservatism
/// check; it exists to prove the suite can fail.
pub fn run_suite(
    input: &ProblemInput,
    suite: Suite,
    budget: Option<usize>,
    seed: u64,
    inject_shrink: Option<f64>,
) -> Result<VerifyReport> {
    let mut properties = Vec::new();
    let pair_capable = input.len() == 2;
    let conservatism_budget = budget.unwrap_or(10_000);
    let falsify_budget = budget.unwrap_or(1_000);

    match suite {
        Suite::Conservatism => {
            properties.push(conservatism_property(input, conservatism_budget, seed, inject_shrink)?);
        }
        Suite::Theorem2 => {
            require_pair(pair_capable)?;
            properties.extend(theorem2_properties(input, 20, seed)?);
        }
        Suite::Tightness => {
            require_pair(pair_capable)?;
            properties.push(tightness_property(input)?);
        }
        Suite::Falsify => {
            require_pair(pair_capable)?;
            properties.push(falsify_property(input, falsify_budget, seed)?);
        }
        Suite::All => {
            properties.push(conservatism_property(input, conservatism_budget, seed, inject_shrink)?);
            if pair_capable {
                properties.extend(theorem2_properties(input, 20, seed)?);
                properties.push(tightness_property(input)?);
                properties.push(falsify_property(input, falsify_budget, seed)?);
            }
        }
    }
    let pass = properties.iter().all(|p| p.pass);
    Ok(VerifyReport {
        suite: suite.to_string(),
        seed,
        budget: budget.unwrap_or(0),
        pass,
        properties,
    })
}

fn require_pair(ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidProblem(
            "this suite handles exactly two estimators".into(),
        ))
    }
}
