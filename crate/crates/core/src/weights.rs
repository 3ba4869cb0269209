//! Fusion-weight selection: minimize an increasing cost of the bound over the
//! unit simplex.
//!
//! For two estimators the weight lives on a segment, so a coarse grid scan
//! followed by golden-section refinement is exact enough at negligible cost.
//! For three or more estimators the bounds are genuinely suboptimal anyway;
//! a deterministic multi-start coordinate descent over a stick-breaking
//! parameterization is used and no optimality is claimed.

use crate::error::{Error, Result};
use crate::matrix::SymMatrix;

/// Scalar cost ranking the bounds. All three are increasing with respect to
/// the Loewner order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cost {
    Trace,
    LogDet,
    MaxEig,
}

impl std::str::FromStr for Cost {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "trace" => Ok(Cost::Trace),
            "logdet" => Ok(Cost::LogDet),
            "maxeig" => Ok(Cost::MaxEig),
            other => Err(Error::InvalidProblem(format!("unknown cost '{other}'"))),
        }
    }
}

impl std::fmt::Display for Cost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Cost::Trace => "trace",
            Cost::LogDet => "logdet",
            Cost::MaxEig => "maxeig",
        })
    }
}

/// Evaluate a cost on a bound. `logdet` requires an SPD bound.
pub fn evaluate_cost(bound: &SymMatrix, cost: Cost) -> Result<f64> {
    match cost {
        Cost::Trace => Ok(bound.trace()),
        Cost::LogDet => bound.logdet(),
        Cost::MaxEig => Ok(bound.max_eigenvalue()),
    }
}

/// Optimized weights with the achieved cost and the number of bound
/// evaluations spent.
#[derive(Debug, Clone, serde::Serialize)]
pub struct WeightSolution {
    pub omega: Vec<f64>,
    pub cost: f64,
    pub evaluations: u64,
}

/// Default refinement tolerance on the weight parameter.
pub const DEFAULT_OMEGA_TOL: f64 = 1e-8;

const COARSE_GRID: usize = 33;
const GOLDEN: f64 = 0.618_033_988_749_894_9; // 1/phi

struct Tracker<F> {
    eval: F,
    evaluations: u64,
    best_x: f64,
    best_cost: f64,
}

impl<F: FnMut(f64) -> Result<f64>> Tracker<F> {
    fn new(eval: F) -> Self {
        Self {
            eval,
            evaluations: 0,
            best_x: f64::NAN,
            best_cost: f64::INFINITY,
        }
    }

    fn probe(&mut self, x: f64) -> Result<f64> {
        let c = (self.eval)(x)?;
        self.evaluations += 1;
        if c < self.best_cost || (c == self.best_cost && x < self.best_x) {
            self.best_cost = c;
            self.best_x = x;
        }
        Ok(c)
    }
}

/// Grid-then-golden minimization of a scalar cost on `[0, 1]`.
///
/// The cost need not be unimodal: a coarse scan (33 points) brackets the best
/// grid cell before golden-section refinement to `|x - x*| <= tol`. The
/// returned cost never exceeds any probed cost.
fn minimize_scalar<F: FnMut(f64) -> Result<f64>>(
    eval: F,
    tol: f64,
    grid: usize,
) -> Result<(f64, f64, u64)> {
    let mut t = Tracker::new(eval);
    let grid = grid.max(3);
    let mut best_idx = 0usize;
    let mut best_cost = f64::INFINITY;
    for k in 0..grid {
        let x = k as f64 / (grid - 1) as f64;
        let c = t.probe(x)?;
        if c < best_cost {
            best_cost = c;
            best_idx = k;
        }
    }
    let step = 1.0 / (grid - 1) as f64;
    let mut a = (best_idx as f64 * step - step).max(0.0);
    let mut b = (best_idx as f64 * step + step).min(1.0);

    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = t.probe(x1)?;
    let mut f2 = t.probe(x2)?;
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = t.probe(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = t.probe(x2)?;
        }
    }
    Ok((t.best_x, t.best_cost, t.evaluations))
}

/// Optimize the two-estimator weight `(w, 1-w)` over `w in [0, 1]`.
///
/// `fuse` maps `w` to the bound (endpoints via the rules' boundary
/// semantics); evaluator failures propagate.
pub fn optimize_pair<F>(mut fuse: F, cost: Cost, tol: f64) -> Result<WeightSolution>
where
    F: FnMut(f64) -> Result<SymMatrix>,
{
    let (w, c, evals) = minimize_scalar(
        |x| {
            let bound = fuse(x)?;
            evaluate_cost(&bound, cost)
        },
        tol,
        COARSE_GRID,
    )?;
    Ok(WeightSolution {
        omega: vec![w, 1.0 - w],
        cost: c,
        evaluations: evals,
    })
}

/// Tunable effort for [`optimize_simplex_with`].
#[derive(Debug, Clone)]
pub struct SimplexOptions {
    /// Grid points per coordinate line search.
    pub grid: usize,
    /// Golden-section tolerance on each stick-breaking parameter.
    pub tol: f64,
    /// Stop when a full sweep improves the cost by less than this (relative).
    pub improvement_tol: f64,
    /// Additional random starts beyond the vertices and the centroid.
    pub random_starts: usize,
    pub max_sweeps: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            grid: COARSE_GRID,
            tol: DEFAULT_OMEGA_TOL,
            improvement_tol: 1e-8,
            random_starts: 0, // topped up so vertices + centroid + random = 8
            max_sweeps: 24,
        }
    }
}

fn sticks_to_simplex(t: &[f64]) -> Vec<f64> {
    let n = t.len() + 1;
    let mut omega = vec![0.0; n];
    let mut remaining = 1.0;
    for i in 0..t.len() {
        omega[i] = remaining * t[i];
        remaining *= 1.0 - t[i];
    }
    omega[n - 1] = remaining;
    // renormalize the rounding residue so the result is a certified simplex point
    let sum: f64 = omega.iter().sum();
    for w in omega.iter_mut() {
        *w /= sum;
    }
    omega
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Coordinate-descent weight search over the `(N-1)`-parameter
/// stick-breaking map, multi-started from the vertices, the centroid and
/// deterministic random points. Returns a certified simplex point; for
/// `N >= 3` no optimality is claimed.
pub fn optimize_simplex<F>(fuse: F, cost: Cost, n: usize) -> Result<WeightSolution>
where
    F: FnMut(&[f64]) -> Result<SymMatrix>,
{
    optimize_simplex_with(fuse, cost, n, &SimplexOptions::default())
}

pub fn optimize_simplex_with<F>(
    mut fuse: F,
    cost: Cost,
    n: usize,
    opts: &SimplexOptions,
) -> Result<WeightSolution>
where
    F: FnMut(&[f64]) -> Result<SymMatrix>,
{
    if n < 2 {
        return Err(Error::InvalidProblem(
            "simplex optimization needs at least two estimators".into(),
        ));
    }
    let mut evaluations = 0u64;
    let mut eval_omega = |omega: &[f64]| -> Result<f64> {
        let bound = fuse(omega)?;
        evaluate_cost(&bound, cost)
    };

    // Starting points in stick coordinates.
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for v in 0..n {
        let mut t = vec![0.0; n - 1];
        if v < n - 1 {
            t[v] = 1.0;
        }
        starts.push(t);
    }
    // centroid: omega = 1/n each => t_i = 1 / (n - i)
    starts.push((0..n - 1).map(|i| 1.0 / (n - i) as f64).collect());
    let random_starts = if opts.random_starts == 0 {
        8usize.saturating_sub(starts.len())
    } else {
        opts.random_starts
    };
    {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(START_SEED);
        for _ in 0..random_starts {
            starts.push((0..n - 1).map(|_| rng.random_range(0.0..1.0)).collect());
        }
    }

    fn consider(best: &mut Option<(f64, Vec<f64>)>, cost: f64, omega: Vec<f64>) {
        let replace = match best {
            None => true,
            Some((c, o)) => cost < *c || (cost == *c && lex_less(&omega, o)),
        };
        if replace {
            *best = Some((cost, omega));
        }
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in starts {
        let mut t = start;
        let mut current = eval_omega(&sticks_to_simplex(&t))?;
        evaluations += 1;
        consider(&mut best, current, sticks_to_simplex(&t));
        for _sweep in 0..opts.max_sweeps {
            let before = current;
            for i in 0..t.len() {
                let (ti, ci, evals) = minimize_scalar(
                    |x| {
                        let mut probe = t.clone();
                        probe[i] = x;
                        eval_omega(&sticks_to_simplex(&probe))
                    },
                    opts.tol,
                    opts.grid,
                )?;
                evaluations += evals;
                if ci < current {
                    current = ci;
                    t[i] = ti;
                }
            }
            consider(&mut best, current, sticks_to_simplex(&t));
            if before - current <= opts.improvement_tol * before.abs().max(1e-300) {
                break;
            }
        }
    }
    let (cost_value, omega) = best.expect("at least one start");
    Ok(WeightSolution {
        omega,
        cost: cost_value,
        evaluations,
    })
}

// Fixed stream for the deterministic random starts.
const START_SEED: u64 = 0x5eed_c0de_0123_4567;
