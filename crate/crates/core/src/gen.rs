//! Seeded generators of random, well-conditioned fusion instances for
//! verification sweeps and tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::fusion::{CommonNoiseEstimate, CommonNoiseProblem, FusionProblem, SplitEstimate};
use crate::matrix::SymMatrix;

/// Random SPD matrix with eigenvalues uniform in `[0.3, 3]`.
pub fn spd(d: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let vals = DVector::from_fn(d, |_, _| rng.random_range(0.3..3.0));
    SymMatrix::new(&q * DMatrix::from_diagonal(&vals) * q.transpose()).expect("finite SPD")
}

/// Random mean vector with entries in `[-2, 2]`.
pub fn mean(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0))
}

/// Random two-estimator problem with SPD unknown blocks and a full SPD known
/// centralized covariance (generic correlated known components).
pub fn random_pair_problem(d: usize, rng: &mut ChaCha8Rng) -> FusionProblem {
    random_fusion_problem(2, d, rng)
}

/// Random `n`-estimator problem: SPD unknown blocks, full SPD known
/// centralized covariance whose diagonal blocks become the known components.
pub fn random_fusion_problem(n: usize, d: usize, rng: &mut ChaCha8Rng) -> FusionProblem {
    let central = spd(n * d, rng);
    let central_blocks =
        crate::matrix::BlockMatrix::new(central.clone(), d).expect("layout");
    let estimates = (0..n)
        .map(|i| {
            SplitEstimate::new(mean(d, rng), spd(d, rng), central_blocks.diagonal_block(i))
                .expect("valid split")
        })
        .collect();
    FusionProblem::new(estimates, central, None).expect("consistent by construction")
}

/// Random common-noise problem: SPD unknown and independent parts, dense
/// noise gains, SPD noise covariance of dimension `q`.
pub fn random_common_noise_problem(
    n: usize,
    d: usize,
    q: usize,
    rng: &mut ChaCha8Rng,
) -> CommonNoiseProblem {
    let estimates = (0..n)
        .map(|_| CommonNoiseEstimate {
            mean: mean(d, rng),
            unknown_cov: spd(d, rng),
            indep_cov: spd(d, rng),
            noise_gain: DMatrix::from_fn(d, q, |_, _| rng.random_range(-1.0..1.0)),
        })
        .collect();
    CommonNoiseProblem::new(estimates, spd(q, rng)).expect("valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::stream;

    #[test]
    fn generated_problems_validate() {
        let mut rng = stream(1, &[99]);
        for n in 2..=4 {
            for d in 1..=3 {
                let p = random_fusion_problem(n, d, &mut rng);
                assert_eq!(p.len(), n);
                let c = random_common_noise_problem(n, d, 2, &mut rng);
                c.assemble().unwrap();
            }
        }
    }
}
