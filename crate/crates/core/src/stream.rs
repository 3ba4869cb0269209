//! Deterministic, counter-based random streams and direction sweeps.
//!
//! Every randomized component of the crate draws from a ChaCha8 stream keyed
//! by a caller seed plus a list of context ids (trial index, node, step, ...).
//! Streams for distinct id tuples are independent for practical purposes and
//! do not depend on evaluation order, which keeps parallel runs
//! schedule-independent and bit-reproducible.

use nalgebra::DVector;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha8 stream keyed by `(seed, ids...)` via a splitmix64 absorb chain.
pub fn stream(seed: u64, ids: &[u64]) -> ChaCha8Rng {
    let mut acc = seed ^ 0x243F_6A88_85A3_08D3;
    for &id in ids {
        let mut s = acc ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        acc = splitmix64(&mut s);
    }
    let mut key = [0u8; 32];
    let mut s = acc;
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Deterministic unit-direction sweep.
///
/// - `d == 1`: the single direction `[1]`.
/// - `d == 2`: `count` angles evenly covering a half turn (antipodal
///   directions are equivalent for quadratic forms).
/// - `d >= 3`: a Kronecker low-discrepancy sequence mapped through
///   Box-Muller and normalized.
pub fn unit_directions(d: usize, count: usize) -> Vec<DVector<f64>> {
    assert!(d >= 1);
    if d == 1 {
        return vec![DVector::from_column_slice(&[1.0])];
    }
    if d == 2 {
        return (0..count)
            .map(|k| {
                let t = std::f64::consts::PI * (k as f64) / (count as f64);
                DVector::from_column_slice(&[t.cos(), t.sin()])
            })
            .collect();
    }
    // R_s sequence: alpha_i = phi^-(i+1) with phi the positive root of
    // x^(s+1) = x + 1, s = number of uniforms needed.
    let s = d + (d % 2);
    let mut phi = 1.5f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (s as f64 + 1.0));
    }
    let alphas: Vec<f64> = (1..=s).map(|i| (1.0 / phi.powi(i as i32)).fract()).collect();
    let mut out = Vec::with_capacity(count);
    for k in 1..=count {
        let u: Vec<f64> = alphas
            .iter()
            .map(|a| (0.5 + a * k as f64).fract().clamp(1e-12, 1.0 - 1e-12))
            .collect();
        let mut g = Vec::with_capacity(s);
        for pair in u.chunks(2) {
            let r = (-2.0 * pair[0].ln()).sqrt();
            let th = 2.0 * std::f64::consts::PI * pair[1];
            g.push(r * th.cos());
            g.push(r * th.sin());
        }
        g.truncate(d);
        let mut x = DVector::from_vec(g);
        let norm = x.norm();
        if norm > 1e-12 {
            x /= norm;
            out.push(x);
        }
    }
    out
}
