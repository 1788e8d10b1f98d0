#![allow(dead_code)]

pub mod checks;

use kfmc::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(m: usize, n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.random_range(lo..hi))
}

/// Central differences of `f` at `at`, entry by entry.
pub fn numeric_gradient(
    at: &DMatrix<f64>,
    h: f64,
    f: impl Fn(&DMatrix<f64>) -> f64,
) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(at.nrows(), at.ncols());
    for k in 0..at.len() {
        let mut plus = at.clone();
        let mut minus = at.clone();
        plus.as_mut_slice()[k] += h;
        minus.as_mut_slice()[k] -= h;
        g.as_mut_slice()[k] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    g
}

pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn non_increasing(trace: &[f64], rel_slack: f64) -> bool {
    trace
        .windows(2)
        .all(|w| w[1] <= w[0] + rel_slack * w[0].abs().max(1.0))
}
