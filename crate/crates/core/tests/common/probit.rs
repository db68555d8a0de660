//! Probit oracle: the log-likelihood from `erfc` and its maximiser by
//! coarse-to-fine grid search, plus fixture data.

use ets_causal::propensity::CovariateSet;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `ln Phi(z)` from the complementary error function.
pub fn ln_phi(z: f64) -> f64 {
    (0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)).ln()
}

pub fn oracle_loglik(x: &DMatrix<f64>, d: &[bool], beta: &[f64]) -> f64 {
    (0..x.nrows())
        .map(|i| {
            let eta: f64 = (0..x.ncols()).map(|j| x[(i, j)] * beta[j]).sum();
            ln_phi(if d[i] { eta } else { -eta })
        })
        .sum()
}

/// Coarse-to-fine grid search: a 9-point grid per coordinate around the
/// incumbent, shrinking only when the best point is interior.
pub fn grid_search_mle(x: &DMatrix<f64>, d: &[bool]) -> Vec<f64> {
    let p = x.ncols();
    let m = 9usize;
    let mut center = vec![0.0; p];
    let mut half = 4.0;
    while half > 1e-7 {
        let step = 2.0 * half / (m - 1) as f64;
        let mut best = (f64::NEG_INFINITY, center.clone(), false);
        for flat in 0..m.pow(p as u32) {
            let mut rest = flat;
            let mut edge = false;
            let cand: Vec<f64> = (0..p)
                .map(|j| {
                    let k = rest % m;
                    rest /= m;
                    edge |= k == 0 || k == m - 1;
                    center[j] - half + step * k as f64
                })
                .collect();
            let ll = oracle_loglik(x, d, &cand);
            if ll > best.0 {
                best = (ll, cand, edge);
            }
        }
        center = best.1;
        if !best.2 {
            half *= 0.6;
        }
    }
    center
}

pub fn covariate_set(cols: &[Vec<f64>]) -> CovariateSet {
    let n = cols[0].len();
    let values = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let names = (0..cols.len()).map(|j| format!("x{j}")).collect();
    let ids = (0..n).map(super::id).collect();
    CovariateSet::new(names, values, ids, true).unwrap()
}

/// Latent-index fixture: `D = 1{b0 + b'x + e > 0}`.
pub fn simulated_fixture(n: usize, k: usize, beta: &[f64], seed: u64) -> (CovariateSet, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
        .collect();
    let d = (0..n)
        .map(|i| {
            let e: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            beta[0] + (0..k).map(|j| beta[j + 1] * cols[j][i]).sum::<f64>() + e > 0.0
        })
        .collect();
    (covariate_set(&cols), d)
}

pub fn twenty_row_fixture() -> (CovariateSet, Vec<bool>) {
    let x = vec![
        -1.9, -1.6, -1.4, -1.1, -0.9, -0.7, -0.5, -0.3, -0.2, -0.1, 0.0, 0.2, 0.3, 0.5, 0.6, 0.8, 1.0, 1.3, 1.5, 1.8,
    ];
    let d = [0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 1, 0, 1, 1, 0, 1, 1, 0, 1, 1];
    (covariate_set(&[x]), d.iter().map(|v| *v == 1).collect())
}
