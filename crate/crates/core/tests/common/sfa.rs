//! Frontier oracles: the composed density and posterior mean of the
//! inefficiency by quadrature, a Cobb-Douglas simulator and least squares.

use ets_causal::frontier::{FrontierData, FrontierParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::simpson;

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Density of the inefficiency magnitude `w >= 0`.
pub fn inefficiency_pdf(w: f64, mu: f64, sigma_v: f64) -> f64 {
    normal_pdf((w - mu) / sigma_v) / (sigma_v * normal_cdf(mu / sigma_v))
}

/// Upper end of the numerically relevant inefficiency range.
pub fn w_max(mu: f64, sigma_u: f64, sigma_v: f64, eps: f64) -> f64 {
    mu.max(0.0) + 12.0 * sigma_v + 12.0 * sigma_u + eps.abs()
}

/// `f(eps) = int_0^inf phi_u(eps + w) f_w(w) dw` by Simpson's rule.
pub fn convolution_density(eps: f64, mu: f64, sigma_u: f64, sigma_v: f64) -> f64 {
    simpson(
        |w| normal_pdf((eps + w) / sigma_u) / sigma_u * inefficiency_pdf(w, mu, sigma_v),
        0.0,
        w_max(mu, sigma_u, sigma_v, eps),
        20_000,
    )
}

/// Posterior mean of `w` given `eps` by Simpson's rule.
pub fn posterior_mean(eps: f64, mu: f64, sigma_u: f64, sigma_v: f64) -> f64 {
    let kernel = |w: f64| normal_pdf((eps + w) / sigma_u) * normal_pdf((w - mu) / sigma_v);
    let hi = w_max(mu, sigma_u, sigma_v, eps);
    let num = simpson(|w| w * kernel(w), 0.0, hi, 20_000);
    let den = simpson(kernel, 0.0, hi, 20_000);
    num / den
}

pub fn random_scales(rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    (
        rng.random_range(-0.5..0.5),
        rng.random_range(0.05..0.5),
        rng.random_range(0.05..0.8),
    )
}

/// Cobb-Douglas data with truncated-normal inefficiency drawn by rejection.
pub fn simulate(n: usize, p: &FrontierParams, seed: u64, capital_scale: f64) -> FrontierData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut ys = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    for _ in 0..n {
        let ln_l = 4.0 + z();
        let ln_k = 0.5 * ln_l + 4.0 + 0.7 * z() + capital_scale.ln();
        let ln_e = 0.5 * ln_l + 3.0 + 0.7 * z();
        let w = if p.sigma_v == 0.0 {
            0.0
        } else {
            loop {
                let w = p.mu_v + p.sigma_v * z();
                if w >= 0.0 {
                    break w;
                }
            }
        };
        let u = p.sigma_u * z();
        let x = [ln_k, ln_l, ln_e];
        let frontier = p.constant + (0..3).map(|j| p.elasticities[j] * x[j]).sum::<f64>();
        ys.push(frontier - w + u);
        xs.push(x);
    }
    FrontierData::new(ys, xs).unwrap()
}

pub fn truth() -> FrontierParams {
    FrontierParams {
        constant: 3.7,
        elasticities: [0.18, 0.68, 0.18],
        sigma_u: 0.05,
        mu_v: 0.2,
        sigma_v: 0.25,
    }
}
/// Least squares by the normal equations.
pub fn ols(data: &FrontierData) -> [f64; 4] {
    let n = data.len();
    let x = DMatrix::from_fn(n, 4, |i, j| if j == 0 { 1.0 } else { data.ln_inputs[i][j - 1] });
    let y = DVector::from_column_slice(&data.ln_output);
    let b = (x.transpose() * &x).cholesky().unwrap().solve(&(x.transpose() * y));
    [b[0], b[1], b[2], b[3]]
}
