//! Frontier likelihood, gradient and efficiency distances against
//! quadrature and finite differences, and fitted models against known
//! parameters and least squares.

mod common;

use ets_causal::frontier::{
    conditional_inefficiency, fit_all_industries, fit_frontier_data, log_density, loglikelihood,
    loglikelihood_gradient, returns_to_scale, FrontierData, FrontierOptions, FrontierParams,
};
use ets_causal::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::sfa::*;
use common::simpson;

#[test]
fn composed_density_integrates_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..10 {
        let (mu, su, sv) = random_scales(&mut rng);
        let lo = -(mu.max(0.0) + 12.0 * sv + 12.0 * su);
        let hi = 12.0 * su;
        let total = simpson(|e| log_density(e, mu, su, sv).exp(), lo, hi, 40_000);
        assert!((total - 1.0).abs() < 1e-6, "mu {mu} su {su} sv {sv}: {total}");
    }
}

#[test]
fn closed_form_density_matches_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..50 {
        let (mu, su, sv) = random_scales(&mut rng);
        let eps = rng.random_range(-1.5..0.5);
        let closed = log_density(eps, mu, su, sv).exp();
        let quad = convolution_density(eps, mu, su, sv);
        assert!(
            (closed - quad).abs() < 1e-8 * (1.0 + quad),
            "eps {eps}: {closed} vs {quad}"
        );
    }
}

#[test]
fn distances_match_posterior_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..100 {
        let (mu, su, sv) = random_scales(&mut rng);
        let eps = rng.random_range(-1.5..0.5);
        let closed = conditional_inefficiency(eps, mu, su, sv);
        let quad = posterior_mean(eps, mu, su, sv);
        assert!((closed - quad).abs() < 1e-6, "eps {eps}: {closed} vs {quad}");
    }
}

fn as_vec(p: &FrontierParams) -> [f64; 7] {
    [
        p.constant,
        p.elasticities[0],
        p.elasticities[1],
        p.elasticities[2],
        p.sigma_u,
        p.mu_v,
        p.sigma_v,
    ]
}

fn from_vec(v: &[f64; 7]) -> FrontierParams {
    FrontierParams {
        constant: v[0],
        elasticities: [v[1], v[2], v[3]],
        sigma_u: v[4],
        mu_v: v[5],
        sigma_v: v[6],
    }
}

#[test]
fn gradient_matches_central_differences() {
    let data = simulate(300, &truth(), 44, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    for _ in 0..50 {
        let base = as_vec(&truth());
        let point: [f64; 7] = std::array::from_fn(|j| {
            let jitter = rng.random_range(-0.3..0.3);
            if j == 4 || j == 6 {
                base[j] * (1.0 + jitter)
            } else {
                base[j] + 0.2 * jitter
            }
        });
        let g = loglikelihood_gradient(&from_vec(&point), &data).unwrap();
        for j in 0..7 {
            let h = 1e-6 * point[j].abs().max(1.0);
            let mut up = point;
            let mut down = point;
            up[j] += h;
            down[j] -= h;
            let fd = (loglikelihood(&from_vec(&up), &data).unwrap() - loglikelihood(&from_vec(&down), &data).unwrap())
                / (2.0 * h);
            let rel = (g[j] - fd).abs() / fd.abs().max(1.0);
            assert!(rel < 1e-5, "component {j}: {} vs {fd}", g[j]);
        }
    }
}

#[test]
fn vanishing_inefficiency_gives_normal_regression_likelihood() {
    let data = simulate(200, &truth(), 46, 1.0);
    let mut p = truth();
    p.sigma_v = 0.0;
    let normal: f64 = data
        .ln_output
        .iter()
        .zip(&data.ln_inputs)
        .map(|(y, x)| {
            let e = y - p.constant - (0..3).map(|j| p.elasticities[j] * x[j]).sum::<f64>();
            normal_pdf(e / p.sigma_u).ln() - p.sigma_u.ln()
        })
        .sum();
    assert!((loglikelihood(&p, &data).unwrap() - normal).abs() < 1e-9);
    // The limit is the regression likelihood when the truncation point
    // sits at or above the location; with mu_v > 0 the mass collapses on
    // mu_v instead.
    // The gap is first order in sigma_v.
    p.mu_v = 0.0;
    let gaps: Vec<f64> = [1e-6, 1e-8, 1e-10]
        .iter()
        .map(|&sv| {
            p.sigma_v = sv;
            (loglikelihood(&p, &data).unwrap() - normal).abs()
        })
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    assert!(gaps[2] < 1e-5, "{gaps:?}");
}

#[test]
fn known_parameters_are_recovered() {
    let p = truth();
    let data = simulate(4000, &p, 47, 1.0);
    let m = fit_frontier_data(&data, 1, &FrontierOptions::default()).unwrap();
    assert!(m.converged && !m.boundary);
    for j in 0..3 {
        assert!((m.params.elasticities[j] - p.elasticities[j]).abs() < 0.02);
    }
    assert!((m.params.sigma_v - p.sigma_v).abs() < 0.1);
}

#[test]
fn no_inefficiency_data_gives_least_squares_elasticities() {
    let mut p = truth();
    p.sigma_v = 0.0;
    let mut boundary_seen = false;
    for seed in 0..6 {
        let data = simulate(1000, &p, 100 + seed, 1.0);
        let m = fit_frontier_data(&data, 1, &FrontierOptions::default()).unwrap();
        boundary_seen |= m.boundary;
        let b = ols(&data);
        for j in 0..3 {
            assert!(
                (m.params.elasticities[j] - b[j + 1]).abs() < 1e-3,
                "seed {seed} input {j}"
            );
        }
        if m.boundary {
            assert!((m.params.constant - b[0]).abs() < 1e-9);
            assert_eq!(m.params.sigma_v, 0.0);
        }
    }
    assert!(boundary_seen, "no seed produced wrong-skew residuals");
}

#[test]
fn optimiser_never_lowers_the_likelihood() {
    for seed in 0..4 {
        let data = simulate(800, &truth(), 200 + seed, 1.0);
        let m = fit_frontier_data(&data, 1, &FrontierOptions::default()).unwrap();
        assert!(m.trace.len() > 1);
        for w in m.trace.windows(2) {
            assert!(w[1] >= w[0], "seed {seed}: {} then {}", w[0], w[1]);
        }
    }
}

#[test]
fn shifting_log_output_moves_only_the_constant() {
    let data = simulate(1500, &truth(), 48, 1.0);
    let mut shifted = data.clone();
    for y in &mut shifted.ln_output {
        *y += 2.5;
    }
    let opts = FrontierOptions::default();
    let a = fit_frontier_data(&data, 1, &opts).unwrap();
    let b = fit_frontier_data(&shifted, 1, &opts).unwrap();
    assert!((b.params.constant - a.params.constant - 2.5).abs() < 1e-6);
    let dist = |m: &ets_causal::frontier::FrontierModel, d: &FrontierData| -> Vec<f64> {
        let p = &m.params;
        d.ln_output
            .iter()
            .zip(&d.ln_inputs)
            .map(|(y, x)| {
                let e = y - p.constant - (0..3).map(|j| p.elasticities[j] * x[j]).sum::<f64>();
                conditional_inefficiency(e, p.mu_v, p.sigma_u, p.sigma_v)
            })
            .collect()
    };
    for (x, y) in dist(&a, &data).iter().zip(dist(&b, &shifted)) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn rescaled_capital_leaves_elasticities_unchanged_on_average() {
    let reps = 6;
    let mut mean = [[0.0; 3]; 2];
    for (slot, scale) in [1.0, 25.0].into_iter().enumerate() {
        let mut p = truth();
        // Keep output levels comparable: the frontier constant absorbs the scale.
        p.constant -= p.elasticities[0] * f64::ln(scale);
        for r in 0..reps {
            let data = simulate(2000, &p, 300 + 100 * slot as u64 + r, scale);
            let m = fit_frontier_data(&data, 1, &FrontierOptions::default()).unwrap();
            for j in 0..3 {
                mean[slot][j] += m.params.elasticities[j] / reps as f64;
            }
        }
    }
    for j in 0..3 {
        assert!((mean[0][j] - mean[1][j]).abs() < 0.01, "{mean:?}");
        assert!((mean[1][j] - truth().elasticities[j]).abs() < 0.01, "{mean:?}");
    }
}

#[test]
fn one_observation_is_too_few() {
    let data = FrontierData::new(vec![1.0], vec![[1.0, 2.0, 3.0]]).unwrap();
    assert!(matches!(
        fit_frontier_data(&data, 1, &FrontierOptions::default()),
        Err(Error::TooFewObservations { found: 1, .. })
    ));
    let panel = common::panel(vec![common::record("A", 2003, true, 2.0)]);
    assert!(matches!(
        fit_all_industries(&panel, &FrontierOptions::default()),
        Err(Error::TooFewObservations { .. })
    ));
}

#[test]
fn returns_to_scale_anchors() {
    let rts = |e: [f64; 3]| {
        returns_to_scale(&FrontierParams {
            constant: 0.0,
            elasticities: e,
            sigma_u: 1.0,
            mu_v: 0.0,
            sigma_v: 1.0,
        })
    };
    let paper_industry = rts([0.178, 0.677, 0.183]);
    let low = rts([0.206, 0.612, 0.111]);
    let high = rts([0.223, 0.725, 0.257]);
    assert!((paper_industry - 1.038).abs() < 1e-12);
    assert!((low - 0.929).abs() < 1e-12);
    assert!((high - 1.205).abs() < 1e-12);
    assert_eq!(format!("{low:.2}"), "0.93");
    assert!((high - 1.20).abs() < 0.005 + 1e-12);
}

proptest! {
    #[test]
    fn distance_never_falls_as_the_residual_falls(
        mu in -0.5f64..0.5,
        su in 0.01f64..0.5,
        sv in 0.0f64..0.8,
        e1 in -2.0f64..1.0,
        gap in 0.0f64..1.0,
    ) {
        let hi = conditional_inefficiency(e1 - gap, mu, su, sv);
        let lo = conditional_inefficiency(e1, mu, su, sv);
        prop_assert!(hi >= lo - 1e-12);
        prop_assert!(lo >= 0.0);
    }
}
