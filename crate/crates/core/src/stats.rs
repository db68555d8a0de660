//! Normal-distribution helpers, nearest-rank quantiles and the two-sample
//! tests used by the balance diagnostics.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

pub const SQRT_2PI: f64 = 2.506_628_274_631_000_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument the tail ratios switch to the asymptotic series.
const TAIL_SWITCH: f64 = -35.0;

pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

pub fn norm_ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `Phi(-x) / phi(x)` for large positive `x`, as `S(x) / x`.
fn upper_mills_series(x: f64) -> f64 {
    let r = 1.0 / (x * x);
    let s = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r * (1.0 - 9.0 * r))));
    s / x
}

pub fn norm_ln_cdf(z: f64) -> f64 {
    if z >= TAIL_SWITCH {
        norm_cdf(z).ln()
    } else {
        norm_ln_pdf(z) + upper_mills_series(-z).ln()
    }
}

/// Inverse Mills ratio `phi(z) / Phi(z)`.
pub fn mills(z: f64) -> f64 {
    if z >= TAIL_SWITCH {
        norm_pdf(z) / norm_cdf(z)
    } else {
        1.0 / upper_mills_series(-z)
    }
}

/// `(ln Phi(z), phi(z)/Phi(z))` sharing one CDF evaluation.
pub fn ln_cdf_and_mills(z: f64) -> (f64, f64) {
    if z >= TAIL_SWITCH {
        let cdf = norm_cdf(z);
        (cdf.ln(), norm_pdf(z) / cdf)
    } else {
        let m = upper_mills_series(-z);
        (norm_ln_pdf(z) + m.ln(), 1.0 / m)
    }
}

/// `z + phi(z)/Phi(z)`, the mean of a unit normal truncated to `(-z, inf)`
/// shifted by `z`. Stays accurate deep in the left tail where the two terms
/// cancel.
pub fn z_plus_mills(z: f64) -> f64 {
    if z >= TAIL_SWITCH {
        z + mills(z)
    } else {
        let x = -z;
        let r = 1.0 / (x * x);
        // 1 - S(x) and S(x) from the asymptotic expansion.
        let one_minus_s = r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r * (1.0 - 9.0 * r))));
        let s = 1.0 - one_minus_s;
        x * one_minus_s / s
    }
}

pub fn norm_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Two-sided p-value of a standard-normal statistic.
pub fn two_sided_normal_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    (2.0 * norm_cdf(-z.abs())).min(1.0)
}

/// Nearest-rank quantile of an ascending slice: the value at rank
/// `ceil(p * n)` (1-based), rank 1 for `p = 0`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = ((p * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Median under the nearest-rank rule (lower middle for even counts).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(nearest_rank(&sorted_copy(values), 0.5))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with the `n - 1` denominator; zero for a single value.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Outcome of a (weighted) Welch two-sample test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchTest {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Moments of one weighted sample: weighted mean, the variance of that mean
/// and the Kish effective sample size.
struct WeightedMoments {
    mean: f64,
    var_of_mean: f64,
    n_eff: f64,
}

fn weighted_moments(values: &[f64], weights: &[f64]) -> WeightedMoments {
    let total: f64 = weights.iter().sum();
    let w: Vec<f64> = weights.iter().map(|x| x / total).collect();
    let mean: f64 = values.iter().zip(&w).map(|(v, w)| v * w).sum();
    let sum_sq: f64 = w.iter().map(|x| x * x).sum();
    let ss: f64 = values.iter().zip(&w).map(|(v, w)| w * (v - mean).powi(2)).sum();
    // Unbiased weighted variance; reduces to s^2 for equal weights.
    let var = if sum_sq < 1.0 { ss / (1.0 - sum_sq) } else { 0.0 };
    WeightedMoments {
        mean,
        var_of_mean: var * sum_sq,
        n_eff: 1.0 / sum_sq,
    }
}

/// Welch unequal-variance test between two weighted samples.
///
/// Each sample's mean is its weighted mean; the variance of that mean is
/// `s_w^2 * sum(w_norm^2)` and the Welch-Satterthwaite degrees of freedom use
/// the Kish effective sample sizes. With unit weights this is the textbook
/// Welch test. The statistic is `mean_a - mean_b` over its standard error.
pub fn welch_weighted(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::TooFewObservations {
            needed: 2,
            found: a.len().min(b.len()),
        });
    }
    if a.len() != wa.len() || b.len() != wb.len() {
        return Err(Error::InvalidArgument("weights must align with values".into()));
    }
    if wa.iter().chain(wb).any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidArgument("weights must be nonnegative".into()));
    }
    let ma = weighted_moments(a, wa);
    let mb = weighted_moments(b, wb);
    let diff = ma.mean - mb.mean;
    let var = ma.var_of_mean + mb.var_of_mean;
    if var <= 0.0 {
        let p = if diff == 0.0 { 1.0 } else { 0.0 };
        let statistic = if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        };
        return Ok(WelchTest {
            statistic,
            df: f64::NAN,
            p_value: p,
        });
    }
    let t = diff / var.sqrt();
    let denom = ma.var_of_mean.powi(2) / (ma.n_eff - 1.0).max(f64::MIN_POSITIVE)
        + mb.var_of_mean.powi(2) / (mb.n_eff - 1.0).max(f64::MIN_POSITIVE);
    let df = var * var / denom;
    let p_value = if t == 0.0 {
        1.0
    } else {
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(WelchTest {
        statistic: t,
        df,
        p_value,
    })
}

/// Unweighted Welch test.
pub fn welch(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    welch_weighted(a, &vec![1.0; a.len()], b, &vec![1.0; b.len()])
}
