//! Poisson-gamma synthesizer.
//!
//! Each group has `y_i | λ_i ~ Pois(n_i λ_i)` with `λ_i ~ Gam(a_i, b_i)`, so the
//! posterior is `Gam(y_i + a_i, n_i + b_i)` and an unconstrained release is
//! negative binomial. Releases are conditioned on `Σ z_i = z·`; for two groups
//! (a region against the rest) the conditional pmf is
//!
//! ```text
//! p(z | y) ∝ Γ(z_1+y_1+a_1)/z_1! · Γ(z_2+y_2+a_2)/z_2! · r_1^{z_1}
//! ```
//!
//! with normaliser `C(y, n, a, b, z·)` and `r_i = (b_(i)/n_(i) + 2) / (b_i/n_i + 2)`
//! comparing group `i` with its complement.

mod calibrate;
mod synth;

pub use calibrate::{
    calibrate_pg, calibrate_pg_with, penalty_state, solve_pg, target_rates, PenaltyState,
    PgCalibration, SolverOptions, TargetRule,
};
pub(crate) use calibrate::TARGET_FLOOR_EVENTS;
pub use synth::{pg_synthesize, sanitize_state_rates, sanitize_state_rates_with_floor};

use serde::{Deserialize, Serialize};

use crate::dirichlet::neighbor_indices;
use crate::error::{domain, usage, Result};
use crate::special::{ln_factorial, ln_gamma_unchecked, ln_rising, log_sum_exp};

/// Gamma posterior of a group's event rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgPosterior {
    pub shape: f64,
    pub rate: f64,
}

impl PgPosterior {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

fn check_hyper(a: f64, b: f64, n: f64) -> Result<()> {
    for (name, v) in [("a", a), ("b", b), ("n", n)] {
        if !(v > 0.0) || !v.is_finite() {
            return domain(format!("{name} must be positive and finite, got {v}"));
        }
    }
    Ok(())
}

/// `λ_i | y_i ~ Gam(y_i + a_i, n_i + b_i)`
pub fn pg_posterior(y: u64, a: f64, b: f64, n: f64) -> Result<PgPosterior> {
    check_hyper(a, b, n)?;
    Ok(PgPosterior {
        shape: y as f64 + a,
        rate: n + b,
    })
}

/// Negative binomial parameters `(r, p) = (y + a, n / (b + 2n))` of the
/// unconstrained posterior predictive. `p < 1/2` whenever `b > 0`.
pub fn pg_predictive_params(y: u64, a: f64, b: f64, n: f64) -> Result<(f64, f64)> {
    check_hyper(a, b, n)?;
    Ok((y as f64 + a, n / (b + 2.0 * n)))
}

/// `r_i(n, b) = (b_(i)/n_(i) + 2) / (b_i/n_i + 2)` where `(i)` aggregates every
/// other group by summing populations and prior rates.
pub fn r_ratio(i: usize, n: &[f64], b: &[f64]) -> Result<f64> {
    if n.len() != b.len() {
        return usage("n and b must have equal length");
    }
    if n.len() < 2 {
        return usage("r_ratio needs at least two groups");
    }
    if i >= n.len() {
        return usage(format!("group index {i} out of range for {} groups", n.len()));
    }
    let n_rest: f64 = n.iter().sum::<f64>() - n[i];
    let b_rest: f64 = b.iter().sum::<f64>() - b[i];
    Ok((b_rest / n_rest + 2.0) / (b[i] / n[i] + 2.0))
}

/// `ln[Γ(z+c_1)/(Γ(c_1) z!) · Γ(z·−z+c_2)/(Γ(c_2)(z·−z)!) · r_1^z]` for
/// `z = 0..=z·`, i.e. the summands of `C` with `Γ(c_1)Γ(c_2)` divided out.
fn kernel_terms(c: [f64; 2], r1: f64, z_total: u64) -> Vec<f64> {
    let ln_r = r1.ln();
    (0..=z_total)
        .map(|z| {
            let w = z_total - z;
            let power = if z == 0 { 0.0 } else { z as f64 * ln_r };
            ln_rising(c[0], z) - ln_factorial(z) + ln_rising(c[1], w) - ln_factorial(w) + power
        })
        .collect()
}

fn shapes(y: [u64; 2], a: [f64; 2]) -> [f64; 2] {
    [y[0] as f64 + a[0], y[1] as f64 + a[1]]
}

/// `ln C(y, n, a, b, z·)` with `r_1` taken from `n` and `b`.
pub fn log_c(y: [u64; 2], n: [f64; 2], a: [f64; 2], b: [f64; 2], z_total: u64) -> Result<f64> {
    for i in 0..2 {
        check_hyper(a[i], b[i], n[i])?;
    }
    let r1 = r_ratio(0, &n, &b)?;
    log_c_with_ratio(y, a, r1, z_total)
}

/// `ln C` given the ratio `r_1` directly.
pub fn log_c_with_ratio(y: [u64; 2], a: [f64; 2], r1: f64, z_total: u64) -> Result<f64> {
    if !(r1 >= 0.0) || !r1.is_finite() {
        return domain(format!("r_1 must be finite and non-negative, got {r1}"));
    }
    if a.iter().any(|v| !(*v > 0.0)) {
        return domain("a must be positive");
    }
    let c = shapes(y, a);
    let offset = ln_gamma_unchecked(c[0]) + ln_gamma_unchecked(c[1]);
    Ok(offset + log_sum_exp(&kernel_terms(c, r1, z_total)))
}

/// Log of the two-group conditional pmf of `z_1` given `z_1 + z_2 = z·`.
pub fn pg_conditional_log_pmf_2(
    z1: u64,
    y: [u64; 2],
    a: [f64; 2],
    b: [f64; 2],
    n: [f64; 2],
    z_total: u64,
) -> Result<f64> {
    if z1 > z_total {
        return domain(format!("z1 = {z1} exceeds z_total = {z_total}"));
    }
    for i in 0..2 {
        check_hyper(a[i], b[i], n[i])?;
    }
    let r1 = r_ratio(0, &n, &b)?;
    let terms = kernel_terms(shapes(y, a), r1, z_total);
    Ok(terms[z1 as usize] - log_sum_exp(&terms))
}

/// The whole conditional pmf over `z_1 = 0..=z·`.
pub fn pg_conditional_pmf_2(
    y: [u64; 2],
    a: [f64; 2],
    b: [f64; 2],
    n: [f64; 2],
    z_total: u64,
) -> Result<Vec<f64>> {
    for i in 0..2 {
        check_hyper(a[i], b[i], n[i])?;
    }
    let r1 = r_ratio(0, &n, &b)?;
    let terms = kernel_terms(shapes(y, a), r1, z_total);
    let norm = log_sum_exp(&terms);
    Ok(terms.iter().map(|t| (t - norm).exp()).collect())
}

/// `ln p(z | y) − ln p(z | x)` through the normaliser ratio and the collapsed
/// gamma factors, `ln C(x)/C(y) + ln(z_i+y_i+a_i−1) − ln(z_j+y_j+a_j)` where
/// `x_i = y_i − 1` and `x_j = y_j + 1`.
pub fn pg_log_ratio_2(
    z1: u64,
    y: [u64; 2],
    x: [u64; 2],
    a: [f64; 2],
    b: [f64; 2],
    n: [f64; 2],
    z_total: u64,
) -> Result<f64> {
    if z1 > z_total {
        return domain(format!("z1 = {z1} exceeds z_total = {z_total}"));
    }
    if y[0] + y[1] != x[0] + x[1] {
        return usage("x and y must have equal totals");
    }
    let (i, j) = neighbor_indices(&y, &x)?;
    for k in 0..2 {
        check_hyper(a[k], b[k], n[k])?;
    }
    let r1 = r_ratio(0, &n, &b)?;
    let cy = shapes(y, a);
    let cx = shapes(x, a);
    // ln C(x) - ln C(y): the Γ(c) offsets differ by one step in each group
    let offset = -(cy[i] - 1.0).ln() + cy[j].ln();
    let log_c_ratio =
        offset + log_sum_exp(&kernel_terms(cx, r1, z_total)) - log_sum_exp(&kernel_terms(cy, r1, z_total));
    let z = [z1, z_total - z1];
    Ok(log_c_ratio + (z[i] as f64 + cy[i] - 1.0).ln() - (z[j] as f64 + cy[j]).ln())
}

/// Upper bound on `|ln C(x)/C(y)|` for `x_i = y_i − 1`, `x_{i'} = y_{i'} + 1`.
///
/// The pair is passed in `(i, i')` order and must satisfy
/// `a_i + y_i < a_{i'} + y_{i'}` and `a_i + y_i > 1`; `r_i` is the ratio of
/// the group losing the event.
pub fn theorem1_bound(y: [u64; 2], a: [f64; 2], r_i: f64, z_total: u64) -> Result<f64> {
    let (lo, hi) = (a[0] + y[0] as f64, a[1] + y[1] as f64);
    if !(lo < hi) {
        return usage(format!(
            "bound needs a_i + y_i < a_i' + y_i', got {lo} and {hi}"
        ));
    }
    if !(lo > 1.0) {
        return usage(format!("bound needs a_i + y_i > 1, got {lo}"));
    }
    if !(r_i > 0.0) || !r_i.is_finite() {
        return domain(format!("r_i must be positive, got {r_i}"));
    }
    let push = z_total as f64 * (1.0 - r_i).max(0.0);
    Ok(((push + hi) / (lo - 1.0)).ln().abs())
}

/// Penalty `ν_i = (z·⌈1−r_i⌉⁺ + a_(i) + y· − 1) / (a_(i) + y· − 1)`.
pub fn nu_penalty(a_complement: f64, y_total: u64, z_total: u64, r_i: f64) -> Result<f64> {
    let base = a_complement + y_total as f64 - 1.0;
    if !(base > 0.0) {
        return domain(format!("a_(i) + y· − 1 must be positive, got {base}"));
    }
    Ok((z_total as f64 * (1.0 - r_i).max(0.0) + base) / base)
}

/// Approximate `E[z_i | y] ≈ n_i (y_i + a_i) / (n_i + b_i)`, valid when
/// `z· = y·` and `Σ n_j λ_j ≈ y·`.
pub fn pg_expected_counts(y: &[u64], a: &[f64], b: &[f64], n: &[f64]) -> Result<Vec<f64>> {
    if y.len() != a.len() || a.len() != b.len() || b.len() != n.len() {
        return usage("y, a, b and n must have equal length");
    }
    Ok(y.iter()
        .zip(a)
        .zip(b.iter().zip(n))
        .map(|((&y, &a), (&b, &n))| n * (y as f64 + a) / (n + b))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn posterior_substitution() {
        assert_eq!(
            pg_posterior(0, 1.0, 1.0, 1.0).unwrap(),
            PgPosterior { shape: 1.0, rate: 2.0 }
        );
        assert_eq!(
            pg_posterior(3, 2.0, 5.0, 10.0).unwrap(),
            PgPosterior { shape: 5.0, rate: 15.0 }
        );
        assert!(pg_posterior(1, 0.0, 1.0, 1.0).is_err());
        assert!(pg_posterior(1, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn predictive_params() {
        for n in [0.5, 1.0, 7.0] {
            let (r, p) = pg_predictive_params(0, 1.0, n, n).unwrap();
            assert_eq!(r, 1.0);
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let (_, p) = pg_predictive_params(2, 1.0, 1e-12, 1.0).unwrap();
        assert!(p < 0.5 && (p - 0.5).abs() < 1e-11);
    }

    #[test]
    fn r_ratio_values() {
        assert!((r_ratio(0, &[1.0, 1.0], &[2.0, 4.0]).unwrap() - 1.5).abs() < 1e-15);
        assert!((r_ratio(0, &[1.0, 1.0], &[4.0, 2.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let n = [3.0, 5.0, 9.0];
        let b: Vec<f64> = n.iter().map(|v| 0.4 * v).collect();
        for i in 0..3 {
            assert!((r_ratio(i, &n, &b).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!(r_ratio(3, &n, &b).is_err());
    }

    #[test]
    fn log_c_small_cases() {
        let v = log_c_with_ratio([2, 1], [1.5, 0.5], 0.7, 0).unwrap();
        let want = ln_gamma_unchecked(3.5) + ln_gamma_unchecked(1.5);
        assert!((v - want).abs() < 1e-13);
        let v = log_c_with_ratio([0, 0], [1.0, 1.0], 1.0, 3).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-14);
        // r_1 = 0 keeps only the z = 0 term
        let v = log_c_with_ratio([1, 2], [1.0, 1.0], 0.0, 3).unwrap();
        let want = ln_gamma_unchecked(2.0) + ln_gamma_unchecked(6.0) - ln_factorial(3);
        assert!((v - want).abs() < 1e-13);
    }

    #[test]
    fn log_c_large_total_is_finite() {
        let v = log_c_with_ratio([40_000, 60_000], [3.5, 2.0], 0.8, 100_000).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn conditional_pmf_symmetric_and_normalised() {
        let one = [1.0, 1.0];
        let pmf: Vec<f64> = (0..=2)
            .map(|z| pg_conditional_log_pmf_2(z, [1, 1], one, one, one, 2).unwrap().exp())
            .collect();
        assert!((pmf[0] - pmf[2]).abs() < 1e-15);
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // r_1 = 1 so the terms Γ(z+2)/z! · Γ(4-z)/(2-z)! are 3, 4, 3
        assert!((pmf[0] - 0.3).abs() < 1e-14);
        assert!((pmf[1] - 0.4).abs() < 1e-14);
        assert!(pg_conditional_log_pmf_2(3, [1, 1], one, one, one, 2).is_err());
    }

    #[test]
    fn ratio_routes_agree() {
        let (a, b, n) = ([1.3, 2.2], [0.7, 4.0], [1.0, 3.0]);
        let y = [2, 3];
        for x in [[1, 4], [3, 2]] {
            for z1 in 0..=5 {
                let direct = pg_conditional_log_pmf_2(z1, y, a, b, n, 5).unwrap()
                    - pg_conditional_log_pmf_2(z1, x, a, b, n, 5).unwrap();
                let fast = pg_log_ratio_2(z1, y, x, a, b, n, 5).unwrap();
                assert!((direct - fast).abs() < 1e-12, "{x:?} {z1}: {direct} vs {fast}");
            }
        }
    }

    #[test]
    fn bound_substitution() {
        let b = theorem1_bound([1, 3], [1.0, 1.0], 1.0, 4).unwrap();
        assert!((b - 4f64.ln()).abs() < 1e-15);
        let b = theorem1_bound([1, 3], [1.0, 1.0], 0.5, 4).unwrap();
        assert!((b - 6f64.ln()).abs() < 1e-15);
        assert!(theorem1_bound([3, 1], [1.0, 1.0], 1.0, 4).is_err());
        assert!(theorem1_bound([2, 2], [1.0, 1.0], 1.0, 4).is_err());
        assert!(theorem1_bound([0, 3], [1.0, 1.0], 1.0, 3).is_err());
    }

    #[test]
    fn nu_values() {
        assert_eq!(nu_penalty(3.0, 10, 10, 1.0).unwrap(), 1.0);
        assert_eq!(nu_penalty(3.0, 10, 10, 1.7).unwrap(), 1.0);
        assert!((nu_penalty(1.0, 10, 10, 0.0).unwrap() - 2.0).abs() < 1e-15);
        let big = nu_penalty(1e12, 10, 10, 0.2).unwrap();
        assert!(big > 1.0 && big - 1.0 < 1e-10);
        assert!(nu_penalty(0.0, 1, 1, 0.5).is_err());
    }

    #[test]
    fn expected_counts_limits() {
        let e = pg_expected_counts(&[0], &[1.0], &[1.0], &[1.0]).unwrap();
        assert!((e[0] - 0.5).abs() < 1e-15);
        let e = pg_expected_counts(&[3, 9], &[1e12, 1e12], &[1e12 / 2e-3, 1e12 / 5e-3], &[100.0, 1000.0]).unwrap();
        assert!((e[0] - 0.2).abs() < 1e-6 && (e[1] - 5.0).abs() < 1e-6);
        let e = pg_expected_counts(&[3, 9], &[1e-12; 2], &[1e-12; 2], &[100.0, 1000.0]).unwrap();
        assert!((e[0] - 3.0).abs() < 1e-9 && (e[1] - 9.0).abs() < 1e-9);
    }
}
