//! Log-space special functions used by every synthesizer.

use std::f64::consts::PI;

use crate::error::{domain, Result};

// Lanczos approximation with g = 10.900511 and 11 terms (Pugh 2004); relative
// error below 1e-15 on x >= 0.5.
const LANCZOS_G: f64 = 10.900511;
#[allow(clippy::excessive_precision)]
const LANCZOS_COEFFS: [f64; 11] = [
    2.48574089138753565546e-5,
    1.05142378581721974210,
    -3.45687097222016235469,
    4.51227709466894823700,
    -2.98285225323576655721,
    1.05639711577126713077,
    -1.95428773191645869583e-1,
    1.70970543404441224307e-2,
    -5.71926117404305781283e-4,
    4.63399473359905636708e-6,
    -2.71994908488607703910e-9,
];
// ln(2 * sqrt(e / pi))
const LN_2_SQRT_E_OVER_PI: f64 = 0.620_782_237_635_245_2;

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return domain(format!("ln_gamma requires a finite positive argument, got {x}"));
    }
    Ok(ln_gamma_unchecked(x))
}

pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        return (PI / (PI * x).sin()).ln() - ln_gamma_unchecked(1.0 - x);
    }
    let series = LANCZOS_COEFFS
        .iter()
        .enumerate()
        .skip(1)
        .fold(LANCZOS_COEFFS[0], |acc, (k, c)| acc + c / (x + k as f64 - 1.0));
    series.ln() + LN_2_SQRT_E_OVER_PI + (x - 0.5) * ((x - 0.5 + LANCZOS_G) / std::f64::consts::E).ln()
}

/// `ln Γ(x + k) - ln Γ(x)`, the log of the rising factorial `x (x+1) ... (x+k-1)`.
///
/// Short runs are summed term by term, which keeps full precision when `x` is
/// large and the two log-gamma values would nearly cancel.
pub fn ln_rising(x: f64, k: u64) -> f64 {
    if k <= 16 {
        (0..k).map(|j| (x + j as f64).ln()).sum()
    } else {
        ln_gamma_unchecked(x + k as f64) - ln_gamma_unchecked(x)
    }
}

/// `ln k!`
pub fn ln_factorial(k: u64) -> f64 {
    if k < 2 {
        0.0
    } else {
        ln_gamma_unchecked(k as f64 + 1.0)
    }
}

/// `ln Σ exp(v)`; returns negative infinity for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log pmf of the negative binomial counting failures before the `r`-th
/// success, parameterised so that `p` is the per-trial probability attached
/// to the count:
///
/// ```text
/// ln[ Γ(z + r) / (z! Γ(r)) · p^z · (1 - p)^r ]
/// ```
pub fn log_pmf_negbin(z: u64, r: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("negative binomial probability must lie in (0, 1), got {p}"));
    }
    if !(r > 0.0) || !r.is_finite() {
        return domain(format!("negative binomial size must be positive, got {r}"));
    }
    Ok(ln_rising(r, z) - ln_factorial(z) + z as f64 * p.ln() + r * (-p).ln_1p())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Stirling series at a shifted argument, with the shift undone by the
    /// recurrence. Independent of the Lanczos path.
    fn ln_gamma_stirling(x: f64) -> f64 {
        let shift = 40usize;
        let w = x + shift as f64;
        let inv = 1.0 / w;
        let inv2 = inv * inv;
        // Bernoulli terms B_{2k} / (2k (2k-1) w^{2k-1})
        let series = inv
            * (1.0 / 12.0
                - inv2
                    * (1.0 / 360.0
                        - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0 - inv2 * (1.0 / 1188.0)))));
        let stirling = (w - 0.5) * w.ln() - w + 0.5 * (2.0 * PI).ln() + series;
        let correction: f64 = (0..shift).map(|k| (x + k as f64).ln()).sum();
        stirling - correction
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).unwrap().abs() < 1e-15);
        assert!(ln_gamma(2.0).unwrap().abs() < 1e-15);
        assert!((ln_gamma(5.0).unwrap() - 24f64.ln()).abs() < 1e-14);
        let half = ln_gamma(0.5).unwrap();
        assert!((half - 0.5 * PI.ln()).abs() < 1e-15);
        assert!((half - 0.572_364_942_924_700_1).abs() < 1e-15);
    }

    #[test]
    fn ln_gamma_matches_stirling_oracle() {
        let mut x = 0.5;
        while x < 2000.0 {
            let got = ln_gamma(x).unwrap();
            let want = ln_gamma_stirling(x);
            // relative error is meaningless near the roots at 1 and 2
            let scale = want.abs().max(1.0);
            assert!(
                (got - want).abs() / scale < 1e-13,
                "x = {x}: {got} vs {want}"
            );
            x = x * 1.07 + 0.013;
        }
    }

    #[test]
    fn ln_gamma_rejects_non_positive() {
        assert!(ln_gamma(0.0).is_err());
        assert!(ln_gamma(-1.5).is_err());
        assert!(ln_gamma(f64::NAN).is_err());
    }

    #[test]
    fn ln_rising_paths_agree() {
        for &x in &[0.3, 1.0, 7.5, 123.25] {
            for k in [0u64, 1, 5, 16, 17, 40] {
                let direct: f64 = (0..k).map(|j| (x + j as f64).ln()).sum();
                assert!((ln_rising(x, k) - direct).abs() < 1e-11 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn negbin_geometric_values() {
        let p = 1.0 / 3.0;
        assert!((log_pmf_negbin(0, 1.0, p).unwrap() - (2.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((log_pmf_negbin(1, 1.0, p).unwrap() - (2.0f64 / 9.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn negbin_sums_to_one() {
        // direct summation oracle; tail mass past 200 is ~ 0.4^200
        let total: f64 = (0..=200)
            .map(|z| log_pmf_negbin(z, 2.5, 0.4).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn negbin_rejects_bad_probability() {
        assert!(log_pmf_negbin(0, 1.0, 0.0).is_err());
        assert!(log_pmf_negbin(0, 1.0, 1.0).is_err());
        assert!(log_pmf_negbin(0, 0.0, 0.5).is_err());
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp(&[f64::NEG_INFINITY, 0.0])).abs() < 1e-15);
    }
}
