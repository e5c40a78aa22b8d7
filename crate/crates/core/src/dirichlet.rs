//! Multinomial-Dirichlet synthesizer.
//!
//! Counts are modelled as `y | θ ~ Mult(y·, θ)` with `θ ~ Dir(α)`; a release is
//! drawn from the posterior predictive with the total held at `z· = y·`. The
//! mechanism is ε-differentially private when `min α_i ≥ z· / (e^ε − 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, usage, Result};
use crate::model::{CountDataset, Method, PriorSpec, Provenance, Strategy, SyntheticDataset};
use crate::sampling::{sample_dirichlet, sample_multinomial, RngStream};
use crate::special::{ln_factorial, ln_rising};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdCalibration {
    pub epsilon: f64,
    pub z_total: u64,
    /// Smallest concentration every `α_i` must reach.
    pub alpha_min: f64,
}

impl MdCalibration {
    /// Uniform prior at the minimum concentration.
    pub fn uniform_prior(&self, groups: usize) -> PriorSpec {
        PriorSpec::MultinomialDirichlet {
            alpha: vec![self.alpha_min; groups],
        }
    }
}

/// Minimum concentration `z· / (e^ε − 1)` that makes the release ε-DP.
pub fn calibrate_md(epsilon: f64, z_total: u64) -> Result<MdCalibration> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return domain(format!("epsilon must be positive and finite, got {epsilon}"));
    }
    if z_total == 0 {
        return domain("z_total must be at least 1");
    }
    Ok(MdCalibration {
        epsilon,
        z_total,
        alpha_min: z_total as f64 / epsilon.exp_m1(),
    })
}

/// Draw `θ* ~ Dir(y + α)` then `z ~ Mult(y·, θ*)`.
pub fn md_synthesize(
    data: &CountDataset,
    prior: &PriorSpec,
    rng: &mut RngStream,
) -> Result<SyntheticDataset> {
    let alpha = match prior {
        PriorSpec::MultinomialDirichlet { alpha } => alpha,
        PriorSpec::PoissonGamma { .. } => {
            return usage("md_synthesize needs a multinomial-Dirichlet prior");
        }
    };
    if alpha.len() != data.len() {
        return usage(format!(
            "prior has {} groups but the dataset has {}",
            alpha.len(),
            data.len()
        ));
    }
    let posterior: Vec<f64> = data
        .counts()
        .iter()
        .zip(alpha)
        .map(|(&y, &a)| y as f64 + a)
        .collect();
    let theta = sample_dirichlet(&posterior, rng)?;
    let counts = sample_multinomial(data.total(), &theta, rng)?;
    Ok(SyntheticDataset::new(
        counts,
        Provenance {
            method: Method::MultinomialDirichlet,
            epsilon: None,
            seed: rng.seed(),
            stream_id: rng.stream_id(),
            strategy: Strategy::DirichletThenMultinomial,
        },
    ))
}

fn check_lengths(z: &[u64], y: &[u64], alpha: &[f64]) -> Result<()> {
    if z.len() != y.len() || y.len() != alpha.len() {
        return usage("z, y and alpha must have equal length");
    }
    if z.is_empty() {
        return usage("vectors must not be empty");
    }
    Ok(())
}

/// Log of the collapsed posterior predictive pmf
///
/// ```text
/// z·!/∏z_i! · Γ(Σ(y+α))/∏Γ(y_i+α_i) · ∏Γ(z_i+y_i+α_i)/Γ(Σ(z+y+α))
/// ```
pub fn md_log_pmf(z: &[u64], y: &[u64], alpha: &[f64]) -> Result<f64> {
    check_lengths(z, y, alpha)?;
    let z_total: u64 = z.iter().sum();
    let shape_total: f64 = y.iter().zip(alpha).map(|(&y, &a)| y as f64 + a).sum();
    let cells: f64 = z
        .iter()
        .zip(y)
        .zip(alpha)
        .map(|((&z, &y), &a)| ln_rising(y as f64 + a, z) - ln_factorial(z))
        .sum();
    Ok(ln_factorial(z_total) + cells - ln_rising(shape_total, z_total))
}

/// Which groups lose and gain an event going from `y` to `x`.
pub(crate) fn neighbor_indices(y: &[u64], x: &[u64]) -> Result<(usize, usize)> {
    if y.len() != x.len() {
        return usage("y and x must have equal length");
    }
    let mut lose = None;
    let mut gain = None;
    for (i, (&yi, &xi)) in y.iter().zip(x).enumerate() {
        if xi == yi {
            continue;
        }
        if xi + 1 == yi && lose.is_none() {
            lose = Some(i);
        } else if yi + 1 == xi && gain.is_none() {
            gain = Some(i);
        } else {
            return usage("x and y are not neighbours (one event moved between two groups)");
        }
    }
    match (lose, gain) {
        (Some(i), Some(j)) => Ok((i, j)),
        _ => usage("x and y are not neighbours (one event moved between two groups)"),
    }
}

/// `ln p(z | y, α) − ln p(z | x, α)` for neighbouring `x, y`.
///
/// With `x_i = y_i − 1` and `x_j = y_j + 1` the gamma ratios collapse to four
/// logarithms:
///
/// ```text
/// ln(z_i + α_i + y_i − 1) − ln(α_i + y_i − 1) + ln(α_j + y_j) − ln(z_j + α_j + y_j)
/// ```
pub fn md_log_ratio(z: &[u64], y: &[u64], x: &[u64], alpha: &[f64]) -> Result<f64> {
    check_lengths(z, y, alpha)?;
    if y.iter().sum::<u64>() != x.iter().sum::<u64>() {
        return usage("x and y must have equal totals");
    }
    let (i, j) = neighbor_indices(y, x)?;
    let base_i = alpha[i] + y[i] as f64 - 1.0;
    let base_j = alpha[j] + y[j] as f64;
    Ok((z[i] as f64 + base_i).ln() - base_i.ln() + base_j.ln() - (z[j] as f64 + base_j).ln())
}

/// `E[z_i | y, α] = (y_i + α_i) / Σ(y_j + α_j) · z·`
pub fn md_expected_counts(y: &[u64], alpha: &[f64], z_total: u64) -> Result<Vec<f64>> {
    if y.len() != alpha.len() {
        return usage("y and alpha must have equal length");
    }
    let shapes: Vec<f64> = y.iter().zip(alpha).map(|(&y, &a)| y as f64 + a).collect();
    let total: f64 = shapes.iter().sum();
    Ok(shapes.iter().map(|s| s / total * z_total as f64).collect())
}
