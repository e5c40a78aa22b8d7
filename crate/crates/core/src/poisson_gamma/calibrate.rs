//! Solving for the least informative gamma prior that meets a privacy budget.
//!
//! Every group needs `a_i ≥ z· / (e^ε/ν_i − 1)`, but `ν_i` depends on the
//! complement prior `a_(i)` and on `r`, which depends on `b = a / λ0`. The
//! coupled system is solved by damped simultaneous fixed-point sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{domain, usage, Error, Result};
use crate::model::{CountDataset, PriorSpec};

/// Where the prior mean rates `λ0_i = a_i / b_i` come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    /// Every group shrinks toward `y· / n·`.
    National,
    /// Each group shrinks toward its state's crude rate.
    StateAverage,
    /// Caller-supplied per-group rates.
    Custom(Vec<f64>),
}

/// Fraction of an event used as the floor for zero-count targets, so that
/// `b = a / λ0` stays finite.
pub(crate) const TARGET_FLOOR_EVENTS: f64 = 0.1;

/// Resolve a rule into one positive target rate per group.
pub fn target_rates(data: &CountDataset, rule: &TargetRule) -> Result<Vec<f64>> {
    match rule {
        TargetRule::National => {
            let pop = data.total_population();
            let rate = (data.total() as f64).max(TARGET_FLOOR_EVENTS) / pop;
            Ok(vec![rate; data.len()])
        }
        TargetRule::StateAverage => {
            let (names, index) = data.state_index();
            let mut events = vec![0.0; names.len()];
            let mut pops = vec![0.0; names.len()];
            for ((&s, &y), &n) in index.iter().zip(data.counts()).zip(data.populations()) {
                events[s] += y as f64;
                pops[s] += n;
            }
            Ok(index
                .iter()
                .map(|&s| events[s].max(TARGET_FLOOR_EVENTS) / pops[s])
                .collect())
        }
        TargetRule::Custom(rates) => {
            if rates.len() != data.len() {
                return usage(format!(
                    "{} target rates given for {} groups",
                    rates.len(),
                    data.len()
                ));
            }
            if let Some(r) = rates.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
                return domain(format!("target rates must be positive, got {r}"));
            }
            Ok(rates.clone())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_sweeps: usize,
    /// Stop once the largest relative change in any `a_i` falls below this.
    pub tolerance: f64,
    /// Weight on the new iterate; 1 is undamped.
    pub relaxation: f64,
    /// Penalty used for the starting point. Defaults to 2 when `e^ε > 2` and
    /// to 1 otherwise.
    pub initial_nu: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 200,
            tolerance: 1e-10,
            relaxation: 0.5,
            initial_nu: None,
        }
    }
}

/// `r`, its minimum, and the penalties `ν` implied by a prior vector `a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyState {
    pub r: Vec<f64>,
    pub r_min: f64,
    pub nu: Vec<f64>,
}

/// Evaluate `r_i`, `min r` and `ν_i` at `a`, with `b_i = a_i / λ0_i`.
///
/// Every `ν_i` uses `min_i r_i` so the certificate covers every pair.
pub fn penalty_state(
    a: &[f64],
    populations: &[f64],
    targets: &[f64],
    y_total: u64,
    z_total: u64,
) -> Result<PenaltyState> {
    let len = a.len();
    if populations.len() != len || targets.len() != len {
        return usage("a, populations and targets must have equal length");
    }
    if len < 2 {
        return usage("calibration needs at least two groups");
    }
    let b: Vec<f64> = a.iter().zip(targets).map(|(a, l)| a / l).collect();
    let a_sum: f64 = a.iter().sum();
    let b_sum: f64 = b.iter().sum();
    let n_sum: f64 = populations.iter().sum();
    let r: Vec<f64> = (0..len)
        .map(|i| {
            let rest = (b_sum - b[i]) / (n_sum - populations[i]);
            (rest + 2.0) / (b[i] / populations[i] + 2.0)
        })
        .collect();
    let r_min = r.iter().copied().fold(f64::INFINITY, f64::min);
    let nu = a
        .iter()
        .map(|&ai| super::nu_penalty(a_sum - ai, y_total, z_total, r_min))
        .collect::<Result<Vec<_>>>()?;
    Ok(PenaltyState { r, r_min, nu })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgCalibration {
    pub epsilon: f64,
    pub z_total: u64,
    pub y_total: u64,
    /// Solved minimum `a_i` per group.
    pub a_min: Vec<f64>,
    /// `b_i = a_i / λ0_i`.
    pub b: Vec<f64>,
    pub target_rates: Vec<f64>,
    pub nu: Vec<f64>,
    pub r: Vec<f64>,
    pub r_min: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl PgCalibration {
    pub fn prior(&self) -> PriorSpec {
        PriorSpec::PoissonGamma {
            a: self.a_min.clone(),
            b: self.b.clone(),
            target_rates: Some(self.target_rates.clone()),
        }
    }

    /// Each `a_i` rounded up to an integer, keeping the target rates.
    pub fn integer_a(&self) -> Vec<u64> {
        self.a_min.iter().map(|a| a.ceil().max(1.0) as u64).collect()
    }

    pub fn prior_rounded_up(&self) -> PriorSpec {
        let a: Vec<f64> = self.integer_a().into_iter().map(|a| a as f64).collect();
        let b = a.iter().zip(&self.target_rates).map(|(a, l)| a / l).collect();
        PriorSpec::PoissonGamma {
            a,
            b,
            target_rates: Some(self.target_rates.clone()),
        }
    }

    /// Largest relative gap between `a_i` and `z· / (e^ε/ν_i − 1)` re-evaluated
    /// at the returned prior.
    pub fn fixed_point_residual(&self, populations: &[f64]) -> Result<f64> {
        let state = penalty_state(
            &self.a_min,
            populations,
            &self.target_rates,
            self.y_total,
            self.z_total,
        )?;
        let e = self.epsilon.exp();
        Ok(self
            .a_min
            .iter()
            .zip(&state.nu)
            .map(|(a, nu)| {
                let want = self.z_total as f64 / (e / nu - 1.0);
                (a - want).abs() / want
            })
            .fold(0.0, f64::max))
    }
}

/// Calibrate a dataset's prior for budget `epsilon` with default solver options.
pub fn calibrate_pg(epsilon: f64, data: &CountDataset, rule: &TargetRule) -> Result<PgCalibration> {
    calibrate_pg_with(epsilon, data, rule, &SolverOptions::default())
}

pub fn calibrate_pg_with(
    epsilon: f64,
    data: &CountDataset,
    rule: &TargetRule,
    options: &SolverOptions,
) -> Result<PgCalibration> {
    let targets = target_rates(data, rule)?;
    solve_pg(
        epsilon,
        data.total(),
        data.total(),
        data.populations(),
        &targets,
        options,
    )
}

/// Core solver, independent of any particular dataset: only the totals,
/// populations and target rates enter the requirement.
pub fn solve_pg(
    epsilon: f64,
    y_total: u64,
    z_total: u64,
    populations: &[f64],
    targets: &[f64],
    options: &SolverOptions,
) -> Result<PgCalibration> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return domain(format!("epsilon must be positive and finite, got {epsilon}"));
    }
    if z_total == 0 || y_total == 0 {
        return domain("calibration needs at least one event");
    }
    if !(options.relaxation > 0.0 && options.relaxation <= 1.0) {
        return usage("relaxation must lie in (0, 1]");
    }
    let len = populations.len();
    let e = epsilon.exp();
    let z = z_total as f64;
    let nu0 = options
        .initial_nu
        .unwrap_or(if e > 2.0 { 2.0 } else { 1.0 });
    if nu0 >= e {
        return Err(Error::InfeasibleBudget {
            epsilon,
            nu: nu0,
            group: 0,
        });
    }
    let mut a = vec![z / (e / nu0 - 1.0); len];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_sweeps {
        iterations += 1;
        let state = penalty_state(&a, populations, targets, y_total, z_total)?;
        let mut change: f64 = 0.0;
        for (i, (ai, &nu)) in a.iter_mut().zip(&state.nu).enumerate() {
            if nu >= e {
                return Err(Error::InfeasibleBudget { epsilon, nu, group: i });
            }
            let target = z / (e / nu - 1.0);
            let next = *ai + options.relaxation * (target - *ai);
            change = change.max((next - *ai).abs() / next);
            *ai = next;
        }
        if change < options.tolerance {
            converged = true;
            break;
        }
    }
    let state = penalty_state(&a, populations, targets, y_total, z_total)?;
    let b = a.iter().zip(targets).map(|(a, l)| a / l).collect();
    Ok(PgCalibration {
        epsilon,
        z_total,
        y_total,
        a_min: a,
        b,
        target_rates: targets.to_vec(),
        nu: state.nu,
        r: state.r,
        r_min: state.r_min,
        iterations,
        converged,
    })
}
