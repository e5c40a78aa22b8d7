//! Privacy audits by exhaustive enumeration, plus a check of the normaliser
//! bound against exact values.
//!
//! All audits are for two groups with `z· = y·`. A neighbour `x` of `y` moves
//! one event between the groups.

use std::cmp::Ordering;
use std::collections::HashMap;

use num_rational::BigRational;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dirichlet::{md_log_pmf, md_log_ratio};
use crate::error::{domain, usage, Result};
use crate::exact::{exact_c, exact_c_terms, ln_rational, rational_from_f64};
use crate::model::{CountDataset, PriorSpec, Strategy};
use crate::poisson_gamma::{
    log_c_with_ratio, pg_conditional_log_pmf_2, pg_conditional_pmf_2, pg_log_ratio_2, pg_synthesize,
    r_ratio, theorem1_bound,
};
use crate::sampling::RngStream;

/// Slack allowed above ε before an audit fails.
pub const AUDIT_TOLERANCE: f64 = 1e-9;
/// Largest `y·` audited exhaustively.
pub const ENUMERATION_CAP: u64 = 12;
/// Largest allowed disagreement between the two ways of computing a log ratio.
pub const ROUTE_TOLERANCE: f64 = 1e-10;
/// Smallest slack accepted as dominance in the bound sweep.
pub const SLACK_TOLERANCE: f64 = -1e-12;

/// A two-group synthesizer with fixed hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "snake_case")]
pub enum Mechanism {
    Md { alpha: [f64; 2] },
    Pg2 { a: [f64; 2], b: [f64; 2], n: [f64; 2] },
    /// Poisson-gamma with integer `a`, evaluated in exact rationals. `r_1` is
    /// the exact value of the float computed from `n` and `b`.
    Pg2Exact { a: [u64; 2], b: [f64; 2], n: [f64; 2] },
}

impl Mechanism {
    /// Two-group mechanism from a prior and the group populations.
    pub fn from_prior(prior: &PriorSpec, populations: &[f64]) -> Result<Self> {
        if prior.len() != 2 || populations.len() != 2 {
            return usage("audits need exactly two groups");
        }
        Ok(match prior {
            PriorSpec::MultinomialDirichlet { alpha } => Self::Md {
                alpha: [alpha[0], alpha[1]],
            },
            PriorSpec::PoissonGamma { a, b, .. } => Self::Pg2 {
                a: [a[0], a[1]],
                b: [b[0], b[1]],
                n: [populations[0], populations[1]],
            },
        })
    }

    /// Exact variant of a Poisson-gamma mechanism; every `a_i` must be a
    /// positive integer.
    pub fn exact(&self) -> Result<Self> {
        match self {
            Self::Pg2 { a, b, n } => {
                if a.iter().any(|v| v.fract() != 0.0 || *v < 1.0 || *v > u64::MAX as f64) {
                    return domain(format!("exact audit needs integer a >= 1, got {a:?}"));
                }
                Ok(Self::Pg2Exact {
                    a: [a[0] as u64, a[1] as u64],
                    b: *b,
                    n: *n,
                })
            }
            Self::Pg2Exact { .. } => Ok(self.clone()),
            Self::Md { .. } => usage("exact audits are only implemented for Poisson-gamma"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub y: [u64; 2],
    pub x: [u64; 2],
    pub z: [u64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub epsilon_target: f64,
    pub max_abs_log_ratio: f64,
    pub witness: Witness,
    pub satisfied: bool,
    pub instances_checked: u64,
    /// Largest gap between the pmf-difference and the cancelled-gamma routes.
    pub route_discrepancy: f64,
}

impl AuditReport {
    pub fn routes_agree(&self) -> bool {
        self.route_discrepancy <= ROUTE_TOLERANCE
    }
}

/// All ordered neighbour pairs `(y, x)` with `y_1 + y_2 = y_total`, in both
/// transposition directions.
pub fn enumerate_neighbors(y_total: u64) -> Vec<([u64; 2], [u64; 2])> {
    let mut pairs = Vec::new();
    for y1 in (0..=y_total).rev() {
        let y = [y1, y_total - y1];
        if y[0] > 0 {
            pairs.push((y, [y[0] - 1, y[1] + 1]));
        }
        if y[1] > 0 {
            pairs.push((y, [y[0] + 1, y[1] - 1]));
        }
    }
    pairs
}

// Exact normalisers and summands keyed by y_1, filled once per audit.
struct ExactTable {
    terms: HashMap<u64, (Vec<BigRational>, BigRational)>,
}

impl ExactTable {
    fn build(a: [u64; 2], r1: &BigRational, y_total: u64, z_total: u64) -> Result<Self> {
        let terms = (0..=y_total)
            .into_par_iter()
            .map(|y1| {
                let t = exact_c_terms([y1, y_total - y1], a, r1, z_total)?;
                let c = t.iter().fold(BigRational::from_integer(0.into()), |acc, v| acc + v);
                Ok((y1, (t, c)))
            })
            .collect::<Result<HashMap<_, _>>>()?;
        Ok(Self { terms })
    }

    fn log_ratio(&self, y: [u64; 2], x: [u64; 2], z1: u64) -> Result<f64> {
        let (ty, cy) = &self.terms[&y[0]];
        let (tx, cx) = &self.terms[&x[0]];
        let z = z1 as usize;
        ln_rational(&(&ty[z] * cx / (&tx[z] * cy)))
    }
}

struct Evaluator<'a> {
    mech: &'a Mechanism,
    z_total: u64,
    exact: Option<ExactTable>,
}

impl<'a> Evaluator<'a> {
    fn new(mech: &'a Mechanism, y_total: u64, z_total: u64) -> Result<Self> {
        let exact = match mech {
            Mechanism::Pg2Exact { a, b, n } => {
                let r1 = rational_from_f64(r_ratio(0, n, b)?)?;
                Some(ExactTable::build(*a, &r1, y_total, z_total)?)
            }
            _ => None,
        };
        Ok(Self { mech, z_total, exact })
    }

    /// `(reported, cross_check)` values of `ln p(z|y) − ln p(z|x)`.
    fn eval(&self, y: [u64; 2], x: [u64; 2], z1: u64) -> Result<(f64, f64)> {
        let zt = self.z_total;
        let z = [z1, zt - z1];
        match self.mech {
            Mechanism::Md { alpha } => {
                let fast = md_log_ratio(&z, &y, &x, alpha)?;
                let slow = md_log_pmf(&z, &y, alpha)? - md_log_pmf(&z, &x, alpha)?;
                Ok((fast, slow))
            }
            Mechanism::Pg2 { a, b, n } => {
                let diff = pg_conditional_log_pmf_2(z1, y, *a, *b, *n, zt)?
                    - pg_conditional_log_pmf_2(z1, x, *a, *b, *n, zt)?;
                let fast = pg_log_ratio_2(z1, y, x, *a, *b, *n, zt)?;
                Ok((diff, fast))
            }
            Mechanism::Pg2Exact { a, b, n } => {
                let table = self.exact.as_ref().expect("exact table built in new");
                let exact = table.log_ratio(y, x, z1)?;
                let af = [a[0] as f64, a[1] as f64];
                let float = pg_log_ratio_2(z1, y, x, af, *b, *n, zt)?;
                Ok((exact, float))
            }
        }
    }
}

#[derive(Clone, Copy)]
struct Cell {
    value: f64,
    witness: Witness,
    discrepancy: f64,
    count: u64,
}

fn witness_key(w: &Witness) -> ([u64; 2], [u64; 2], [u64; 2]) {
    (w.y, w.x, w.z)
}

// Larger |ratio| wins; ties go to the smaller witness so the result does not
// depend on evaluation order.
fn merge(a: Cell, b: Cell) -> Cell {
    let keep_a = match a.value.total_cmp(&b.value) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => witness_key(&a.witness) <= witness_key(&b.witness),
    };
    let best = if keep_a { a } else { b };
    Cell {
        value: best.value,
        witness: best.witness,
        discrepancy: a.discrepancy.max(b.discrepancy),
        count: a.count + b.count,
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return domain(format!("epsilon must be positive and finite, got {epsilon}"));
    }
    Ok(())
}

fn report(epsilon: f64, cell: Cell) -> AuditReport {
    AuditReport {
        epsilon_target: epsilon,
        max_abs_log_ratio: cell.value,
        witness: cell.witness,
        satisfied: cell.value <= epsilon + AUDIT_TOLERANCE,
        instances_checked: cell.count,
        route_discrepancy: cell.discrepancy,
    }
}

fn evaluate_cell(ev: &Evaluator<'_>, y: [u64; 2], x: [u64; 2], z1: u64) -> Result<Cell> {
    let (value, check) = ev.eval(y, x, z1)?;
    Ok(Cell {
        value: value.abs(),
        witness: Witness {
            y,
            x,
            z: [z1, ev.z_total - z1],
        },
        discrepancy: (value - check).abs(),
        count: 1,
    })
}

/// Maximum `|ln p(z|y) − ln p(z|x)|` over every neighbour pair and every
/// release `z` with `z· = y·`.
pub fn audit_synthesizer(mech: &Mechanism, epsilon: f64, y_total: u64) -> Result<AuditReport> {
    check_epsilon(epsilon)?;
    if y_total == 0 {
        return usage("y_total must be at least 1");
    }
    if y_total > ENUMERATION_CAP {
        return usage(format!(
            "exhaustive audits are capped at y_total = {ENUMERATION_CAP}, got {y_total}; use spot_check"
        ));
    }
    let ev = Evaluator::new(mech, y_total, y_total)?;
    let jobs: Vec<_> = enumerate_neighbors(y_total)
        .into_iter()
        .flat_map(|(y, x)| (0..=y_total).map(move |z1| (y, x, z1)))
        .collect();
    let cell = jobs
        .into_par_iter()
        .map(|(y, x, z1)| evaluate_cell(&ev, y, x, z1))
        .try_reduce_with(|a, b| Ok(merge(a, b)))
        .expect("at least one neighbour pair")?;
    Ok(report(epsilon, cell))
}

/// Random neighbour pairs for totals beyond the enumeration cap. Each sampled
/// pair is evaluated at one random `z` plus the four boundary releases
/// `z_1 ∈ {0, 1, z·−1, z·}`.
pub fn spot_check(
    mech: &Mechanism,
    epsilon: f64,
    y_total: u64,
    samples: usize,
    rng: &mut RngStream,
) -> Result<AuditReport> {
    check_epsilon(epsilon)?;
    if matches!(mech, Mechanism::Pg2Exact { .. }) {
        return usage("spot checks use floating point; pass a Pg2 mechanism");
    }
    if y_total == 0 || samples == 0 {
        return usage("spot checks need y_total >= 1 and samples >= 1");
    }
    let ev = Evaluator::new(mech, y_total, y_total)?;
    let mut jobs = Vec::with_capacity(samples * 5);
    for _ in 0..samples {
        let y1 = rng.random_range(0..=y_total);
        let y = [y1, y_total - y1];
        let down = if y[0] == 0 {
            false
        } else if y[1] == 0 {
            true
        } else {
            rng.random::<bool>()
        };
        let x = if down {
            [y[0] - 1, y[1] + 1]
        } else {
            [y[0] + 1, y[1] - 1]
        };
        let mut zs = vec![0, 1.min(y_total), y_total.saturating_sub(1), y_total];
        zs.push(rng.random_range(0..=y_total));
        zs.sort_unstable();
        zs.dedup();
        jobs.extend(zs.into_iter().map(|z1| (y, x, z1)));
    }
    let cell = jobs
        .into_par_iter()
        .map(|(y, x, z1)| evaluate_cell(&ev, y, x, z1))
        .try_reduce_with(|a, b| Ok(merge(a, b)))
        .expect("at least one sample")?;
    Ok(report(epsilon, cell))
}

/// Total variation between the empirical distribution of `draws` releases and
/// the exact two-group conditional pmf.
pub fn sampler_tv(
    data: &CountDataset,
    prior: &PriorSpec,
    strategy: Strategy,
    draws: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    let (a, b) = match prior {
        PriorSpec::PoissonGamma { a, b, .. } if a.len() == 2 && data.len() == 2 => (a, b),
        _ => return usage("sampler_tv needs a two-group Poisson-gamma prior and dataset"),
    };
    if draws == 0 {
        return usage("draws must be at least 1");
    }
    let y = [data.counts()[0], data.counts()[1]];
    let n = [data.populations()[0], data.populations()[1]];
    let pmf = pg_conditional_pmf_2(y, [a[0], a[1]], [b[0], b[1]], n, data.total())?;
    let mut hist = vec![0u64; pmf.len()];
    for _ in 0..draws {
        let z = pg_synthesize(data, prior, strategy, rng)?;
        hist[z.counts[0] as usize] += 1;
    }
    Ok(0.5
        * hist
            .iter()
            .zip(&pmf)
            .map(|(&h, &p)| (h as f64 / draws as f64 - p).abs())
            .sum::<f64>())
}

/// One bound check: `y` is in `(i, i')` order, the neighbour is
/// `x = (y_1 − 1, y_2 + 1)` and `r` is `r_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInstance {
    pub y: [u64; 2],
    pub a: [f64; 2],
    pub r: f64,
    pub z_total: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundAccuracyRow {
    pub instance: BoundInstance,
    pub exact_log_ratio_c: f64,
    pub bound: f64,
    pub slack: f64,
    /// Whether `ln C(x)/C(y)` came from exact rationals.
    pub exact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedInstance {
    pub instance: BoundInstance,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlackSummary {
    pub rows: usize,
    pub skipped: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSweep {
    pub rows: Vec<BoundAccuracyRow>,
    pub skipped: Vec<SkippedInstance>,
    pub summary: SlackSummary,
}

impl BoundSweep {
    pub fn all_dominated(&self) -> bool {
        self.summary.violations == 0
    }
}

/// Totals `1..=8`, integer `a ∈ {1..4}²`, `r ∈ {1/3, 1/2, 1, 3/2}` and
/// `z· = y·`. Instances violating the bound's preconditions are included and
/// end up skipped.
pub fn default_bound_grid() -> Vec<BoundInstance> {
    bound_grid(8, 4, &[1.0 / 3.0, 0.5, 1.0, 1.5])
}

/// Every `y` with `1 ≤ y_1 ≤ y· ≤ max_y`, `a ∈ {1..max_a}²` and `r ∈ rs`, at
/// `z· = y·`.
pub fn bound_grid(max_y: u64, max_a: u64, rs: &[f64]) -> Vec<BoundInstance> {
    let mut grid = Vec::new();
    for y_total in 1..=max_y {
        for y1 in 1..=y_total {
            for a1 in 1..=max_a {
                for a2 in 1..=max_a {
                    for &r in rs {
                        grid.push(BoundInstance {
                            y: [y1, y_total - y1],
                            a: [a1 as f64, a2 as f64],
                            r,
                            z_total: y_total,
                        });
                    }
                }
            }
        }
    }
    grid
}

fn integer_shapes(a: [f64; 2]) -> Option<[u64; 2]> {
    a.iter()
        .all(|v| v.fract() == 0.0 && *v >= 1.0 && *v < 1e15)
        .then(|| [a[0] as u64, a[1] as u64])
}

fn log_c_ratio(inst: &BoundInstance, x: [u64; 2]) -> Result<(f64, bool)> {
    match integer_shapes(inst.a) {
        Some(a) => {
            let r = rational_from_f64(inst.r)?;
            let cx = exact_c(x, a, &r, inst.z_total)?;
            let cy = exact_c(inst.y, a, &r, inst.z_total)?;
            Ok((ln_rational(&(cx / cy))?, true))
        }
        None => Ok((
            log_c_with_ratio(x, inst.a, inst.r, inst.z_total)?
                - log_c_with_ratio(inst.y, inst.a, inst.r, inst.z_total)?,
            false,
        )),
    }
}

fn sweep_one(inst: &BoundInstance) -> std::result::Result<BoundAccuracyRow, SkippedInstance> {
    let skip = |reason: String| SkippedInstance {
        instance: inst.clone(),
        reason,
    };
    if inst.y[0] == 0 {
        return Err(skip("y_i = 0 has no neighbour with x_i = y_i − 1".into()));
    }
    let bound = theorem1_bound(inst.y, inst.a, inst.r, inst.z_total).map_err(|e| skip(e.to_string()))?;
    let x = [inst.y[0] - 1, inst.y[1] + 1];
    let (ratio, exact) = log_c_ratio(inst, x).map_err(|e| skip(e.to_string()))?;
    Ok(BoundAccuracyRow {
        instance: inst.clone(),
        exact_log_ratio_c: ratio,
        bound,
        slack: bound - ratio.abs(),
        exact,
    })
}

/// Compare `|ln C(x)/C(y)|` with its upper bound on every instance. Rows keep
/// the grid order.
pub fn bound_accuracy_sweep(grid: &[BoundInstance]) -> BoundSweep {
    let outcomes: Vec<_> = grid.par_iter().map(sweep_one).collect();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(s) => skipped.push(s),
        }
    }
    let mut slacks: Vec<f64> = rows.iter().map(|r| r.slack).collect();
    slacks.sort_by(f64::total_cmp);
    let median = match slacks.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => slacks[n / 2],
        n => 0.5 * (slacks[n / 2 - 1] + slacks[n / 2]),
    };
    let summary = SlackSummary {
        rows: rows.len(),
        skipped: skipped.len(),
        min: slacks.first().copied().unwrap_or(f64::NAN),
        median,
        max: slacks.last().copied().unwrap_or(f64::NAN),
        violations: slacks.iter().filter(|&&s| s < SLACK_TOLERANCE).count(),
    };
    BoundSweep {
        rows,
        skipped,
        summary,
    }
}
