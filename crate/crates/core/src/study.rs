//! Monte Carlo utility study comparing the synthesizers on simulated counties.
//!
//! A scenario fixes populations and true rates once; each replicate then draws
//! counts with the total held at `y·`, and every method turns the replicate
//! into posterior rate estimates at each privacy budget.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dirichlet::calibrate_md;
use crate::error::{usage, Error, Result};
use crate::model::{CountDataset, PriorSpec};
use crate::poisson_gamma::{
    pg_posterior, sanitize_state_rates, solve_pg, target_rates, SolverOptions, TargetRule,
};
use crate::sampling::{sample_dirichlet, sample_gamma, sample_multinomial, RngStream};

use rand_distr::{Distribution, StandardNormal};

// Stream tags; the first path element of every task stream.
const TAG_TRUTH: u64 = 1;
const TAG_DATA: u64 = 2;
const TAG_METHOD: u64 = 3;
const TAG_SANITIZE: u64 = 4;

/// Rescales rMSE to events per 100,000 population.
pub const RMSE_SCALE: f64 = 1e5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopMode {
    Uniform,
    Heterogeneous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMode {
    Uniform,
    Heterogeneous,
}

fn mode_name(heterogeneous: bool) -> &'static str {
    if heterogeneous {
        "heterogeneous"
    } else {
        "uniform"
    }
}

/// Shape of the simulated world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub pop_mode: PopMode,
    pub rate_mode: RateMode,
    pub groups: usize,
    pub y_total: u64,
    pub n_total: f64,
    pub states: usize,
    /// Log-normal spread of heterogeneous populations.
    pub pop_sigma: f64,
    /// Log-normal spread of heterogeneous rates.
    pub rate_sigma: f64,
    /// Share of the rate log-variance that is common within a state.
    pub state_share: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn new(pop_mode: PopMode, rate_mode: RateMode) -> Self {
        Self {
            pop_mode,
            rate_mode,
            groups: 200,
            y_total: 1000,
            n_total: 2e6,
            states: 10,
            pop_sigma: 1.0,
            rate_sigma: 0.3,
            state_share: 0.7,
            seed: 0,
        }
    }

    /// Label such as `heterogeneous_pop-uniform_rate`.
    pub fn name(&self) -> String {
        format!(
            "{}_pop-{}_rate",
            mode_name(self.pop_mode == PopMode::Heterogeneous),
            mode_name(self.rate_mode == RateMode::Heterogeneous)
        )
    }

    fn validate(&self) -> Result<()> {
        if self.groups < 2 {
            return usage(format!("a scenario needs at least two groups, got {}", self.groups));
        }
        if self.y_total == 0 {
            return usage("y_total must be at least 1");
        }
        if !(self.n_total > 0.0) || !self.n_total.is_finite() {
            return usage(format!("n_total must be positive, got {}", self.n_total));
        }
        if self.states < 2 {
            return usage("a scenario needs at least two states");
        }
        // state 0 gets k groups, state 1 gets 2k, the rest at least one each
        if self.groups < 3 + (self.states - 2) {
            return usage(format!(
                "{} groups cannot fill {} states",
                self.groups, self.states
            ));
        }
        for (name, v) in [("pop_sigma", self.pop_sigma), ("rate_sigma", self.rate_sigma)] {
            if !(v >= 0.0) || !v.is_finite() {
                return usage(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.state_share) {
            return usage(format!("state_share must lie in [0, 1], got {}", self.state_share));
        }
        Ok(())
    }
}

/// Ground truth for one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub populations: Vec<f64>,
    pub rates: Vec<f64>,
    pub state_ids: Vec<String>,
    pub group_ids: Vec<String>,
    /// Top population quintile.
    pub urban: Vec<bool>,
    /// Groups of the small state used in the region contrast.
    pub region_a: Vec<usize>,
    /// Groups of the large state: twice the groups and 14 times the population.
    pub region_b: Vec<usize>,
}

impl Truth {
    /// Truth built from observed counts: populations and states are kept, the
    /// true rates are the crude rates with half an event added to every group,
    /// rescaled so expected events equal `y·`. Region A is the least populous
    /// state and region B the most populous.
    pub fn from_dataset(data: &CountDataset) -> Result<Self> {
        let (names, index) = data.state_index();
        if names.len() < 2 {
            return usage("a study on observed data needs at least two states");
        }
        let pops = data.populations().to_vec();
        let mut rates: Vec<f64> = data
            .counts()
            .iter()
            .zip(&pops)
            .map(|(&y, n)| (y as f64 + 0.5) / n)
            .collect();
        let expected: f64 = pops.iter().zip(&rates).map(|(n, l)| n * l).sum();
        let fix = data.total().max(1) as f64 / expected;
        for l in &mut rates {
            *l *= fix;
        }
        let mut state_pop = vec![0.0; names.len()];
        for (&s, n) in index.iter().zip(&pops) {
            state_pop[s] += n;
        }
        let by_pop = |want_max: bool| {
            (0..names.len())
                .reduce(|a, b| {
                    let better = if want_max {
                        state_pop[b] > state_pop[a]
                    } else {
                        state_pop[b] < state_pop[a]
                    };
                    if better {
                        b
                    } else {
                        a
                    }
                })
                .expect("at least two states")
        };
        let (small, large) = (by_pop(false), by_pop(true));
        let members = |s: usize| (0..index.len()).filter(|&i| index[i] == s).collect::<Vec<_>>();
        Ok(Self {
            urban: top_quintile(&pops),
            populations: pops,
            rates,
            state_ids: data.state_ids().to_vec(),
            group_ids: data.group_ids().to_vec(),
            region_a: members(small),
            region_b: members(large),
        })
    }

    /// Population-weighted true rate of each group's state.
    pub fn state_rates(&self) -> Vec<f64> {
        let mut events = std::collections::BTreeMap::<&str, (f64, f64)>::new();
        for ((s, n), l) in self.state_ids.iter().zip(&self.populations).zip(&self.rates) {
            let e = events.entry(s).or_default();
            e.0 += n * l;
            e.1 += n;
        }
        self.state_ids
            .iter()
            .map(|s| {
                let (y, n) = events[s.as_str()];
                y / n
            })
            .collect()
    }
}

fn state_sizes(groups: usize, states: usize) -> Vec<usize> {
    let k = (groups / (2 * states)).max(1);
    let rest = groups - 3 * k;
    let others = states - 2;
    let mut sizes = vec![k, 2 * k];
    for s in 0..others {
        sizes.push(rest / others + usize::from(s < rest % others));
    }
    if others == 0 {
        // no other states: the leftovers join the large state
        sizes[1] += rest;
    }
    sizes
}

// Ties broken by index so the flags are deterministic.
fn top_quintile(pops: &[f64]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..pops.len()).collect();
    order.sort_by(|&i, &j| pops[j].total_cmp(&pops[i]).then(i.cmp(&j)));
    let mut urban = vec![false; pops.len()];
    for &i in order.iter().take(pops.len().div_ceil(5)) {
        urban[i] = true;
    }
    urban
}

fn normal(rng: &mut RngStream) -> f64 {
    StandardNormal.sample(rng)
}

/// Draw populations, rates, state labels and urban flags for a scenario.
pub fn gen_truth(scenario: &Scenario) -> Result<Truth> {
    scenario.validate()?;
    let mut rng = RngStream::for_task(scenario.seed, &[TAG_TRUTH]);
    let sizes = state_sizes(scenario.groups, scenario.states);
    let state_of: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(s, &k)| std::iter::repeat_n(s, k))
        .collect();
    let len = state_of.len();
    let region_a: Vec<usize> = (0..len).filter(|&i| state_of[i] == 0).collect();
    let region_b: Vec<usize> = (0..len).filter(|&i| state_of[i] == 1).collect();

    let mut pops: Vec<f64> = match scenario.pop_mode {
        PopMode::Uniform => vec![1.0; len],
        PopMode::Heterogeneous => {
            let mut p: Vec<f64> = (0..len)
                .map(|_| (scenario.pop_sigma * normal(&mut rng)).exp())
                .collect();
            let total_a: f64 = region_a.iter().map(|&i| p[i]).sum();
            let total_b: f64 = region_b.iter().map(|&i| p[i]).sum();
            let scale = 14.0 * total_a / total_b;
            for &i in &region_b {
                p[i] *= scale;
            }
            p
        }
    };
    let pop_sum: f64 = pops.iter().sum();
    for p in &mut pops {
        *p *= scenario.n_total / pop_sum;
    }

    let base = scenario.y_total as f64 / scenario.n_total;
    let mut rates = match scenario.rate_mode {
        RateMode::Uniform => vec![base; len],
        RateMode::Heterogeneous => {
            let sigma = scenario.rate_sigma;
            let state_effects: Vec<f64> = (0..sizes.len()).map(|_| normal(&mut rng)).collect();
            let (w_state, w_group) = (scenario.state_share.sqrt(), (1.0 - scenario.state_share).sqrt());
            state_of
                .iter()
                .map(|&s| {
                    let u = w_state * state_effects[s] + w_group * normal(&mut rng);
                    base * (sigma * u - 0.5 * sigma * sigma).exp()
                })
                .collect()
        }
    };
    // expected events match y· so every method targets the same total
    let expected: f64 = pops.iter().zip(&rates).map(|(n, l)| n * l).sum();
    let fix = scenario.y_total as f64 / expected;
    for l in &mut rates {
        *l *= fix;
    }

    Ok(Truth {
        urban: top_quintile(&pops),
        populations: pops,
        rates,
        state_ids: state_of.iter().map(|s| format!("s{s}")).collect(),
        group_ids: (0..len).map(|i| format!("g{i}")).collect(),
        region_a,
        region_b,
    })
}

/// Counts `y ~ Mult(y·, n_i λ_i / Σ n_j λ_j)`.
pub fn gen_replicate(truth: &Truth, y_total: u64, rng: &mut RngStream) -> Result<CountDataset> {
    let weights: Vec<f64> = truth
        .populations
        .iter()
        .zip(&truth.rates)
        .map(|(n, l)| n * l)
        .collect();
    let total: f64 = weights.iter().sum();
    let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let counts = sample_multinomial(y_total, &probs, rng)?;
    CountDataset::new(
        counts,
        truth.populations.clone(),
        truth.group_ids.clone(),
        truth.state_ids.clone(),
    )
}

/// `10^5 · sqrt(mean((estimate − truth)²))`
pub fn rmse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return usage(format!(
            "estimate has {} entries but truth has {}",
            estimate.len(),
            truth.len()
        ));
    }
    if estimate.is_empty() {
        return usage("rmse needs at least one entry");
    }
    let mse = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t).powi(2))
        .sum::<f64>()
        / estimate.len() as f64;
    Ok(RMSE_SCALE * mse.sqrt())
}

/// One posterior draw of every group's rate.
///
/// A multinomial-Dirichlet prior gives `θ*_i y· / n_i` with `θ* ~ Dir(y + α)`;
/// a Poisson-gamma prior gives `λ*_i ~ Gam(y_i + a_i, n_i + b_i)`.
pub fn rate_estimates(data: &CountDataset, prior: &PriorSpec, rng: &mut RngStream) -> Result<Vec<f64>> {
    if prior.len() != data.len() {
        return usage(format!(
            "prior has {} groups but the dataset has {}",
            prior.len(),
            data.len()
        ));
    }
    match prior {
        PriorSpec::MultinomialDirichlet { alpha } => {
            let shapes: Vec<f64> = data.counts().iter().zip(alpha).map(|(&y, a)| y as f64 + a).collect();
            let theta = sample_dirichlet(&shapes, rng)?;
            let y_total = data.total() as f64;
            Ok(theta
                .iter()
                .zip(data.populations())
                .map(|(t, n)| t * y_total / n)
                .collect())
        }
        PriorSpec::PoissonGamma { a, b, .. } => data
            .counts()
            .iter()
            .zip(data.populations())
            .zip(a.iter().zip(b))
            .map(|((&y, &n), (&a, &b))| {
                let post = pg_posterior(y, a, b, n)?;
                sample_gamma(post.shape, post.rate, rng)
            })
            .collect(),
    }
}

/// Population-weighted mean estimated rate of group A over that of group B.
pub fn region_contrast(estimates: &[f64], group_a: &[usize], group_b: &[usize], populations: &[f64]) -> Result<f64> {
    if group_a.is_empty() || group_b.is_empty() {
        return usage("region contrast needs two nonempty groups");
    }
    if estimates.len() != populations.len() {
        return usage("estimates and populations must have equal length");
    }
    if group_a.iter().any(|i| group_b.contains(i)) {
        return usage("region groups must be disjoint");
    }
    let weighted = |idx: &[usize]| -> Result<f64> {
        let mut events = 0.0;
        let mut pop = 0.0;
        for &i in idx {
            if i >= estimates.len() {
                return usage(format!("group index {i} out of range"));
            }
            events += estimates[i] * populations[i];
            pop += populations[i];
        }
        Ok(events / pop)
    };
    Ok(weighted(group_a)? / weighted(group_b)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyMethod {
    Md,
    PgNational,
    PgState,
}

impl StudyMethod {
    pub const ALL: [StudyMethod; 3] = [Self::Md, Self::PgNational, Self::PgState];

    pub fn name(self) -> &'static str {
        match self {
            Self::Md => "md",
            Self::PgNational => "pg_national",
            Self::PgState => "pg_state",
        }
    }

    fn index(self) -> u64 {
        match self {
            Self::Md => 0,
            Self::PgNational => 1,
            Self::PgState => 2,
        }
    }
}

/// Source of the state targets used by [`StudyMethod::PgState`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum StateTargets {
    /// Crude state rates of each replicate.
    Observed,
    /// Crude state rates with Laplace noise at the given budget.
    Sanitized { epsilon: f64 },
    /// True state rates of the scenario.
    Truth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenarios: Vec<Scenario>,
    pub epsilons: Vec<f64>,
    pub methods: Vec<StudyMethod>,
    pub replicates: usize,
    pub state_targets: StateTargets,
    /// Fixed MD concentration replacing the calibrated one, for limit checks.
    pub md_alpha_override: Option<f64>,
    pub seed: u64,
    /// Worker threads; `None` uses rayon's default. Results do not depend on it.
    pub threads: Option<usize>,
}

impl StudyConfig {
    /// The four population/rate scenarios at default scale.
    pub fn standard(seed: u64) -> Self {
        let scenarios = [
            (PopMode::Uniform, RateMode::Uniform),
            (PopMode::Heterogeneous, RateMode::Uniform),
            (PopMode::Uniform, RateMode::Heterogeneous),
            (PopMode::Heterogeneous, RateMode::Heterogeneous),
        ]
        .into_iter()
        .map(|(p, r)| Scenario {
            seed,
            ..Scenario::new(p, r)
        })
        .collect();
        Self {
            scenarios,
            epsilons: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            methods: StudyMethod::ALL.to_vec(),
            replicates: 50,
            state_targets: StateTargets::Observed,
            md_alpha_override: None,
            seed,
            threads: None,
        }
    }
}

/// Mean and 2.5/97.5 percentiles over replicates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn from_values(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                lo: f64::NAN,
                hi: f64::NAN,
            };
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            lo: percentile(&sorted, 0.025),
            hi: percentile(&sorted, 0.975),
        }
    }

    pub fn overlaps(&self, other: &Band) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

// Linear interpolation between order statistics.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub scenario: String,
    pub method: StudyMethod,
    pub epsilon: f64,
    /// False when calibration failed for at least one replicate.
    pub feasible: bool,
    pub note: Option<String>,
    /// Replicates that contributed to the bands.
    pub replicates: usize,
    pub rmse: Band,
    pub urban_rate: Band,
    pub rural_rate: Band,
    pub region_contrast: Band,
}

impl StudyResult {
    pub fn rmse_mean(&self) -> f64 {
        self.rmse.mean
    }

    pub fn rmse_lo(&self) -> f64 {
        self.rmse.lo
    }

    pub fn rmse_hi(&self) -> f64 {
        self.rmse.hi
    }

    /// `(metric, band)` pairs in a fixed order, for long-format output.
    pub fn metrics(&self) -> [(&'static str, Band); 4] {
        [
            ("rmse", self.rmse),
            ("urban_rate", self.urban_rate),
            ("rural_rate", self.rural_rate),
            ("region_contrast", self.region_contrast),
        ]
    }
}

#[derive(Clone, Copy, Debug)]
struct ReplicateMetrics {
    rmse: f64,
    urban: f64,
    rural: f64,
    contrast: f64,
}

fn class_mean(estimates: &[f64], flags: &[bool], want: bool) -> f64 {
    let (sum, count) = estimates
        .iter()
        .zip(flags)
        .filter(|(_, &f)| f == want)
        .fold((0.0, 0usize), |(s, c), (e, _)| (s + e, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Prior for one method at one budget, or `Err(InfeasibleBudget)`.
fn method_prior(
    method: StudyMethod,
    epsilon: f64,
    data: &CountDataset,
    state_targets: &[f64],
    md_alpha_override: Option<f64>,
) -> Result<PriorSpec> {
    let y_total = data.total();
    match method {
        StudyMethod::Md => {
            let alpha = match md_alpha_override {
                Some(a) => a,
                None => calibrate_md(epsilon, y_total)?.alpha_min,
            };
            PriorSpec::multinomial_dirichlet(vec![alpha; data.len()])
        }
        StudyMethod::PgNational | StudyMethod::PgState => {
            let targets = if method == StudyMethod::PgNational {
                target_rates(data, &TargetRule::National)?
            } else {
                state_targets.to_vec()
            };
            let cal = solve_pg(
                epsilon,
                y_total,
                y_total,
                data.populations(),
                &targets,
                &SolverOptions::default(),
            )?;
            Ok(PriorSpec::PoissonGamma {
                a: cal.a_min,
                b: cal.b,
                target_rates: Some(cal.target_rates),
            })
        }
    }
}

/// A named truth and the total drawn in each of its replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub name: String,
    pub truth: Truth,
    pub y_total: u64,
}

struct Cell<'a> {
    world: usize,
    truth: &'a Truth,
    name: &'a str,
    y_total: u64,
    method: StudyMethod,
    eps_index: usize,
    epsilon: f64,
}

fn run_replicate(config: &StudyConfig, cell: &Cell<'_>, rep: usize) -> Result<ReplicateMetrics> {
    let (s, r) = (cell.world as u64, rep as u64);
    let mut data_rng = RngStream::for_task(config.seed, &[TAG_DATA, s, r]);
    let data = gen_replicate(cell.truth, cell.y_total, &mut data_rng)?;
    let state_targets = match (cell.method, config.state_targets) {
        (StudyMethod::PgState, StateTargets::Observed) => target_rates(&data, &TargetRule::StateAverage)?,
        (StudyMethod::PgState, StateTargets::Sanitized { epsilon }) => {
            let mut rng = RngStream::for_task(config.seed, &[TAG_SANITIZE, s, r]);
            sanitize_state_rates(&data, epsilon, &mut rng)?
        }
        (StudyMethod::PgState, StateTargets::Truth) => cell.truth.state_rates(),
        _ => Vec::new(),
    };
    let prior = method_prior(cell.method, cell.epsilon, &data, &state_targets, config.md_alpha_override)?;
    let mut rng = RngStream::for_task(
        config.seed,
        &[TAG_METHOD, s, r, cell.method.index(), cell.eps_index as u64],
    );
    let est = rate_estimates(&data, &prior, &mut rng)?;
    let truth = cell.truth;
    Ok(ReplicateMetrics {
        rmse: rmse(&est, &truth.rates)?,
        urban: class_mean(&est, &truth.urban, true),
        rural: class_mean(&est, &truth.urban, false),
        contrast: region_contrast(&est, &truth.region_a, &truth.region_b, &truth.populations)?,
    })
}

fn summarize(config: &StudyConfig, cell: &Cell<'_>, outcomes: Vec<Result<ReplicateMetrics>>) -> Result<StudyResult> {
    let mut ok = Vec::with_capacity(outcomes.len());
    let mut note = None;
    for o in outcomes {
        match o {
            Ok(m) => ok.push(m),
            Err(e @ Error::InfeasibleBudget { .. }) => {
                note.get_or_insert_with(|| e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    let band = |f: fn(&ReplicateMetrics) -> f64| Band::from_values(&ok.iter().map(f).collect::<Vec<_>>());
    let failed = config.replicates - ok.len();
    Ok(StudyResult {
        scenario: cell.name.to_string(),
        method: cell.method,
        epsilon: cell.epsilon,
        feasible: failed == 0,
        note: note.map(|n| format!("{failed} of {} replicates infeasible: {n}", config.replicates)),
        replicates: ok.len(),
        rmse: band(|m| m.rmse),
        urban_rate: band(|m| m.urban),
        rural_rate: band(|m| m.rural),
        region_contrast: band(|m| m.contrast),
    })
}

/// Run every scenario × method × budget cell over all replicates.
pub fn run_study(config: &StudyConfig) -> Result<Vec<StudyResult>> {
    if config.scenarios.is_empty() {
        return usage("at least one scenario is required");
    }
    let worlds = config
        .scenarios
        .iter()
        .map(|s| {
            let scenario = Scenario {
                seed: config.seed,
                ..s.clone()
            };
            Ok(World {
                name: scenario.name(),
                truth: gen_truth(&scenario)?,
                y_total: scenario.y_total,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    run_worlds(config, &worlds)
}

/// Run the study on given truths; `config.scenarios` is ignored.
///
/// Replicate `ℓ` of a world uses the same simulated counts for every method
/// and budget; each (world, replicate, method, budget) draws from its own
/// stream, so the output does not depend on the thread count.
pub fn run_worlds(config: &StudyConfig, worlds: &[World]) -> Result<Vec<StudyResult>> {
    if config.replicates < 2 {
        return usage(format!("need at least two replicates, got {}", config.replicates));
    }
    if worlds.is_empty() || config.epsilons.is_empty() || config.methods.is_empty() {
        return usage("worlds, epsilons and methods must be nonempty");
    }
    if let Some(e) = config.epsilons.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
        return usage(format!("epsilons must be positive and finite, got {e}"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
    let mut cells = Vec::new();
    for (wi, world) in worlds.iter().enumerate() {
        for &method in &config.methods {
            for (ei, &epsilon) in config.epsilons.iter().enumerate() {
                cells.push(Cell {
                    world: wi,
                    truth: &world.truth,
                    name: &world.name,
                    y_total: world.y_total,
                    method,
                    eps_index: ei,
                    epsilon,
                });
            }
        }
    }
    pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let outcomes: Vec<_> = (0..config.replicates)
                    .into_par_iter()
                    .map(|rep| run_replicate(config, cell, rep))
                    .collect();
                summarize(config, cell, outcomes)
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(pop: PopMode, rate: RateMode) -> Scenario {
        Scenario {
            groups: 40,
            states: 4,
            y_total: 300,
            seed: 5,
            ..Scenario::new(pop, rate)
        }
    }

    #[test]
    fn uniform_truth() {
        let t = gen_truth(&small(PopMode::Uniform, RateMode::Uniform)).unwrap();
        assert!(t.populations.iter().all(|&n| (n - 2e6 / 40.0).abs() < 1e-6));
        assert!(t.rates.iter().all(|&l| (l - 300.0 / 2e6).abs() < 1e-18));
        assert_eq!(t.urban.iter().filter(|&&u| u).count(), 8);
    }

    #[test]
    fn heterogeneous_truth_structure() {
        let t = gen_truth(&small(PopMode::Heterogeneous, RateMode::Heterogeneous)).unwrap();
        let total: f64 = t.populations.iter().sum();
        assert!((total / 2e6 - 1.0).abs() < 1e-9);
        assert_eq!(t.region_b.len(), 2 * t.region_a.len());
        let pa: f64 = t.region_a.iter().map(|&i| t.populations[i]).sum();
        let pb: f64 = t.region_b.iter().map(|&i| t.populations[i]).sum();
        assert!((pb / pa - 14.0).abs() < 1e-9);
        let expected: f64 = t.populations.iter().zip(&t.rates).map(|(n, l)| n * l).sum();
        assert!((expected - 300.0).abs() < 1e-9);
        assert!(t.rates.iter().any(|&l| (l - t.rates[0]).abs() > 1e-9));
        assert_eq!(t.state_ids.len(), 40);
    }

    #[test]
    fn zero_sigma_collapses_rates() {
        let s = Scenario {
            rate_sigma: 0.0,
            ..small(PopMode::Heterogeneous, RateMode::Heterogeneous)
        };
        let t = gen_truth(&s).unwrap();
        let base = 300.0 / 2e6;
        assert!(t.rates.iter().all(|&l| (l / base - 1.0).abs() < 1e-12));
    }

    #[test]
    fn state_sizes_cover_every_group() {
        for (g, s) in [(200, 10), (40, 4), (3, 2), (7, 2), (12, 5)] {
            let sizes = state_sizes(g, s);
            assert_eq!(sizes.iter().sum::<usize>(), g, "{g} {s}");
            assert_eq!(sizes.len(), s);
            assert_eq!(sizes[1], 2 * sizes[0] + if s == 2 { g - 3 * sizes[0] } else { 0 });
        }
    }

    #[test]
    fn replicate_sums_and_means() {
        let t = gen_truth(&small(PopMode::Heterogeneous, RateMode::Uniform)).unwrap();
        let mut rng = RngStream::new(1, 0);
        let reps = 2000;
        let mut mean0 = 0.0;
        for _ in 0..reps {
            let d = gen_replicate(&t, 300, &mut rng).unwrap();
            assert_eq!(d.total(), 300);
            mean0 += d.counts()[0] as f64;
        }
        mean0 /= reps as f64;
        let p0 = t.populations[0] / 2e6;
        let se = (300.0 * p0 * (1.0 - p0) / reps as f64).sqrt();
        assert!((mean0 - 300.0 * p0).abs() < 3.0 * se, "{mean0}");
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1e-4, 2e-4], &[1e-4, 2e-4]).unwrap(), 0.0);
        let r = rmse(&[2e-4, 3e-4], &[1e-4, 3e-4]).unwrap();
        assert!((r - 7.0711).abs() < 1e-4);
        let r = rmse(&[1.5e-4, 2.5e-4], &[1e-4, 2e-4]).unwrap();
        assert!((r - 5.0).abs() < 1e-9);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn estimate_limits() {
        let data = CountDataset::unlabeled(vec![10, 30, 0, 60], vec![1e4, 2e4, 3e4, 4e4]).unwrap();
        let mut rng = RngStream::new(2, 0);
        // huge α: every group gets y·/I events
        let md = PriorSpec::multinomial_dirichlet(vec![1e8; 4]).unwrap();
        let est = rate_estimates(&data, &md, &mut rng).unwrap();
        for (e, n) in est.iter().zip(data.populations()) {
            let want = 25.0 / n;
            assert!((e / want - 1.0).abs() < 1e-3, "{e} vs {want}");
        }
        // huge a, b: prior means
        let targets = vec![1e-3, 2e-3, 3e-3, 4e-3];
        let pg = PriorSpec::poisson_gamma_with_targets(vec![1e12; 4], targets.clone()).unwrap();
        let est = rate_estimates(&data, &pg, &mut rng).unwrap();
        for (e, t) in est.iter().zip(&targets) {
            assert!((e / t - 1.0).abs() < 1e-4);
        }
        // vague prior: crude rates
        let pg = PriorSpec::poisson_gamma(vec![1e-9; 4], vec![1e-9; 4]).unwrap();
        let n_draws = 4000;
        let mut mean1 = 0.0;
        for _ in 0..n_draws {
            mean1 += rate_estimates(&data, &pg, &mut rng).unwrap()[1];
        }
        mean1 /= n_draws as f64;
        let crude = 30.0 / 2e4;
        let se = (30f64).sqrt() / 2e4 / (n_draws as f64).sqrt();
        assert!((mean1 - crude).abs() < 3.0 * se);
    }

    #[test]
    fn contrast_examples() {
        let pops = [1.0, 2.0, 10.0, 20.0];
        assert_eq!(region_contrast(&[3.0; 4], &[0, 1], &[2, 3], &pops).unwrap(), 1.0);
        assert!(region_contrast(&[1.0; 4], &[], &[2], &pops).is_err());
        assert!(region_contrast(&[1.0; 4], &[1], &[1, 2], &pops).is_err());
        // uniform allocation: A has 1 group on pop 1, B has 2 on pop 14
        let est = [1.0, 1.0 / 7.0, 1.0 / 7.0];
        let c = region_contrast(&est, &[0], &[1, 2], &[1.0, 7.0, 7.0]).unwrap();
        assert!((c - 7.0).abs() < 1e-12);
    }

    #[test]
    fn md_limit_contrast_is_seven() {
        let t = gen_truth(&Scenario {
            seed: 9,
            ..Scenario::new(PopMode::Heterogeneous, RateMode::Uniform)
        })
        .unwrap();
        let mut rng = RngStream::new(9, 1);
        let data = gen_replicate(&t, 1000, &mut rng).unwrap();
        let md = PriorSpec::multinomial_dirichlet(vec![1e8; t.populations.len()]).unwrap();
        let est = rate_estimates(&data, &md, &mut rng).unwrap();
        let c = region_contrast(&est, &t.region_a, &t.region_b, &t.populations).unwrap();
        assert!((c - 7.0).abs() < 0.01, "{c}");
    }

    #[test]
    fn bands() {
        let b = Band::from_values(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(b.mean, 3.0);
        assert!((b.lo - 1.1).abs() < 1e-12 && (b.hi - 4.9).abs() < 1e-12);
        assert!(b.lo <= b.mean && b.mean <= b.hi);
        assert!(Band::from_values(&[]).mean.is_nan());
    }

    fn tiny_config(threads: usize) -> StudyConfig {
        let mut c = StudyConfig::standard(17);
        for s in &mut c.scenarios {
            s.groups = 30;
            s.states = 3;
            s.y_total = 200;
        }
        c.scenarios.truncate(2);
        c.epsilons = vec![1.0, 4.0];
        c.replicates = 6;
        c.threads = Some(threads);
        c
    }

    #[test]
    fn study_is_thread_count_invariant() {
        let one = run_study(&tiny_config(1)).unwrap();
        let four = run_study(&tiny_config(4)).unwrap();
        assert_eq!(one.len(), 2 * 3 * 2);
        let enc = |r: &Vec<StudyResult>| format!("{r:?}");
        assert_eq!(enc(&one), enc(&four));
        assert!(one.iter().all(|r| r.feasible && r.rmse.lo <= r.rmse.mean && r.rmse.mean <= r.rmse.hi));
    }

    #[test]
    fn truth_from_observed_counts() {
        let data = CountDataset::new(
            vec![0, 4, 6, 30],
            vec![100.0, 200.0, 250.0, 4000.0],
            (0..4).map(|i| format!("c{i}")).collect(),
            vec!["a".into(), "a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let t = Truth::from_dataset(&data).unwrap();
        assert_eq!(t.region_a, vec![2]);
        assert_eq!(t.region_b, vec![3]);
        assert!(t.rates[0] > 0.0);
        let expected: f64 = t.populations.iter().zip(&t.rates).map(|(n, l)| n * l).sum();
        assert!((expected - 40.0).abs() < 1e-9);
        assert_eq!(t.urban, vec![false, false, false, true]);
        let one_state = CountDataset::unlabeled(vec![1, 2], vec![1.0, 1.0]).unwrap();
        assert!(Truth::from_dataset(&one_state).is_err());

        let world = World {
            name: "observed".into(),
            truth: t,
            y_total: 40,
        };
        let mut c = tiny_config(2);
        c.scenarios.clear();
        let rows = run_worlds(&c, &[world]).unwrap();
        assert_eq!(rows.len(), 3 * 2);
        assert!(rows.iter().all(|r| r.scenario == "observed"));
    }

    #[test]
    fn study_rejects_bad_config() {
        let mut c = tiny_config(1);
        c.replicates = 1;
        assert!(run_study(&c).is_err());
        let mut c = tiny_config(1);
        c.epsilons = vec![0.0];
        assert!(run_study(&c).is_err());
    }
}
