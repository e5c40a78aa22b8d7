//! `pgsynth` command line: argument definitions and one runner per subcommand.
//!
//! Exit codes: 0 success or pass, 1 failed check, 2 infeasible privacy budget,
//! 3 bad input, bad arguments or I/O failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod io;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pgsynth::audit::{
    audit_synthesizer, bound_accuracy_sweep, bound_grid, spot_check, Mechanism, ENUMERATION_CAP,
};
use pgsynth::dirichlet::{calibrate_md, md_synthesize, MdCalibration};
use pgsynth::exact::lemma1_suite;
use pgsynth::poisson_gamma::{
    pg_synthesize, solve_pg, target_rates, PgCalibration, SolverOptions, TargetRule,
};
use pgsynth::study::{
    run_study, run_worlds, PopMode, RateMode, Scenario, StateTargets, StudyConfig, StudyMethod,
    StudyResult, Truth, World,
};
use pgsynth::{CountDataset, PriorSpec, RngStream, Strategy};

use crate::config::{expand_config, to_flat};
use crate::io::{ingest_counts, sidecar_path, write_output, CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "pgsynth", version, about = "Differentially private synthetic count data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Minimum prior strength for a privacy budget
    Calibrate(CalibrateArgs),
    /// Draw synthetic releases from a counts file
    Synthesize(SynthesizeArgs),
    /// Exhaustive privacy audit of a two-group synthesizer
    Audit(AuditArgs),
    /// Monte Carlo utility study
    Simulate(SimulateArgs),
    /// Check the normaliser summation identity in exact arithmetic
    LemmaCheck(LemmaArgs),
    /// Compare the normaliser bound with exact values
    BoundSweep(BoundArgs),
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// key = value file supplying defaults for this command's flags
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output path; stdout when absent. Sidecar files are only written with a path
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Md,
    Pg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetsArg {
    National,
    State,
}

impl TargetsArg {
    fn rule(self) -> TargetRule {
        match self {
            Self::National => TargetRule::National,
            Self::State => TargetRule::StateAverage,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    Exact,
    Lambda,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioArg {
    Uniform,
    HetPop,
    HetRate,
    HetBoth,
}

impl ScenarioArg {
    fn modes(self) -> (PopMode, RateMode) {
        match self {
            Self::Uniform => (PopMode::Uniform, RateMode::Uniform),
            Self::HetPop => (PopMode::Heterogeneous, RateMode::Uniform),
            Self::HetRate => (PopMode::Uniform, RateMode::Heterogeneous),
            Self::HetBoth => (PopMode::Heterogeneous, RateMode::Heterogeneous),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyMethodArg {
    Md,
    PgNational,
    PgState,
}

impl From<StudyMethodArg> for StudyMethod {
    fn from(m: StudyMethodArg) -> Self {
        match m {
            StudyMethodArg::Md => StudyMethod::Md,
            StudyMethodArg::PgNational => StudyMethod::PgNational,
            StudyMethodArg::PgState => StudyMethod::PgState,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateTargetsArg {
    Observed,
    Sanitized,
    Truth,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct CalibrateArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long)]
    pub epsilon: f64,
    /// Release total; defaults to the input's total
    #[arg(long)]
    pub z_total: Option<u64>,
    /// Counts CSV; required for pg
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Prior mean rates for pg
    #[arg(long, value_enum, default_value_t = TargetsArg::National)]
    pub targets: TargetsArg,
    /// Starting penalty for the pg solver; by default 2 when e^epsilon > 2, else 1
    #[arg(long)]
    pub initial_nu: Option<f64>,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct SynthesizeArgs {
    /// Counts CSV with header group_id,state_id,population,count
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long)]
    pub epsilon: f64,
    /// Number of synthetic releases
    #[arg(long, default_value_t = 1)]
    pub m_datasets: usize,
    #[arg(long, env = "PGSYNTH_SEED", default_value_t = 0)]
    pub seed: u64,
    /// pg sampling strategy; exact needs two groups. Defaults to exact for two groups
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Prior mean rates for pg
    #[arg(long, value_enum, default_value_t = TargetsArg::National)]
    pub targets: TargetsArg,
    /// Round every calibrated pg shape up to an integer
    #[arg(long)]
    pub round_up: bool,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct AuditArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long)]
    pub epsilon: f64,
    /// Event total; enumerated exhaustively up to 12, spot-checked above
    #[arg(long)]
    pub y_total: u64,
    /// Uniform md concentration; defaults to the calibrated minimum
    #[arg(long)]
    pub alpha: Option<f64>,
    /// pg shapes a1,a2; calibrated when absent
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    pub a: Option<Vec<f64>>,
    /// pg rates b1,b2; required with --a
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    pub b: Option<Vec<f64>>,
    /// Group populations n1,n2
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "1,1")]
    pub n: Vec<f64>,
    /// Prior mean rates for calibrating pg; the national rate when absent
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    pub targets: Option<Vec<f64>>,
    /// Round pg shapes up to integers and evaluate in exact rationals
    #[arg(long)]
    pub exact: bool,
    /// Neighbour pairs sampled when y-total exceeds the enumeration cap
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, env = "PGSYNTH_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct SimulateArgs {
    #[arg(long, value_enum, value_delimiter = ',', action = ArgAction::Set,
          default_value = "uniform,het-pop,het-rate,het-both")]
    pub scenarios: Vec<ScenarioArg>,
    #[arg(long, value_enum, value_delimiter = ',', action = ArgAction::Set,
          default_value = "md,pg-national,pg-state")]
    pub methods: Vec<StudyMethodArg>,
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "0.5,1,2,4,8")]
    pub epsilons: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    pub groups: usize,
    #[arg(long, default_value_t = 1000)]
    pub y_total: u64,
    #[arg(long, default_value_t = 2e6)]
    pub n_total: f64,
    #[arg(long, default_value_t = 10)]
    pub states: usize,
    /// Replicates per scenario
    #[arg(long, default_value_t = 50)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1.0)]
    pub pop_sigma: f64,
    #[arg(long, default_value_t = 0.3)]
    pub rate_sigma: f64,
    /// Share of rate log-variance common within a state
    #[arg(long, default_value_t = 0.7)]
    pub state_share: f64,
    /// Where pg-state gets its targets
    #[arg(long, value_enum, default_value_t = StateTargetsArg::Observed)]
    pub state_targets: StateTargetsArg,
    /// Laplace budget for --state-targets sanitized
    #[arg(long, default_value_t = 1.0)]
    pub sanitize_epsilon: f64,
    /// Study a counts CSV instead of the generated scenarios
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Worker threads; results do not depend on it
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, env = "PGSYNTH_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct LemmaArgs {
    #[arg(long, default_value_t = 4)]
    pub max_c: u32,
    #[arg(long, default_value_t = 10)]
    pub max_z: u32,
    /// Random rational points per (c1, c2, z)
    #[arg(long, default_value_t = 5)]
    pub points: usize,
    #[arg(long, env = "PGSYNTH_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct BoundArgs {
    #[arg(long, default_value_t = 8)]
    pub max_y: u64,
    #[arg(long, default_value_t = 4)]
    pub max_a: u64,
    /// Ratios r as decimals or fractions
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "1/3,1/2,1,3/2")]
    pub r: Vec<String>,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

/// Whether a command's check passed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

/// Run the CLI on `args` (program name first) and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 3 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(Outcome::Pass) => 0,
        Ok(Outcome::Fail) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> CliResult<Outcome> {
    match command {
        Command::Calibrate(a) => calibrate(&a),
        Command::Synthesize(a) => synthesize(&a),
        Command::Audit(a) => audit(&a),
        Command::Simulate(a) => simulate(&a),
        Command::LemmaCheck(a) => lemma_check(&a),
        Command::BoundSweep(a) => bound_sweep(&a),
    }
}

/// Provenance embedded in every output.
#[derive(Debug, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: Option<u64>,
    /// The resolved flags, in config-file form.
    pub config: BTreeMap<String, String>,
}

fn meta(command: &'static str, seed: Option<u64>, args: &impl Serialize) -> Meta {
    Meta {
        tool: "pgsynth",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        config: to_flat(args),
    }
}

fn json_bytes(value: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("outputs serialize to JSON");
    s.push('\n');
    s.into_bytes()
}

fn write_sidecar(output: Option<&Path>, suffix: &str, value: &impl Serialize) -> CliResult<()> {
    match output {
        Some(p) => write_output(Some(&sidecar_path(p, suffix)), &json_bytes(value)),
        None => Ok(()),
    }
}

fn check_epsilon(epsilon: f64) -> CliResult<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(CliError::Args(format!("--epsilon must be positive and finite, got {epsilon}")));
    }
    Ok(())
}

#[derive(Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
enum CalibrationOut {
    Md(MdCalibration),
    Pg(PgCalibration),
}

fn calibrate_dataset(
    method: MethodArg,
    epsilon: f64,
    z_total: Option<u64>,
    data: Option<&CountDataset>,
    targets: TargetsArg,
    options: &SolverOptions,
) -> CliResult<CalibrationOut> {
    check_epsilon(epsilon)?;
    match method {
        MethodArg::Md => {
            let z = z_total
                .or(data.map(CountDataset::total))
                .ok_or_else(|| CliError::Args("md calibration needs --z-total or --input".into()))?;
            Ok(CalibrationOut::Md(calibrate_md(epsilon, z)?))
        }
        MethodArg::Pg => {
            let data = data.ok_or_else(|| CliError::Args("pg calibration needs --input".into()))?;
            let targets = target_rates(data, &targets.rule())?;
            let cal = solve_pg(
                epsilon,
                data.total(),
                z_total.unwrap_or(data.total()),
                data.populations(),
                &targets,
                options,
            )?;
            Ok(CalibrationOut::Pg(cal))
        }
    }
}

fn calibrate(args: &CalibrateArgs) -> CliResult<Outcome> {
    let data = args.input.as_deref().map(ingest_counts).transpose()?;
    let options = SolverOptions {
        initial_nu: args.initial_nu,
        ..SolverOptions::default()
    };
    let calibration = calibrate_dataset(
        args.method,
        args.epsilon,
        args.z_total,
        data.as_ref(),
        args.targets,
        &options,
    )?;
    #[derive(Serialize)]
    struct Out {
        meta: Meta,
        calibration: CalibrationOut,
    }
    let out = Out {
        meta: meta("calibrate", None, args),
        calibration,
    };
    write_output(args.common.output.as_deref(), &json_bytes(&out))?;
    Ok(Outcome::Pass)
}

fn synthesize(args: &SynthesizeArgs) -> CliResult<Outcome> {
    check_epsilon(args.epsilon)?;
    if args.m_datasets == 0 {
        return Err(CliError::Args("--m-datasets must be at least 1".into()));
    }
    let data = ingest_counts(&args.input)?;
    let calibration = calibrate_dataset(
        args.method,
        args.epsilon,
        None,
        Some(&data),
        args.targets,
        &SolverOptions::default(),
    )?;
    let (prior, strategy) = match &calibration {
        CalibrationOut::Md(c) => (c.uniform_prior(data.len()), Strategy::DirichletThenMultinomial),
        CalibrationOut::Pg(c) => {
            let prior = if args.round_up { c.prior_rounded_up() } else { c.prior() };
            let strategy = match args.strategy {
                Some(StrategyArg::Exact) => Strategy::ExactEnumeration2,
                Some(StrategyArg::Lambda) => Strategy::LambdaThenMultinomial,
                None if data.len() == 2 => Strategy::ExactEnumeration2,
                None => Strategy::LambdaThenMultinomial,
            };
            (prior, strategy)
        }
    };
    let mut csv = String::from("group_id,replicate,z\n");
    let mut releases = Vec::with_capacity(args.m_datasets);
    for m in 0..args.m_datasets {
        let mut rng = RngStream::new(args.seed, m as u64);
        let release = match prior {
            PriorSpec::MultinomialDirichlet { .. } => md_synthesize(&data, &prior, &mut rng)?,
            PriorSpec::PoissonGamma { .. } => pg_synthesize(&data, &prior, strategy, &mut rng)?,
        }
        .with_epsilon(args.epsilon);
        for (g, z) in data.group_ids().iter().zip(&release.counts) {
            writeln!(csv, "{},{m},{z}", csv_field(g)).expect("writing to a String");
        }
        releases.push(release.provenance);
    }
    write_output(args.common.output.as_deref(), csv.as_bytes())?;
    #[derive(Serialize)]
    struct Sidecar<'a> {
        meta: Meta,
        calibration: &'a CalibrationOut,
        prior: &'a PriorSpec,
        guarantee: &'static str,
        releases: Vec<pgsynth::Provenance>,
    }
    let guarantee = match (&calibration, data.len()) {
        (CalibrationOut::Md(_), _) | (CalibrationOut::Pg(_), 2) => "calibrated for epsilon over every single-event move",
        (CalibrationOut::Pg(_), _) => {
            "pairwise-calibrated: each two-group bound holds, no joint proof for more than two groups"
        }
    };
    write_sidecar(
        args.common.output.as_deref(),
        "provenance.json",
        &Sidecar {
            meta: meta("synthesize", Some(args.seed), args),
            calibration: &calibration,
            prior: &prior,
            guarantee,
            releases,
        },
    )?;
    Ok(Outcome::Pass)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn pair(name: &str, v: &[f64]) -> CliResult<[f64; 2]> {
    match v {
        [x, y] => Ok([*x, *y]),
        _ => Err(CliError::Args(format!("--{name} needs exactly two values, got {}", v.len()))),
    }
}

fn audit_mechanism(args: &AuditArgs) -> CliResult<Mechanism> {
    let n = pair("n", &args.n)?;
    let mech = match args.method {
        MethodArg::Md => {
            let alpha = match args.alpha {
                Some(a) => a,
                None => calibrate_md(args.epsilon, args.y_total)?.alpha_min,
            };
            Mechanism::Md { alpha: [alpha; 2] }
        }
        MethodArg::Pg => match (&args.a, &args.b) {
            (Some(a), Some(b)) => Mechanism::Pg2 {
                a: pair("a", a)?,
                b: pair("b", b)?,
                n,
            },
            (None, None) => {
                let targets = match &args.targets {
                    Some(t) => pair("targets", t)?.to_vec(),
                    None => vec![args.y_total as f64 / (n[0] + n[1]); 2],
                };
                let cal = solve_pg(
                    args.epsilon,
                    args.y_total,
                    args.y_total,
                    &n,
                    &targets,
                    &SolverOptions::default(),
                )?;
                let prior = if args.exact { cal.prior_rounded_up() } else { cal.prior() };
                Mechanism::from_prior(&prior, &n)?
            }
            _ => return Err(CliError::Args("--a and --b must be given together".into())),
        },
    };
    Ok(if args.exact { mech.exact()? } else { mech })
}

fn audit(args: &AuditArgs) -> CliResult<Outcome> {
    check_epsilon(args.epsilon)?;
    let mech = audit_mechanism(args)?;
    let report = if args.y_total <= ENUMERATION_CAP {
        audit_synthesizer(&mech, args.epsilon, args.y_total)?
    } else {
        let mut rng = RngStream::new(args.seed, 0);
        spot_check(&mech, args.epsilon, args.y_total, args.samples, &mut rng)?
    };
    let pass = report.satisfied && report.routes_agree();
    eprintln!(
        "audit: max |log ratio| {} vs epsilon {} over {} cases: {}",
        report.max_abs_log_ratio,
        args.epsilon,
        report.instances_checked,
        if pass { "pass" } else { "FAIL" }
    );
    #[derive(Serialize)]
    struct Out<'a> {
        meta: Meta,
        mechanism: &'a Mechanism,
        exhaustive: bool,
        report: &'a pgsynth::audit::AuditReport,
    }
    let out = Out {
        meta: meta("audit", Some(args.seed), args),
        mechanism: &mech,
        exhaustive: args.y_total <= ENUMERATION_CAP,
        report: &report,
    };
    write_output(args.common.output.as_deref(), &json_bytes(&out))?;
    Ok(if pass { Outcome::Pass } else { Outcome::Fail })
}

fn study_config(args: &SimulateArgs) -> StudyConfig {
    let scenarios = args
        .scenarios
        .iter()
        .map(|s| {
            let (pop, rate) = s.modes();
            Scenario {
                groups: args.groups,
                y_total: args.y_total,
                n_total: args.n_total,
                states: args.states,
                pop_sigma: args.pop_sigma,
                rate_sigma: args.rate_sigma,
                state_share: args.state_share,
                seed: args.seed,
                ..Scenario::new(pop, rate)
            }
        })
        .collect();
    StudyConfig {
        scenarios,
        epsilons: args.epsilons.clone(),
        methods: args.methods.iter().map(|&m| m.into()).collect(),
        replicates: args.replicates,
        state_targets: match args.state_targets {
            StateTargetsArg::Observed => StateTargets::Observed,
            StateTargetsArg::Sanitized => StateTargets::Sanitized {
                epsilon: args.sanitize_epsilon,
            },
            StateTargetsArg::Truth => StateTargets::Truth,
        },
        md_alpha_override: None,
        seed: args.seed,
        threads: args.threads,
    }
}

/// Long-format rows `scenario,method,epsilon,metric,value,lo,hi`; a
/// `feasible` row flags cells where calibration failed.
pub fn study_csv(results: &[StudyResult]) -> String {
    let mut out = String::from("scenario,method,epsilon,metric,value,lo,hi\n");
    for r in results {
        let head = format!("{},{},{}", csv_field(&r.scenario), r.method.name(), r.epsilon);
        writeln!(out, "{head},feasible,{},,", u8::from(r.feasible)).expect("writing to a String");
        for (metric, band) in r.metrics() {
            writeln!(out, "{head},{metric},{},{},{}", band.mean, band.lo, band.hi).expect("writing to a String");
        }
    }
    out
}

fn simulate(args: &SimulateArgs) -> CliResult<Outcome> {
    let config = study_config(args);
    let results = match &args.input {
        Some(path) => {
            let data = ingest_counts(path)?;
            let world = World {
                name: "observed".into(),
                truth: Truth::from_dataset(&data)?,
                y_total: data.total(),
            };
            run_worlds(&config, &[world])?
        }
        None => run_study(&config)?,
    };
    write_output(args.common.output.as_deref(), study_csv(&results).as_bytes())?;
    let notes: Vec<String> = results
        .iter()
        .filter_map(|r| {
            r.note
                .as_ref()
                .map(|n| format!("{} {} epsilon={}: {n}", r.scenario, r.method.name(), r.epsilon))
        })
        .collect();
    for n in &notes {
        eprintln!("warning: {n}");
    }
    #[derive(Serialize)]
    struct Sidecar {
        meta: Meta,
        urban_rule: &'static str,
        band_rule: &'static str,
        notes: Vec<String>,
    }
    write_sidecar(
        args.common.output.as_deref(),
        "meta.json",
        &Sidecar {
            meta: meta("simulate", Some(args.seed), args),
            urban_rule: "top population quintile",
            band_rule: "2.5 and 97.5 percentiles over replicates",
            notes,
        },
    )?;
    Ok(Outcome::Pass)
}

fn lemma_check(args: &LemmaArgs) -> CliResult<Outcome> {
    if args.max_c == 0 || args.max_z == 0 || args.points == 0 {
        return Err(CliError::Args("--max-c, --max-z and --points must be at least 1".into()));
    }
    let rows = lemma1_suite(args.max_c, args.max_z, args.points, args.seed)?;
    let mut csv = String::from("c1,c2,z_total,p,q,equal\n");
    for r in &rows {
        writeln!(csv, "{},{},{},{},{},{}", r.c1, r.c2, r.z_total, r.p, r.q, r.equal).expect("writing to a String");
    }
    let failures = rows.iter().filter(|r| !r.equal).count();
    eprintln!("lemma-check: {} checks, {failures} mismatches", rows.len());
    write_output(args.common.output.as_deref(), csv.as_bytes())?;
    #[derive(Serialize)]
    struct Sidecar {
        meta: Meta,
        checks: usize,
        mismatches: usize,
    }
    write_sidecar(
        args.common.output.as_deref(),
        "meta.json",
        &Sidecar {
            meta: meta("lemma-check", Some(args.seed), args),
            checks: rows.len(),
            mismatches: failures,
        },
    )?;
    Ok(if failures == 0 { Outcome::Pass } else { Outcome::Fail })
}

/// Parse `3/2`, `0.5` or `1`.
pub fn parse_ratio(s: &str) -> CliResult<f64> {
    let bad = || CliError::Args(format!("cannot read {s:?} as a positive ratio"));
    let v = match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|_| bad())?;
            let d: f64 = d.trim().parse().map_err(|_| bad())?;
            n / d
        }
        None => s.trim().parse().map_err(|_| bad())?,
    };
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

fn bound_sweep(args: &BoundArgs) -> CliResult<Outcome> {
    let rs = args.r.iter().map(|s| parse_ratio(s)).collect::<CliResult<Vec<_>>>()?;
    let sweep = bound_accuracy_sweep(&bound_grid(args.max_y, args.max_a, &rs));
    let mut csv = String::from("y1,y2,a1,a2,r,z_total,log_ratio_c,bound,slack,exact\n");
    for row in &sweep.rows {
        let i = &row.instance;
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            i.y[0], i.y[1], i.a[0], i.a[1], i.r, i.z_total, row.exact_log_ratio_c, row.bound, row.slack, row.exact
        )
        .expect("writing to a String");
    }
    let s = &sweep.summary;
    eprintln!(
        "bound-sweep: {} rows ({} skipped), slack min {} median {} max {}, {} violations",
        s.rows, s.skipped, s.min, s.median, s.max, s.violations
    );
    write_output(args.common.output.as_deref(), csv.as_bytes())?;
    #[derive(Serialize)]
    struct Sidecar<'a> {
        meta: Meta,
        summary: &'a pgsynth::audit::SlackSummary,
        skipped: &'a [pgsynth::audit::SkippedInstance],
    }
    write_sidecar(
        args.common.output.as_deref(),
        "meta.json",
        &Sidecar {
            meta: meta("bound-sweep", None, args),
            summary: &sweep.summary,
            skipped: &sweep.skipped,
        },
    )?;
    Ok(if sweep.all_dominated() && s.rows > 0 {
        Outcome::Pass
    } else {
        Outcome::Fail
    })
}
