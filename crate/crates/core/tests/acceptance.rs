//! End-to-end acceptance checks. Runs without the libtest harness so that
//! one PASS/FAIL line per criterion is always printed.

use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;

use pgsynth::audit::{
    audit_synthesizer, bound_accuracy_sweep, default_bound_grid, sampler_tv, Mechanism, SLACK_TOLERANCE,
};
use pgsynth::dirichlet::{calibrate_md, md_log_pmf, md_synthesize};
use pgsynth::exact::lemma1_suite;
use pgsynth::poisson_gamma::{pg_conditional_log_pmf_2, pg_synthesize, solve_pg, SolverOptions};
use pgsynth::study::{run_study, StudyConfig, StudyMethod, StudyResult};
use pgsynth::{CountDataset, PriorSpec, RngStream, Strategy};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion_1() -> Check {
    let cal = calibrate_md(7.0, 10_000).map_err(|e| e.to_string())?;
    ensure((cal.alpha_min - 9.127).abs() <= 0.005, || format!("alpha_min = {}", cal.alpha_min))?;
    Ok(format!("alpha_min = {:.4}", cal.alpha_min))
}

fn criterion_2() -> Check {
    let epsilons = [2f64.ln(), 1.0, 2.0, 3.0, 7.0];
    let populations = [[1.0, 1.0], [1000.0, 3000.0], [250.0, 10_000.0]];
    let mut audits = 0;
    let mut worst_md_identity: f64 = 0.0;
    for &eps in &epsilons {
        for y_total in 1..=6u64 {
            let alpha = calibrate_md(eps, y_total).map_err(|e| e.to_string())?.alpha_min;
            let md = audit_synthesizer(&Mechanism::Md { alpha: [alpha; 2] }, eps, y_total)
                .map_err(|e| e.to_string())?;
            ensure(md.satisfied && md.routes_agree(), || {
                format!("md eps={eps} y={y_total}: max {}", md.max_abs_log_ratio)
            })?;
            let expected = ((y_total as f64 + alpha) / alpha).ln();
            worst_md_identity = worst_md_identity.max((md.max_abs_log_ratio - expected).abs());
            audits += 1;

            for n in populations {
                let national = y_total as f64 / (n[0] + n[1]);
                let cal = solve_pg(eps, y_total, y_total, &n, &[national; 2], &SolverOptions::default())
                    .map_err(|e| e.to_string())?;
                let float = Mechanism::from_prior(&cal.prior(), &n).map_err(|e| e.to_string())?;
                let exact = Mechanism::from_prior(&cal.prior_rounded_up(), &n)
                    .and_then(|m| m.exact())
                    .map_err(|e| e.to_string())?;
                for mech in [float, exact] {
                    let r = audit_synthesizer(&mech, eps, y_total).map_err(|e| e.to_string())?;
                    ensure(r.satisfied && r.routes_agree(), || {
                        format!("{mech:?} eps={eps} y={y_total}: max {} route gap {}", r.max_abs_log_ratio, r.route_discrepancy)
                    })?;
                    audits += 1;
                }
            }
        }
    }
    ensure(worst_md_identity <= 1e-12, || {
        format!("uniform md max differs from ln((z+a)/a) by {worst_md_identity:e}")
    })?;
    Ok(format!(
        "{audits} audits satisfied; uniform md max matches ln((z+a)/a) to {worst_md_identity:.1e}"
    ))
}

fn criterion_3() -> Check {
    let rows = lemma1_suite(4, 10, 5, 2024).map_err(|e| e.to_string())?;
    let failures = rows.iter().filter(|r| !r.equal).count();
    ensure(rows.len() == 800 && failures == 0, || {
        format!("{} checks, {failures} mismatches", rows.len())
    })?;
    Ok(format!("{} exact checks, 0 mismatches", rows.len()))
}

fn criterion_4() -> Check {
    let sweep = bound_accuracy_sweep(&default_bound_grid());
    let s = &sweep.summary;
    ensure(s.rows >= 500, || format!("only {} valid instances", s.rows))?;
    ensure(s.min >= SLACK_TOLERANCE && sweep.all_dominated(), || {
        format!("{} violations, min slack {:e}", s.violations, s.min)
    })?;
    Ok(format!(
        "{} instances ({} exact), slack min {:.2e} median {:.4} max {:.4}",
        s.rows,
        sweep.rows.iter().filter(|r| r.exact).count(),
        s.min,
        s.median,
        s.max
    ))
}

fn criterion_5() -> Check {
    let mut rng = RngStream::new(5, 0);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for _ in 0..500 {
        let z_total = rng.random_range(1..=40u64);
        let y1 = rng.random_range(0..=z_total);
        let y = [y1, z_total - y1];
        let alpha = rng.random_range(0.05..50.0);
        let n = rng.random_range(1.0..1e6);
        let rate = rng.random_range(1e-6..1.0);
        let b = alpha / rate;
        for z1 in 0..=z_total {
            let pg = pg_conditional_log_pmf_2(z1, y, [alpha; 2], [b; 2], [n; 2], z_total)
                .map_err(|e| e.to_string())?;
            let md = md_log_pmf(&[z1, z_total - z1], &y, &[alpha; 2]).map_err(|e| e.to_string())?;
            worst = worst.max((pg - md).abs());
            cases += 1;
        }
    }
    ensure(worst <= 1e-10, || format!("max |pg - md| = {worst:e}"))?;
    Ok(format!("{cases} pmf values, max |pg - md| = {worst:.1e}"))
}

fn find<'a>(results: &'a [StudyResult], scenario: &str, method: StudyMethod, eps: f64) -> Result<&'a StudyResult, String> {
    results
        .iter()
        .find(|r| r.scenario == scenario && r.method == method && r.epsilon == eps)
        .ok_or_else(|| format!("no result for {scenario} {} {eps}", method.name()))
}

fn criterion_6() -> Check {
    let config = StudyConfig::standard(2024);
    let results = run_study(&config).map_err(|e| e.to_string())?;
    ensure(results.iter().all(|r| r.feasible), || "a study cell was infeasible".into())?;
    let uniform = config.scenarios[0].name();
    let het_pop = config.scenarios[1].name();

    // (a)
    for &eps in &config.epsilons {
        let md = find(&results, &uniform, StudyMethod::Md, eps)?;
        let pg = find(&results, &uniform, StudyMethod::PgNational, eps)?;
        ensure(md.rmse.overlaps(&pg.rmse), || format!("(a) bands disjoint at eps={eps}"))?;
    }
    // (b) and (c)
    let mut min_ratio = f64::INFINITY;
    for &eps in &config.epsilons {
        let md = find(&results, &het_pop, StudyMethod::Md, eps)?;
        for m in [StudyMethod::PgNational, StudyMethod::PgState] {
            let pg = find(&results, &het_pop, m, eps)?;
            ensure(pg.rmse.mean < md.rmse.mean, || {
                format!("(b) {} mean {} not below md {} at eps={eps}", m.name(), pg.rmse.mean, md.rmse.mean)
            })?;
            if eps <= 1.0 {
                ensure(pg.rmse.hi < md.rmse.lo, || format!("(b) {} band meets md at eps={eps}", m.name()))?;
            }
        }
        if eps <= 1.0 {
            let ratio = md.rural_rate.mean / md.urban_rate.mean;
            ensure(ratio >= 1.5, || format!("(c) rural/urban = {ratio} at eps={eps}"))?;
            min_ratio = min_ratio.min(ratio);
        }
    }
    // (d)
    let limit = StudyConfig {
        scenarios: vec![config.scenarios[1].clone()],
        epsilons: vec![1.0],
        methods: vec![StudyMethod::Md],
        md_alpha_override: Some(1e9),
        ..config.clone()
    };
    let contrast = run_study(&limit).map_err(|e| e.to_string())?[0].region_contrast.mean;
    ensure((contrast - 7.0).abs() <= 0.5, || format!("(d) contrast = {contrast}"))?;
    Ok(format!(
        "(a) overlap at every eps; (b) pg below md; (c) rural/urban >= {min_ratio:.1}; (d) contrast {contrast:.3}"
    ))
}

fn criterion_7() -> Check {
    let mut rng = RngStream::new(7, 0);
    let mut worst: f64 = 0.0;
    for k in 0..10u64 {
        let y_total = rng.random_range(1..=12u64);
        let y1 = rng.random_range(0..=y_total);
        let n = [rng.random_range(100.0..1e5), rng.random_range(100.0..1e5)];
        let a = [rng.random_range(0.5..20.0), rng.random_range(0.5..20.0)];
        let b = [a[0] / rng.random_range(1e-4..1e-2), a[1] / rng.random_range(1e-4..1e-2)];
        let data = CountDataset::unlabeled(vec![y1, y_total - y1], n.to_vec()).map_err(|e| e.to_string())?;
        let prior = PriorSpec::poisson_gamma(a.to_vec(), b.to_vec()).map_err(|e| e.to_string())?;
        let mut draws = RngStream::new(7, k + 1);
        let tv = sampler_tv(&data, &prior, Strategy::ExactEnumeration2, 100_000, &mut draws)
            .map_err(|e| e.to_string())?;
        ensure(tv < 0.01, || format!("instance {k}: TV {tv}"))?;
        worst = worst.max(tv);
    }
    Ok(format!("10 instances x 1e5 draws, max TV {worst:.4}"))
}

fn criterion_8() -> Check {
    let data = CountDataset::unlabeled(vec![3, 0, 7, 2, 9], vec![1e3, 5e2, 4e3, 2e3, 8e3]).map_err(|e| e.to_string())?;
    let md = PriorSpec::multinomial_dirichlet(vec![4.0; 5]).map_err(|e| e.to_string())?;
    let pg = PriorSpec::poisson_gamma_with_targets(vec![3.0; 5], vec![1e-3; 5]).map_err(|e| e.to_string())?;
    let draw = |seed| -> Result<String, String> {
        let mut rng = RngStream::new(seed, 0);
        let a = md_synthesize(&data, &md, &mut rng).map_err(|e| e.to_string())?;
        let b = pg_synthesize(&data, &pg, Strategy::LambdaThenMultinomial, &mut rng).map_err(|e| e.to_string())?;
        Ok(format!("{:?}{:?}", a.counts, b.counts))
    };
    ensure(draw(11)? == draw(11)?, || "synthesizers differ across identical runs".into())?;

    let mut config = StudyConfig::standard(8);
    for s in &mut config.scenarios {
        s.groups = 60;
        s.y_total = 400;
    }
    config.replicates = 8;
    let run = |threads| -> Result<String, String> {
        let c = StudyConfig {
            threads: Some(threads),
            ..config.clone()
        };
        let r = run_study(&c).map_err(|e| e.to_string())?;
        serde_json::to_string(&r).map_err(|e| e.to_string())
    };
    let one = run(1)?;
    ensure(one == run(1)? && one == run(3)? && one == run(8)?, || {
        "study output depends on the run or the worker count".into()
    })?;
    Ok(format!("identical synthesizer draws; study output of {} bytes identical for 1, 3 and 8 workers", one.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 calibration value", criterion_1),
        ("2 exhaustive privacy audit", criterion_2),
        ("3 exact summation identity", criterion_3),
        ("4 normaliser bound dominance", criterion_4),
        ("5 md/pg equivalence", criterion_5),
        ("6 simulation study", criterion_6),
        ("7 sampler vs pmf", criterion_7),
        ("8 reproducibility", criterion_8),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name} ({secs:.2}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name} ({secs:.2}s): {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
