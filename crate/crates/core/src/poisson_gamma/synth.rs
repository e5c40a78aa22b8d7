use rand::Rng;

use super::{pg_conditional_pmf_2, TARGET_FLOOR_EVENTS};
use crate::error::{domain, usage, Result};
use crate::model::{CountDataset, Method, PriorSpec, Provenance, Strategy, SyntheticDataset};
use crate::sampling::{sample_laplace, sample_log_gamma, sample_multinomial, RngStream};
use crate::special::log_sum_exp;

/// Draw a release with `Σ z_i = y·` from the Poisson-gamma posterior predictive.
///
/// `ExactEnumeration2` inverts the CDF of the exact two-group conditional pmf.
/// `LambdaThenMultinomial` draws `λ*_i` from each group's gamma posterior and
/// allocates `y·` events with probabilities `n_i λ*_i / Σ n_j λ*_j`; it works
/// for any number of groups.
pub fn pg_synthesize(
    data: &CountDataset,
    prior: &PriorSpec,
    strategy: Strategy,
    rng: &mut RngStream,
) -> Result<SyntheticDataset> {
    let (a, b) = match prior {
        PriorSpec::PoissonGamma { a, b, .. } => (a, b),
        PriorSpec::MultinomialDirichlet { .. } => {
            return usage("pg_synthesize needs a Poisson-gamma prior");
        }
    };
    if a.len() != data.len() {
        return usage(format!(
            "prior has {} groups but the dataset has {}",
            a.len(),
            data.len()
        ));
    }
    let counts = match strategy {
        Strategy::ExactEnumeration2 => {
            if data.len() != 2 {
                return usage(format!(
                    "exact enumeration handles exactly two groups, got {}",
                    data.len()
                ));
            }
            let y = [data.counts()[0], data.counts()[1]];
            let n = [data.populations()[0], data.populations()[1]];
            let pmf = pg_conditional_pmf_2(y, [a[0], a[1]], [b[0], b[1]], n, data.total())?;
            let z1 = inverse_cdf(&pmf, rng.random::<f64>());
            vec![z1, data.total() - z1]
        }
        Strategy::LambdaThenMultinomial => {
            let log_weights = data
                .counts()
                .iter()
                .zip(data.populations())
                .zip(a.iter().zip(b))
                .map(|((&y, &n), (&a, &b))| {
                    let log_rate = sample_log_gamma(y as f64 + a, rng)? - (n + b).ln();
                    Ok(n.ln() + log_rate)
                })
                .collect::<Result<Vec<_>>>()?;
            let norm = log_sum_exp(&log_weights);
            let probs: Vec<f64> = log_weights.iter().map(|w| (w - norm).exp()).collect();
            sample_multinomial(data.total(), &probs, rng)?
        }
        Strategy::DirichletThenMultinomial => {
            return usage("the Dirichlet strategy belongs to the multinomial-Dirichlet synthesizer");
        }
    };
    Ok(SyntheticDataset::new(
        counts,
        Provenance {
            method: Method::PoissonGamma,
            epsilon: None,
            seed: rng.seed(),
            stream_id: rng.stream_id(),
            strategy,
        },
    ))
}

fn inverse_cdf(pmf: &[f64], u: f64) -> u64 {
    let mut acc = 0.0;
    for (k, p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return k as u64;
        }
    }
    // rounding left u above the accumulated mass; take the last positive cell
    pmf.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u64
}

/// Per-group state rates `(Σ_s y_j + e_s) / Σ_s n_j` with one Laplace draw
/// `e_s ~ Lap(1/noise_epsilon)` per state, floored at `0.1 / Σ_s n_j`.
///
/// The noise scale is a user choice; no composed budget is claimed for it.
pub fn sanitize_state_rates(
    data: &CountDataset,
    noise_epsilon: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    sanitize_state_rates_with_floor(data, noise_epsilon, TARGET_FLOOR_EVENTS, rng)
}

/// As [`sanitize_state_rates`] with the floor given as a count of events per
/// state.
pub fn sanitize_state_rates_with_floor(
    data: &CountDataset,
    noise_epsilon: f64,
    floor_events: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if !(noise_epsilon > 0.0) {
        return domain(format!("noise epsilon must be positive, got {noise_epsilon}"));
    }
    if !(floor_events > 0.0) || !floor_events.is_finite() {
        return domain(format!("floor must be positive, got {floor_events}"));
    }
    if let Some(i) = data.state_ids().iter().position(|s| s.trim().is_empty()) {
        return usage(format!("group {i} has no state label"));
    }
    let (names, index) = data.state_index();
    let mut events = vec![0.0; names.len()];
    let mut pops = vec![0.0; names.len()];
    for ((&s, &y), &n) in index.iter().zip(data.counts()).zip(data.populations()) {
        events[s] += y as f64;
        pops[s] += n;
    }
    let scale = if noise_epsilon.is_infinite() { 0.0 } else { 1.0 / noise_epsilon };
    let state_rates = events
        .iter()
        .zip(&pops)
        .map(|(&y, &n)| {
            let noisy = y + sample_laplace(scale, rng)?;
            Ok(noisy.max(floor_events) / n)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(index.iter().map(|&s| state_rates[s]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_states() -> CountDataset {
        CountDataset::new(
            vec![5, 15, 1, 3],
            vec![100.0, 300.0, 50.0, 50.0],
            (0..4).map(|i| format!("c{i}")).collect(),
            vec!["A".into(), "A".into(), "B".into(), "B".into()],
        )
        .unwrap()
    }

    #[test]
    fn zero_noise_gives_crude_state_rates() {
        let mut rng = RngStream::new(0, 0);
        let r = sanitize_state_rates(&two_states(), f64::INFINITY, &mut rng).unwrap();
        assert_eq!(r, vec![0.05, 0.05, 0.04, 0.04]);
    }

    #[test]
    fn states_are_independent() {
        // perturbing state B's counts leaves state A's noiseless rate alone
        let mut rng = RngStream::new(0, 0);
        let mut other = two_states();
        other = CountDataset::new(
            vec![5, 15, 9, 9],
            other.populations().to_vec(),
            other.group_ids().to_vec(),
            other.state_ids().to_vec(),
        )
        .unwrap();
        let r = sanitize_state_rates(&other, f64::INFINITY, &mut rng).unwrap();
        assert_eq!(r[0], 0.05);
        assert_eq!(r[2], 18.0 / 100.0);
    }

    #[test]
    fn sanitized_rate_is_unbiased() {
        let data = CountDataset::new(
            vec![60, 40],
            vec![5e5, 5e5],
            vec!["a".into(), "b".into()],
            vec!["S".into(), "S".into()],
        )
        .unwrap();
        let mut rng = RngStream::new(3, 0);
        let draws = 20_000;
        let noise_eps = 0.5;
        let mean = (0..draws)
            .map(|_| sanitize_state_rates(&data, noise_eps, &mut rng).unwrap()[0])
            .sum::<f64>()
            / draws as f64;
        // Var(e) = 2 / eps'^2, divided by n^2
        let se = (2.0f64).sqrt() / noise_eps / 1e6 / (draws as f64).sqrt();
        assert!((mean - 1e-4).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn missing_state_label_is_rejected() {
        let data = CountDataset::new(
            vec![1, 1],
            vec![1.0, 1.0],
            vec!["a".into(), "b".into()],
            vec!["S".into(), "".into()],
        )
        .unwrap();
        let mut rng = RngStream::new(0, 0);
        assert!(matches!(
            sanitize_state_rates(&data, 1.0, &mut rng),
            Err(crate::Error::Usage(_))
        ));
    }

    #[test]
    fn strategy_checks() {
        let data = CountDataset::unlabeled(vec![1, 2, 3], vec![1.0; 3]).unwrap();
        let prior = PriorSpec::poisson_gamma(vec![1.0; 3], vec![1.0; 3]).unwrap();
        let mut rng = RngStream::new(0, 0);
        assert!(pg_synthesize(&data, &prior, Strategy::ExactEnumeration2, &mut rng).is_err());
        assert!(pg_synthesize(&data, &prior, Strategy::DirichletThenMultinomial, &mut rng).is_err());
        let md = PriorSpec::multinomial_dirichlet(vec![1.0; 3]).unwrap();
        assert!(pg_synthesize(&data, &md, Strategy::LambdaThenMultinomial, &mut rng).is_err());
        let z = pg_synthesize(&data, &prior, Strategy::LambdaThenMultinomial, &mut rng).unwrap();
        assert_eq!(z.total, 6);
    }

    #[test]
    fn inverse_cdf_edges() {
        assert_eq!(inverse_cdf(&[0.5, 0.5], 0.0), 0);
        assert_eq!(inverse_cdf(&[0.5, 0.5], 0.75), 1);
        assert_eq!(inverse_cdf(&[0.5, 0.4999999, 0.0], 0.99999999999), 1);
    }
}
