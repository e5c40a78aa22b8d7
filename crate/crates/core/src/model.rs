//! Domain types shared by the synthesizers.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{domain, usage, Result};

/// Observed event counts per group with their populations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountDataset {
    counts: Vec<u64>,
    populations: Vec<f64>,
    group_ids: Vec<String>,
    state_ids: Vec<String>,
    total: u64,
}

impl CountDataset {
    pub fn new(
        counts: Vec<u64>,
        populations: Vec<f64>,
        group_ids: Vec<String>,
        state_ids: Vec<String>,
    ) -> Result<Self> {
        let len = counts.len();
        if len < 2 {
            return usage(format!("a dataset needs at least two groups, got {len}"));
        }
        if populations.len() != len || group_ids.len() != len || state_ids.len() != len {
            return usage("counts, populations, group ids and state ids must have equal length");
        }
        if let Some((i, n)) = populations
            .iter()
            .enumerate()
            .find(|(_, n)| !(**n > 0.0) || !n.is_finite())
        {
            return domain(format!("population of group {i} must be positive, got {n}"));
        }
        let mut seen = HashSet::with_capacity(len);
        if let Some(dup) = group_ids.iter().find(|g| !seen.insert(g.as_str())) {
            return usage(format!("duplicate group id {dup:?}"));
        }
        let total = counts.iter().sum();
        Ok(Self {
            counts,
            populations,
            group_ids,
            state_ids,
            total,
        })
    }

    /// Dataset with generated labels `g0, g1, ...` and a single state `s0`.
    pub fn unlabeled(counts: Vec<u64>, populations: Vec<f64>) -> Result<Self> {
        let len = counts.len();
        let groups = (0..len).map(|i| format!("g{i}")).collect();
        let states = vec!["s0".to_string(); len];
        Self::new(counts, populations, groups, states)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn populations(&self) -> &[f64] {
        &self.populations
    }

    pub fn group_ids(&self) -> &[String] {
        &self.group_ids
    }

    pub fn state_ids(&self) -> &[String] {
        &self.state_ids
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn total_population(&self) -> f64 {
        self.populations.iter().sum()
    }

    /// Overall crude rate `y· / n·`.
    pub fn national_rate(&self) -> f64 {
        self.total as f64 / self.total_population()
    }

    /// Distinct state labels in first-appearance order, and the state index of
    /// every group.
    pub fn state_index(&self) -> (Vec<String>, Vec<usize>) {
        let mut names: Vec<String> = Vec::new();
        let index = self
            .state_ids
            .iter()
            .map(|s| match names.iter().position(|n| n == s) {
                Some(k) => k,
                None => {
                    names.push(s.clone());
                    names.len() - 1
                }
            })
            .collect();
        (names, index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MultinomialDirichlet,
    PoissonGamma,
}

/// Prior hyperparameters for one of the two synthesizers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PriorSpec {
    MultinomialDirichlet {
        alpha: Vec<f64>,
    },
    PoissonGamma {
        a: Vec<f64>,
        b: Vec<f64>,
        target_rates: Option<Vec<f64>>,
    },
}

fn check_positive(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return usage(format!("{name} must not be empty"));
    }
    match v.iter().position(|x| !(*x > 0.0) || !x.is_finite()) {
        Some(i) => domain(format!("{name}[{i}] must be positive and finite, got {}", v[i])),
        None => Ok(()),
    }
}

impl PriorSpec {
    pub fn multinomial_dirichlet(alpha: Vec<f64>) -> Result<Self> {
        check_positive("alpha", &alpha)?;
        Ok(Self::MultinomialDirichlet { alpha })
    }

    pub fn poisson_gamma(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        check_positive("a", &a)?;
        check_positive("b", &b)?;
        if a.len() != b.len() {
            return usage("a and b must have equal length");
        }
        Ok(Self::PoissonGamma {
            a,
            b,
            target_rates: None,
        })
    }

    /// Gamma prior with mean `target_rates[i]`, i.e. `b_i = a_i / λ0_i`.
    pub fn poisson_gamma_with_targets(a: Vec<f64>, target_rates: Vec<f64>) -> Result<Self> {
        check_positive("a", &a)?;
        check_positive("target_rates", &target_rates)?;
        if a.len() != target_rates.len() {
            return usage("a and target rates must have equal length");
        }
        let b = a.iter().zip(&target_rates).map(|(a, l)| a / l).collect();
        Ok(Self::PoissonGamma {
            a,
            b,
            target_rates: Some(target_rates),
        })
    }

    pub fn method(&self) -> Method {
        match self {
            Self::MultinomialDirichlet { .. } => Method::MultinomialDirichlet,
            Self::PoissonGamma { .. } => Method::PoissonGamma,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::MultinomialDirichlet { alpha } => alpha.len(),
            Self::PoissonGamma { a, .. } => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How a synthetic dataset was drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Posterior Dirichlet draw followed by a multinomial allocation.
    DirichletThenMultinomial,
    /// Inverse-CDF sampling from the exact two-group conditional pmf.
    ExactEnumeration2,
    /// Posterior gamma rates followed by a multinomial allocation.
    LambdaThenMultinomial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: Method,
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub stream_id: u64,
    pub strategy: Strategy,
}

/// Released counts `z` with `Σ z_i = z·`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub counts: Vec<u64>,
    pub total: u64,
    pub provenance: Provenance,
}

impl SyntheticDataset {
    pub(crate) fn new(counts: Vec<u64>, provenance: Provenance) -> Self {
        let total = counts.iter().sum();
        Self {
            counts,
            total,
            provenance,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.provenance.epsilon = Some(epsilon);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_validation() {
        assert!(CountDataset::unlabeled(vec![1], vec![1.0]).is_err());
        assert!(CountDataset::unlabeled(vec![1, 2], vec![1.0]).is_err());
        assert!(CountDataset::unlabeled(vec![1, 2], vec![1.0, 0.0]).is_err());
        let dup = CountDataset::new(
            vec![1, 2],
            vec![1.0, 1.0],
            vec!["a".into(), "a".into()],
            vec!["s".into(), "s".into()],
        );
        assert!(matches!(dup, Err(crate::Error::Usage(_))));
        let d = CountDataset::unlabeled(vec![3, 4], vec![10.0, 30.0]).unwrap();
        assert_eq!(d.total(), 7);
        assert_eq!(d.national_rate(), 7.0 / 40.0);
    }

    #[test]
    fn state_index_order() {
        let d = CountDataset::new(
            vec![1, 2, 3],
            vec![1.0; 3],
            vec!["a".into(), "b".into(), "c".into()],
            vec!["NY".into(), "NM".into(), "NY".into()],
        )
        .unwrap();
        let (names, idx) = d.state_index();
        assert_eq!(names, vec!["NY", "NM"]);
        assert_eq!(idx, vec![0, 1, 0]);
    }

    #[test]
    fn prior_targets_fix_b() {
        let p = PriorSpec::poisson_gamma_with_targets(vec![2.0, 3.0], vec![0.5, 0.25]).unwrap();
        match p {
            PriorSpec::PoissonGamma { b, .. } => assert_eq!(b, vec![4.0, 12.0]),
            _ => unreachable!(),
        }
        assert!(PriorSpec::multinomial_dirichlet(vec![1.0, -1.0]).is_err());
        assert!(PriorSpec::poisson_gamma(vec![1.0], vec![1.0, 2.0]).is_err());
    }
}
