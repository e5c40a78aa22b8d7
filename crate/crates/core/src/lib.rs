//! Differentially private synthetic count data.
//!
//! Two Bayesian synthesizers release group-level counts whose total matches the
//! confidential total: a multinomial-Dirichlet model with a uniform prior and a
//! Poisson-gamma model whose prior can follow a target rate per group. Both are
//! calibrated so that every release is ε-differentially private with respect to
//! moving one event between groups.
//!
//! ```
//! use pgsynth::poisson_gamma::{calibrate_pg, pg_synthesize, TargetRule};
//! use pgsynth::{CountDataset, RngStream, Strategy};
//!
//! let data = CountDataset::unlabeled(vec![3, 5, 1, 0], vec![1e3, 4e3, 2e3, 5e2])?;
//! let cal = calibrate_pg(1.0, &data, &TargetRule::National)?;
//! let mut rng = RngStream::new(42, 0);
//! let release = pg_synthesize(&data, &cal.prior(), Strategy::LambdaThenMultinomial, &mut rng)?;
//! assert_eq!(release.counts.iter().sum::<u64>(), data.total());
//! # Ok::<(), pgsynth::Error>(())
//! ```

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod dirichlet;
pub mod error;
pub mod exact;
pub mod model;
pub mod poisson_gamma;
pub mod sampling;
pub mod special;
pub mod study;

pub use error::{Error, Result};
pub use model::{CountDataset, Method, PriorSpec, Provenance, Strategy, SyntheticDataset};
pub use sampling::RngStream;
