//! Seeded random streams and the samplers built on them.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use crate::error::{domain, Result};

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8, whose stream parameter gives 2^64 independent streams per
/// seed, so replicate `k` can own stream `k` without coordination.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    /// Stream for a task addressed by a tuple of small indices, e.g.
    /// `(scenario, replicate, method)`.
    pub fn for_task(seed: u64, path: &[u64]) -> Self {
        // splitmix64 folding keeps distinct paths on distinct stream ids
        let id = path.iter().fold(0x9E37_79B9_7F4A_7C15u64, |h, &k| {
            let mut z = h ^ k.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6);
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        });
        Self::new(seed, id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw on `(0, 1]`, safe to take the log of.
    fn open_unit(&mut self) -> f64 {
        1.0 - self.rng.random::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Log of a Gamma(shape, 1) variate.
///
/// Marsaglia-Tsang squeeze-rejection for `shape >= 1`; smaller shapes draw at
/// `shape + 1` and multiply by `U^(1/shape)`, which is added in log space so
/// tiny shapes do not underflow.
pub fn sample_log_gamma(shape: f64, rng: &mut RngStream) -> Result<f64> {
    if !(shape > 0.0) || !shape.is_finite() {
        return domain(format!("gamma shape must be positive and finite, got {shape}"));
    }
    if shape < 1.0 {
        let boosted = marsaglia_tsang(shape + 1.0, rng).ln();
        let u = rng.open_unit();
        return Ok(boosted + u.ln() / shape);
    }
    Ok(marsaglia_tsang(shape, rng).ln())
}

fn marsaglia_tsang(shape: f64, rng: &mut RngStream) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = rng.open_unit();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Gamma draw with the given shape and rate (mean `shape / rate`).
pub fn sample_gamma(shape: f64, rate: f64, rng: &mut RngStream) -> Result<f64> {
    if !(rate > 0.0) || !rate.is_finite() {
        return domain(format!("gamma rate must be positive and finite, got {rate}"));
    }
    Ok(sample_log_gamma(shape, rng)?.exp() / rate)
}

/// Dirichlet draw via normalised gamma variates, normalised in log space.
///
/// Components that underflow are floored at the smallest normal double and the
/// vector renormalised, keeping every component strictly positive.
pub fn sample_dirichlet(alphas: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
    if alphas.is_empty() {
        return domain("dirichlet needs at least one concentration");
    }
    let logs = alphas
        .iter()
        .map(|&a| sample_log_gamma(a, rng))
        .collect::<Result<Vec<_>>>()?;
    let norm = crate::special::log_sum_exp(&logs);
    let mut probs: Vec<f64> = logs
        .iter()
        .map(|l| (l - norm).exp().max(f64::MIN_POSITIVE))
        .collect();
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    Ok(probs)
}

/// Laplace(0, scale) draw as a difference of two unit exponentials.
pub fn sample_laplace(scale: f64, rng: &mut RngStream) -> Result<f64> {
    if !(scale >= 0.0) || !scale.is_finite() {
        return domain(format!("laplace scale must be finite and non-negative, got {scale}"));
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    let e1 = -rng.open_unit().ln();
    let e2 = -rng.open_unit().ln();
    Ok(scale * (e1 - e2))
}

/// Multinomial draw by sequential conditional binomials; the last cell takes
/// the remainder so the counts always sum to `total`.
pub fn sample_multinomial(total: u64, probs: &[f64], rng: &mut RngStream) -> Result<Vec<u64>> {
    if probs.is_empty() {
        return domain("multinomial needs at least one cell");
    }
    if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return domain("multinomial probabilities must be finite and non-negative");
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return domain(format!("multinomial probabilities must sum to 1, got {sum}"));
    }
    let mut counts = vec![0u64; probs.len()];
    let mut remaining = total;
    let mut mass = sum;
    let last = probs.len() - 1;
    for (i, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i == last {
            counts[i] = remaining;
            break;
        }
        let cond = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let k = if cond >= 1.0 {
            remaining
        } else if cond <= 0.0 {
            0
        } else {
            Binomial::new(remaining, cond)
                .map_err(|e| crate::Error::Domain(e.to_string()))?
                .sample(rng)
        };
        counts[i] = k;
        remaining -= k;
        mass -= p;
    }
    Ok(counts)
}
