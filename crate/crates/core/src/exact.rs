//! Exact rational arithmetic for the two-group normaliser.
//!
//! Nothing here touches floating point except [`ln_rational`], which converts a
//! finished exact value for comparison with the log-space code.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::sampling::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Var {
    P,
    Q,
}

/// Polynomial in `p` and `q` with rational coefficients keyed by
/// `(deg_p, deg_q)`. Zero coefficients are never stored, so two equal
/// polynomials have equal maps.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BivariatePoly {
    coeffs: BTreeMap<(u32, u32), BigRational>,
}

impl BivariatePoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn monomial(coeff: BigRational, deg_p: u32, deg_q: u32) -> Self {
        let mut poly = Self::zero();
        poly.add_term((deg_p, deg_q), coeff);
        poly
    }

    /// Build from `(coeff, deg_p, deg_q)` triples; repeated degrees accumulate.
    pub fn from_terms<I>(terms: I) -> Self
    where
        I: IntoIterator<Item = (BigRational, u32, u32)>,
    {
        let mut poly = Self::zero();
        for (c, dp, dq) in terms {
            poly.add_term((dp, dq), c);
        }
        poly
    }

    fn add_term(&mut self, key: (u32, u32), coeff: BigRational) {
        if coeff.is_zero() {
            return;
        }
        let entry = self.coeffs.entry(key).or_insert_with(BigRational::zero);
        *entry += coeff;
        if entry.is_zero() {
            self.coeffs.remove(&key);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeff(&self, deg_p: u32, deg_q: u32) -> BigRational {
        self.coeffs
            .get(&(deg_p, deg_q))
            .cloned()
            .unwrap_or_else(BigRational::zero)
    }

    /// Nonzero terms in ascending `(deg_p, deg_q)` order.
    pub fn terms(&self) -> impl Iterator<Item = (&(u32, u32), &BigRational)> {
        self.coeffs.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.coeffs.len()
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (&k, c) in &other.coeffs {
            out.add_term(k, c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (&k, c) in &other.coeffs {
            out.add_term(k, -c.clone());
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for (&(p1, q1), c1) in &self.coeffs {
            for (&(p2, q2), c2) in &other.coeffs {
                out.add_term((p1 + p2, q1 + q2), c1 * c2);
            }
        }
        out
    }

    /// `self · (q − p)`
    pub fn times_q_minus_p(&self) -> Self {
        let mut out = Self::zero();
        for (&(dp, dq), c) in &self.coeffs {
            out.add_term((dp, dq + 1), c.clone());
            out.add_term((dp + 1, dq), -c.clone());
        }
        out
    }

    /// Exact quotient by `(q − p)`.
    ///
    /// Synthetic division in `q` with root `q = p`: writing the numerator as
    /// `Σ_k A_k(p) q^k`, the quotient coefficients satisfy
    /// `B_{k−1} = A_k + p·B_k` and the remainder `A_0 + p·B_0` must vanish.
    pub fn divide_by_q_minus_p(&self) -> Result<Self> {
        let Some(max_q) = self.coeffs.keys().map(|&(_, dq)| dq).max() else {
            return Ok(Self::zero());
        };
        // slices[k] = A_k(p) as deg_p -> coeff
        let mut slices: Vec<BTreeMap<u32, BigRational>> = vec![BTreeMap::new(); max_q as usize + 1];
        for (&(dp, dq), c) in &self.coeffs {
            slices[dq as usize].insert(dp, c.clone());
        }
        let mut quotient = Self::zero();
        let mut carry: BTreeMap<u32, BigRational> = BTreeMap::new();
        for k in (0..=max_q as usize).rev() {
            // next = A_k + p·carry
            let mut next = std::mem::take(&mut slices[k]);
            for (dp, c) in carry {
                let slot = next.entry(dp + 1).or_insert_with(BigRational::zero);
                *slot += c;
            }
            next.retain(|_, c| !c.is_zero());
            if k == 0 {
                if let Some((dp, c)) = next.iter().next() {
                    return domain(format!(
                        "polynomial is not divisible by (q - p): remainder has term {c}·p^{dp}"
                    ));
                }
                break;
            }
            for (&dp, c) in &next {
                quotient.add_term((dp, k as u32 - 1), c.clone());
            }
            carry = next;
        }
        Ok(quotient)
    }

    /// `times`-th partial derivative in `var`.
    pub fn differentiate(&self, var: Var, times: u32) -> Self {
        if times == 0 {
            return self.clone();
        }
        let mut out = Self::zero();
        for (&(dp, dq), c) in &self.coeffs {
            let deg = match var {
                Var::P => dp,
                Var::Q => dq,
            };
            if deg < times {
                continue;
            }
            let falling = falling_factorial(deg, times);
            let key = match var {
                Var::P => (dp - times, dq),
                Var::Q => (dp, dq - times),
            };
            out.add_term(key, c * BigRational::from_integer(falling));
        }
        out
    }

    pub fn eval(&self, p: &BigRational, q: &BigRational) -> BigRational {
        self.coeffs
            .iter()
            .map(|(&(dp, dq), c)| c * pow(p, dp) * pow(q, dq))
            .fold(BigRational::zero(), |acc, t| acc + t)
    }
}

impl fmt::Display for BivariatePoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        for (n, (&(dp, dq), c)) in self.coeffs.iter().enumerate() {
            if n > 0 {
                f.write_str(" + ")?;
            }
            write!(f, "({c})")?;
            match dp {
                0 => {}
                1 => f.write_str("·p")?,
                _ => write!(f, "·p^{dp}")?,
            }
            match dq {
                0 => {}
                1 => f.write_str("·q")?,
                _ => write!(f, "·q^{dq}")?,
            }
        }
        Ok(())
    }
}

fn falling_factorial(n: u32, k: u32) -> BigInt {
    ((n - k + 1)..=n).fold(BigInt::one(), |acc, v| acc * BigInt::from(v))
}

fn pow(x: &BigRational, e: u32) -> BigRational {
    num_traits::pow::pow(x.clone(), e as usize)
}

/// `Γ(z + c) / z! = (z + c − 1)! / z!` as an exact integer, for `c ≥ 1`.
pub fn gamma_ratio_int(z: u64, c: u64) -> BigUint {
    ((z + 1)..(z + c)).fold(BigUint::one(), |acc, v| acc * BigUint::from(v))
}

/// Outcome of checking one instance of the summation identity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lemma1Check {
    pub lhs: BigRational,
    pub rhs: BigRational,
    pub equal: bool,
}

/// Numerator `p^{c1−1} q^{z·+c2} − p^{z·+c1} q^{c2−1}`.
pub fn lemma1_numerator(c1: u32, c2: u32, z_total: u32) -> BivariatePoly {
    BivariatePoly::from_terms([
        (BigRational::one(), c1 - 1, z_total + c2),
        (-BigRational::one(), z_total + c1, c2 - 1),
    ])
}

/// The right-hand side as a polynomial: the numerator divided by `(q − p)`,
/// then differentiated `c1 − 1` times in `p` and `c2 − 1` times in `q`.
pub fn lemma1_rhs_poly(c1: u32, c2: u32, z_total: u32) -> Result<BivariatePoly> {
    if c1 < 1 || c2 < 1 {
        return domain(format!("c1 and c2 must be at least 1, got {c1} and {c2}"));
    }
    let quotient = lemma1_numerator(c1, c2, z_total).divide_by_q_minus_p()?;
    Ok(quotient
        .differentiate(Var::P, c1 - 1)
        .differentiate(Var::Q, c2 - 1))
}

/// Compare `Σ_z Γ(z+c1)/z! · Γ(z·−z+c2)/(z·−z)! · p^z q^{z·−z}` with the
/// polynomial right-hand side, both evaluated exactly.
pub fn lemma1_check(
    c1: u32,
    c2: u32,
    z_total: u32,
    p: &BigRational,
    q: &BigRational,
) -> Result<Lemma1Check> {
    if !p.is_positive() || !q.is_positive() {
        return domain(format!("p and q must be positive, got {p} and {q}"));
    }
    let rhs = lemma1_rhs_poly(c1, c2, z_total)?.eval(p, q);
    let lhs = (0..=z_total)
        .map(|z| {
            let w = z_total - z;
            let g = gamma_ratio_int(z as u64, c1 as u64) * gamma_ratio_int(w as u64, c2 as u64);
            BigRational::from_integer(BigInt::from(g)) * pow(p, z) * pow(q, w)
        })
        .fold(BigRational::zero(), |acc, t| acc + t);
    let equal = lhs == rhs;
    Ok(Lemma1Check { lhs, rhs, equal })
}

/// Summands `Γ(z+c1)/z! · Γ(z·−z+c2)/(z·−z)! · r1^z` of the normaliser for
/// `z = 0..=z·`, with `c = y + a`.
pub fn exact_c_terms(y: [u64; 2], a: [u64; 2], r1: &BigRational, z_total: u64) -> Result<Vec<BigRational>> {
    if a.contains(&0) {
        return domain("integer shapes a must be at least 1");
    }
    if r1.is_negative() {
        return domain(format!("r1 must be non-negative, got {r1}"));
    }
    let c = [y[0] + a[0], y[1] + a[1]];
    let mut power = BigRational::one();
    let mut terms = Vec::with_capacity(z_total as usize + 1);
    for z in 0..=z_total {
        let g = gamma_ratio_int(z, c[0]) * gamma_ratio_int(z_total - z, c[1]);
        terms.push(BigRational::from_integer(BigInt::from(g)) * &power);
        power *= r1;
    }
    Ok(terms)
}

/// Exact normaliser `C` for integer shapes.
pub fn exact_c(y: [u64; 2], a: [u64; 2], r1: &BigRational, z_total: u64) -> Result<BigRational> {
    Ok(exact_c_terms(y, a, r1, z_total)?
        .into_iter()
        .fold(BigRational::zero(), |acc, t| acc + t))
}

/// One row of the identity check over a grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lemma1Row {
    pub c1: u32,
    pub c2: u32,
    pub z_total: u32,
    pub p: BigRational,
    pub q: BigRational,
    pub equal: bool,
}

/// Check every `(c1, c2, z·)` in `{1..max_c}² × {1..max_z}` at `points`
/// random rationals `p, q ∈ {1..12}/{1..12}` drawn from `seed`.
pub fn lemma1_suite(max_c: u32, max_z: u32, points: usize, seed: u64) -> Result<Vec<Lemma1Row>> {
    let mut rng = RngStream::new(seed, 0);
    let mut draw = || {
        let n: i64 = rng.random_range(1..=12);
        let d: i64 = rng.random_range(1..=12);
        BigRational::new(BigInt::from(n), BigInt::from(d))
    };
    let mut jobs = Vec::new();
    for c1 in 1..=max_c {
        for c2 in 1..=max_c {
            for z in 1..=max_z {
                for _ in 0..points {
                    jobs.push((c1, c2, z, draw(), draw()));
                }
            }
        }
    }
    jobs.into_par_iter()
        .map(|(c1, c2, z_total, p, q)| {
            let check = lemma1_check(c1, c2, z_total, &p, &q)?;
            Ok(Lemma1Row {
                c1,
                c2,
                z_total,
                p,
                q,
                equal: check.equal,
            })
        })
        .collect()
}

fn ln_biguint(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 1000 {
        // exact enough: to_f64 rounds once
        return x.to_f64().unwrap_or(f64::INFINITY).ln();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_f64().unwrap_or(f64::INFINITY);
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// Natural log of a positive rational, accurate for any magnitude.
pub fn ln_rational(x: &BigRational) -> Result<f64> {
    if !x.is_positive() {
        return domain(format!("logarithm needs a positive argument, got {x}"));
    }
    let (num, den) = (x.numer().magnitude(), x.denom().magnitude());
    Ok(ln_biguint(num) - ln_biguint(den))
}

/// Exact rational value of a finite float.
pub fn rational_from_f64(x: f64) -> Result<BigRational> {
    BigRational::from_float(x).ok_or_else(|| crate::Error::Domain(format!("{x} is not finite")))
}
