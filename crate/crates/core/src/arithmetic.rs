//! Continued fractions with exact big-integer arithmetic.
//!
//! A [`Frequency`] is always stored as an exact rational. Floating inputs are
//! first rounded to the nearest multiple of 2^-96, so deep convergents of a
//! float reflect that rational and not the real number it was meant to be.

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Bits of the denominator used when rationalizing a float.
pub const RATIONALIZE_BITS: u64 = 96;

/// Largest convergent denominator (in bits) the Liouville construction will
/// produce before reporting a depth limit.
pub const MAX_DENOMINATOR_BITS: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Frequency {
    pub num: BigInt,
    pub den: BigInt,
    /// Partial quotients a_1, a_2, ... (a_0 = 0 is implicit).
    pub partial_quotients: Vec<BigInt>,
    /// Convergents p_m/q_m for m = 1, 2, ...; 0/1 is not listed.
    pub convergents: Vec<(BigInt, BigInt)>,
    pub beta_hat: Option<f64>,
    /// The expansion reached the exact end of the rational.
    pub terminated: bool,
}

impl Frequency {
    pub fn value(&self) -> f64 {
        ratio_to_f64(&self.num, &self.den)
    }

    pub fn depth(&self) -> usize {
        self.convergents.len()
    }

    pub fn denominators(&self) -> impl Iterator<Item = &BigInt> {
        self.convergents.iter().map(|(_, q)| q)
    }

    /// Convergent `m` (1-based, as in p_m/q_m).
    pub fn convergent(&self, m: usize) -> Option<&(BigInt, BigInt)> {
        if m == 0 {
            None
        } else {
            self.convergents.get(m - 1)
        }
    }

    /// Checks |α − p_m/q_m| < 1/(q_m q_{m+1}) exactly for every adjacent pair.
    /// Returns the indices m that fail.
    ///
    /// When p_{m+1}/q_{m+1} is the stored value itself the bound is attained
    /// with equality, so that last pair is checked with ≤.
    pub fn convergent_bound_failures(&self) -> Vec<usize> {
        let mut bad = Vec::new();
        let k = self.convergents.len();
        for (m, w) in self.convergents.windows(2).enumerate() {
            let (p, q) = &w[0];
            let (_, q_next) = &w[1];
            // |num q − p den| q_next < den
            let lhs = (&self.num * q - p * &self.den).abs() * q_next;
            let terminal = self.terminated && m + 2 == k;
            if lhs > self.den || (lhs == self.den && !terminal) {
                bad.push(m + 1);
            }
        }
        bad
    }

    pub fn to_json(&self) -> Value {
        let convergents: Vec<Value> = self
            .convergents
            .iter()
            .map(|(p, q)| Value::Array(vec![big_number(p), big_number(q)]))
            .collect();
        json!({
            "value_num": big_number(&self.num),
            "value_den": big_number(&self.den),
            "value": self.value(),
            "convergents": convergents,
            "beta_hat": self.beta_hat,
            "depth": self.depth(),
            "terminated": self.terminated,
        })
    }
}

fn big_number(x: &BigInt) -> Value {
    // Big integers stay exact JSON numbers (serde_json arbitrary_precision).
    Value::Number(x.to_string().parse().expect("integer literal is valid JSON"))
}

/// Natural log of a positive big integer, accurate to double precision even
/// beyond the f64 range.
pub fn big_ln(x: &BigInt) -> f64 {
    assert!(x.sign() == Sign::Plus, "log of non-positive integer");
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().unwrap().ln();
    }
    let shift = bits - 64;
    let top: BigInt = x >> shift;
    top.to_f64().unwrap().ln() + shift as f64 * std::f64::consts::LN_2
}

/// `r / q` as a float even when both exceed the f64 range.
pub fn ratio_to_f64(r: &BigInt, q: &BigInt) -> f64 {
    let bits = r.bits().max(q.bits());
    if bits <= 1000 {
        return r.to_f64().unwrap() / q.to_f64().unwrap();
    }
    let shift = bits - 900;
    (r >> shift).to_f64().unwrap() / (q >> shift).to_f64().unwrap()
}

/// Rounds `alpha` to the nearest multiple of 2^-96 and reduces.
pub fn rationalize(alpha: f64) -> Result<(BigInt, BigInt)> {
    if !alpha.is_finite() {
        return Err(Error::input(format!("frequency must be finite, got {alpha}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::input(format!("frequency must lie in (0, 1), got {alpha}")));
    }
    let bits = alpha.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mant, e2) = if exp == 0 {
        (frac, -1074i64)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    };
    // alpha = mant * 2^e2; want round(mant * 2^(e2 + 96)).
    let shift = e2 + RATIONALIZE_BITS as i64;
    let mant = BigInt::from(mant);
    let num = if shift >= 0 {
        mant << shift as u64
    } else {
        let s = (-shift) as u64;
        let half = BigInt::one() << (s - 1);
        (mant + half) >> s
    };
    let den = BigInt::one() << RATIONALIZE_BITS;
    if num.is_zero() {
        return Err(Error::input("frequency rounds to zero at 2^-96"));
    }
    let g = num.gcd(&den);
    Ok((num / &g, den / g))
}

/// Regular continued fraction of `alpha`, at most `m_max` convergents.
pub fn continued_fraction_expansion(alpha: f64, m_max: usize) -> Result<Frequency> {
    let (num, den) = rationalize(alpha)?;
    continued_fraction_of_rational(&num, &den, m_max)
}

/// Exact continued fraction of `num/den ∈ (0, 1]`, at most `m_max` convergents.
pub fn continued_fraction_of_rational(num: &BigInt, den: &BigInt, m_max: usize) -> Result<Frequency> {
    if m_max == 0 {
        return Err(Error::input("m_max must be at least 1"));
    }
    if !num.is_positive() || !den.is_positive() || num > den {
        return Err(Error::input(format!("rational {num}/{den} is not in (0, 1]")));
    }
    let g = num.gcd(den);
    let (num, den) = (num / &g, den / &g);

    let mut partial_quotients = Vec::new();
    let mut convergents = Vec::new();
    // (p_{m-1}, q_{m-1}) and (p_{m-2}, q_{m-2}), seeded with 0/1 and 1/0.
    let (mut p1, mut q1) = (BigInt::zero(), BigInt::one());
    let (mut p2, mut q2) = (BigInt::one(), BigInt::zero());
    // Remainder r_num/r_den of the current tail, starting from 1/alpha.
    let (mut a_num, mut a_den) = (den.clone(), num.clone());
    let mut terminated = false;
    while convergents.len() < m_max {
        let (a, rem) = a_num.div_rem(&a_den);
        let p = &a * &p1 + &p2;
        let q = &a * &q1 + &q2;
        partial_quotients.push(a);
        convergents.push((p.clone(), q.clone()));
        p2 = std::mem::replace(&mut p1, p);
        q2 = std::mem::replace(&mut q1, q);
        if rem.is_zero() {
            terminated = true;
            break;
        }
        a_num = std::mem::replace(&mut a_den, rem);
    }
    let mut f = Frequency {
        num,
        den,
        partial_quotients,
        convergents,
        beta_hat: None,
        terminated,
    };
    f.beta_hat = beta_estimate(&f).ok();
    Ok(f)
}

/// Successive ratios log(q_{m+1}) / q_m.
pub fn growth_ratios(freq: &Frequency) -> Vec<f64> {
    freq.convergents
        .windows(2)
        .map(|w| big_ln(&w[1].1) / w[0].1.to_f64().unwrap_or(f64::INFINITY))
        .collect()
}

/// max_m log(q_{m+1}) / q_m over the available convergents.
///
/// This is a finite-depth proxy for the limsup and is dominated by the early
/// terms for badly approximable numbers (log 2 for the golden mean).
pub fn beta_estimate(freq: &Frequency) -> Result<f64> {
    if freq.convergents.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "beta estimate needs at least 2 convergents, have {}",
            freq.convergents.len()
        )));
    }
    Ok(growth_ratios(freq).into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// ⌈e^x⌉ (to double relative precision) as a big integer.
fn big_exp_ceil(x: f64) -> Result<BigInt> {
    if x < 40.0 {
        return Ok(BigInt::from(x.exp().ceil() as u128));
    }
    let k = (x / std::f64::consts::LN_2).floor();
    if k + 1.0 > MAX_DENOMINATOR_BITS as f64 || !k.is_finite() {
        return Err(Error::numerical("exponent out of range"));
    }
    let m = (x - k * std::f64::consts::LN_2).exp(); // in [1, 2)
    let mant = BigInt::from((m * (1u64 << 52) as f64).ceil() as u64);
    Ok(mant << (k as u64 - 52))
}

/// Builds a frequency whose denominators satisfy q_{m+1} ≈ e^{β q_m}.
///
/// a_1 = q1, then a_{m+1} = max(2, ⌊(⌈e^{β q_m}⌉ − q_{m−1}) / q_m⌋), which keeps
/// q_{m+1} within q_m of the target. Partial quotients are at least 2 so the
/// stored rational re-expands to the same convergents.
pub fn construct_liouville_frequency(beta_target: f64, q1: u64, depth: usize) -> Result<Frequency> {
    if !(beta_target.is_finite() && beta_target > 0.0) {
        return Err(Error::input(format!("beta must be positive, got {beta_target}")));
    }
    if q1 < 2 {
        return Err(Error::input("q1 must be at least 2"));
    }
    if depth == 0 {
        return Err(Error::input("depth must be at least 1"));
    }
    let mut partial_quotients = vec![BigInt::from(q1)];
    let mut convergents = vec![(BigInt::one(), BigInt::from(q1))];
    let (mut p_prev, mut q_prev) = (BigInt::zero(), BigInt::one());
    while convergents.len() < depth {
        let (p, q) = convergents.last().unwrap().clone();
        let x = beta_target * q.to_f64().unwrap_or(f64::INFINITY);
        let achieved = convergents.len();
        let limit = |reason: String| Error::DepthLimit { achieved, reason };
        if !x.is_finite() || x / std::f64::consts::LN_2 > MAX_DENOMINATOR_BITS as f64 {
            return Err(limit(format!(
                "q_{} would need about {:.3e} bits (cap {MAX_DENOMINATOR_BITS})",
                achieved + 1,
                x / std::f64::consts::LN_2
            )));
        }
        let target = big_exp_ceil(x).map_err(|e| limit(e.to_string()))?;
        let mut a = (&target - &q_prev) / &q;
        if a < BigInt::from(2) {
            a = BigInt::from(2);
        }
        let p_next = &a * &p + &p_prev;
        let q_next = &a * &q + &q_prev;
        partial_quotients.push(a);
        p_prev = p;
        q_prev = q;
        convergents.push((p_next, q_next));
    }
    let (num, den) = convergents.last().unwrap().clone();
    let mut f = Frequency {
        num,
        den,
        partial_quotients,
        convergents,
        beta_hat: None,
        terminated: true,
    };
    f.beta_hat = beta_estimate(&f).ok();
    Ok(f)
}

/// Fractional part of `n p / q` computed exactly.
pub fn frac_mul(n: i64, p: &BigInt, q: &BigInt) -> f64 {
    let r = (BigInt::from(n) * p).mod_floor(q);
    ratio_to_f64(&r, q)
}
