//! Sampling functions, potentials and finite Dirichlet truncations of
//! `(Hψ)(n) = ψ(n-1) + ψ(n+1) + f(θ + nα)ψ(n)`.

use std::f64::consts::PI;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::arithmetic::{frac_mul, Frequency};
use crate::error::{Error, Result};
use crate::report::fmt_real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SamplingFunction {
    /// 2λ cos(2πx)
    Amo { lambda: f64 },
    /// 1-periodic piecewise-linear interpolation of `values` on the grid k/len.
    Table { values: Vec<f64> },
    Zero,
}

impl SamplingFunction {
    pub fn amo(lambda: f64) -> Self {
        SamplingFunction::Amo { lambda }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            SamplingFunction::Amo { lambda } => 2.0 * lambda * (2.0 * PI * x).cos(),
            SamplingFunction::Zero => 0.0,
            SamplingFunction::Table { values } => {
                let len = values.len();
                if len == 0 {
                    return 0.0;
                }
                let y = x.rem_euclid(1.0) * len as f64;
                let k = (y.floor() as usize).min(len - 1);
                let t = y - k as f64;
                (1.0 - t) * values[k] + t * values[(k + 1) % len]
            }
        }
    }

    /// Lipschitz constant with respect to the distance on the circle R/Z.
    pub fn lipschitz_constant(&self) -> f64 {
        match self {
            SamplingFunction::Amo { lambda } => 4.0 * PI * lambda.abs(),
            SamplingFunction::Zero => 0.0,
            SamplingFunction::Table { values } => {
                let len = values.len();
                (0..len)
                    .map(|k| (values[(k + 1) % len] - values[k]).abs() * len as f64)
                    .fold(0.0, f64::max)
            }
        }
    }

    pub fn sup_abs(&self) -> f64 {
        match self {
            SamplingFunction::Amo { lambda } => 2.0 * lambda.abs(),
            SamplingFunction::Zero => 0.0,
            SamplingFunction::Table { values } => values.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        }
    }
}

/// The rotation number α, either a float or an exact rational.
#[derive(Debug, Clone, PartialEq)]
pub enum Rotation {
    Real(f64),
    Rational { p: BigInt, q: BigInt },
}

impl Rotation {
    pub fn rational(p: u64, q: u64) -> Self {
        Rotation::Rational {
            p: BigInt::from(p),
            q: BigInt::from(q),
        }
    }

    /// The exact stored rational of a frequency.
    pub fn of_frequency(freq: &Frequency) -> Self {
        Rotation::Rational {
            p: freq.num.clone(),
            q: freq.den.clone(),
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            Rotation::Real(a) => *a,
            Rotation::Rational { p, q } => crate::arithmetic::ratio_to_f64(p, q),
        }
    }

    /// Sampler for frac(θ + nα) that avoids big-integer work when the
    /// rational fits into 64 bits.
    pub fn phases(&self, theta: f64) -> PhaseSampler<'_> {
        let small = match self {
            Rotation::Rational { p, q } => match (p.to_i64(), q.to_i64()) {
                (Some(p), Some(q)) => Some((p.rem_euclid(q), q)),
                _ => None,
            },
            Rotation::Real(_) => None,
        };
        PhaseSampler {
            rot: self,
            theta,
            small,
        }
    }
}

pub struct PhaseSampler<'a> {
    rot: &'a Rotation,
    theta: f64,
    small: Option<(i64, i64)>,
}

impl PhaseSampler<'_> {
    /// frac(θ + nα)
    pub fn at(&self, n: i64) -> f64 {
        let frac_n_alpha = match (self.small, self.rot) {
            (Some((p, q)), _) => {
                let r = (n as i128 * p as i128).rem_euclid(q as i128);
                r as f64 / q as f64
            }
            (None, Rotation::Real(a)) => (n as f64 * a).rem_euclid(1.0),
            (None, Rotation::Rational { p, q }) => frac_mul(n, p, q),
        };
        (self.theta + frac_n_alpha).rem_euclid(1.0)
    }
}

/// f(θ + nα) for n in [n_lo, n_hi].
pub fn sample_potential(f: &SamplingFunction, alpha: &Rotation, theta: f64, n_lo: i64, n_hi: i64) -> Result<Vec<f64>> {
    if n_lo > n_hi {
        return Err(Error::input(format!("empty range [{n_lo}, {n_hi}]")));
    }
    let ph = alpha.phases(theta);
    Ok((n_lo..=n_hi).map(|n| f.eval(ph.at(n))).collect())
}

/// Period-q potential V(n) = f(θ + n p/q), n = 0..q-1.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicModel {
    pub v: Vec<f64>,
    /// (f, p, θ) when the potential was sampled; `None` for raw potentials.
    pub source: Option<(SamplingFunction, u64, f64)>,
}

/// Largest period a [`PeriodicModel`] is sampled for.
pub const MAX_PERIOD: u64 = 1 << 24;

impl PeriodicModel {
    pub fn new(f: &SamplingFunction, p: u64, q: u64, theta: f64) -> Result<Self> {
        if q == 0 {
            return Err(Error::input("period q must be positive"));
        }
        if q > MAX_PERIOD {
            return Err(Error::input(format!("period {q} exceeds the largest supported period {MAX_PERIOD}")));
        }
        if p.gcd(&q) != 1 && !(p == 0 && q == 1) {
            return Err(Error::input(format!("{p}/{q} is not in lowest terms")));
        }
        let v = sample_potential(f, &Rotation::rational(p, q), theta, 0, q as i64 - 1)?;
        Ok(PeriodicModel {
            v,
            source: Some((f.clone(), p, theta)),
        })
    }

    pub fn from_potential(v: Vec<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::input("empty potential"));
        }
        Ok(PeriodicModel { v, source: None })
    }

    pub fn q(&self) -> usize {
        self.v.len()
    }

    /// V(n) extended periodically to all of Z.
    pub fn at(&self, n: i64) -> f64 {
        self.v[n.rem_euclid(self.v.len() as i64) as usize]
    }

    pub fn sup_abs(&self) -> f64 {
        self.v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

pub fn periodic_model(f: &SamplingFunction, p: u64, q: u64, theta: f64) -> Result<PeriodicModel> {
    PeriodicModel::new(f, p, q, theta)
}

/// A potential on all of Z: periodic, or quasiperiodic f(θ + nα).
#[derive(Debug, Clone)]
pub enum Potential {
    Periodic(PeriodicModel),
    Quasi {
        f: SamplingFunction,
        alpha: Rotation,
        theta: f64,
    },
}

impl Potential {
    pub fn values(&self, n_lo: i64, n_hi: i64) -> Vec<f64> {
        match self {
            Potential::Periodic(m) => (n_lo..=n_hi).map(|n| m.at(n)).collect(),
            Potential::Quasi { f, alpha, theta } => {
                let ph = alpha.phases(*theta);
                (n_lo..=n_hi).map(|n| f.eval(ph.at(n))).collect()
            }
        }
    }

    pub fn sup_abs(&self) -> f64 {
        match self {
            Potential::Periodic(m) => m.sup_abs(),
            Potential::Quasi { f, .. } => f.sup_abs(),
        }
    }
}

/// Dirichlet restriction of H to [-N, N]; entry i is lattice site i - N.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteOperator {
    pub n_half: usize,
    pub diagonal: Vec<f64>,
}

impl FiniteOperator {
    pub fn new(potential: &Potential, n_half: usize) -> Self {
        let n = n_half as i64;
        FiniteOperator {
            n_half,
            diagonal: potential.values(-n, n),
        }
    }

    pub fn from_diagonal(diagonal: Vec<f64>) -> Result<Self> {
        if diagonal.len() % 2 == 0 {
            return Err(Error::input("diagonal of a [-N, N] truncation has odd length"));
        }
        Ok(FiniteOperator {
            n_half: diagonal.len() / 2,
            diagonal,
        })
    }

    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn off_diagonal(&self) -> Vec<f64> {
        vec![1.0; self.dim().saturating_sub(1)]
    }

    /// Row/column index of lattice site n.
    pub fn index(&self, n: i64) -> Option<usize> {
        let i = n + self.n_half as i64;
        (i >= 0 && (i as usize) < self.dim()).then_some(i as usize)
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diagonal[i]
        } else if i.abs_diff(j) == 1 {
            1.0
        } else {
            0.0
        }
    }

    /// 2 + max|V|, an upper bound for the operator norm.
    pub fn norm_bound(&self) -> f64 {
        2.0 + self.diagonal.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

pub fn finite_operator(potential: &Potential, n_half: usize) -> FiniteOperator {
    FiniteOperator::new(potential, n_half)
}

/// CSV with columns (n, V).
pub fn potential_csv(n_lo: i64, values: &[f64]) -> String {
    let mut out = String::from("n,V\n");
    for (k, v) in values.iter().enumerate() {
        out.push_str(&format!("{},{}\n", n_lo + k as i64, fmt_real(*v)));
    }
    out
}
