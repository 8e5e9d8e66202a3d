//! Transfer matrices T(n) = [[E − V(n), −1], [1, 0]], their products,
//! Lyapunov exponents and the Gordon-type block diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::operator::{Potential, Rotation, SamplingFunction};
use crate::par::{self, Execution};
use crate::report::fmt_real;

pub type Mat2 = [[f64; 2]; 2];

/// Rescaling cadence for the paired products in [`transfer_difference`].
pub const RENORM_EVERY: usize = 32;

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

pub fn mat_vec(a: &Mat2, u: [f64; 2]) -> [f64; 2] {
    [a[0][0] * u[0] + a[0][1] * u[1], a[1][0] * u[0] + a[1][1] * u[1]]
}

pub fn det(a: &Mat2) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

pub fn inverse(a: &Mat2) -> Mat2 {
    let d = det(a);
    [[a[1][1] / d, -a[0][1] / d], [-a[1][0] / d, a[0][0] / d]]
}

/// Spectral norm of a 2×2 real matrix.
pub fn spectral_norm(a: &Mat2) -> f64 {
    let f2 = a[0][0].powi(2) + a[0][1].powi(2) + a[1][0].powi(2) + a[1][1].powi(2);
    let d = det(a);
    // σ_max² = (‖A‖_F² + sqrt(‖A‖_F⁴ − 4 det²)) / 2
    let disc = (f2 * f2 - 4.0 * d * d).max(0.0);
    ((f2 + disc.sqrt()) / 2.0).sqrt()
}

fn norm2(u: [f64; 2]) -> f64 {
    u[0].hypot(u[1])
}

pub fn step_matrix(energy: f64, v: f64) -> Mat2 {
    [[energy - v, -1.0], [1.0, 0.0]]
}

pub fn step_inverse(energy: f64, v: f64) -> Mat2 {
    [[0.0, 1.0], [-1.0, energy - v]]
}

/// Φ = Q R with Q orthogonal and R = [[e^{l1}, e^{l1} w], [0, e^{l2}]].
///
/// The factorization is updated after every step (Givens QR), which keeps
/// both log r11 and log r22 accurate; the determinant e^{l1+l2} det Q is then
/// available to full precision even when Φ is numerically rank one.
#[derive(Debug, Clone, Copy)]
pub struct TransferProduct {
    pub energy: f64,
    pub n_lo: i64,
    pub n_hi: i64,
    pub inverse: bool,
    pub q: Mat2,
    pub log_r11: f64,
    pub log_r22: f64,
    pub w: f64,
}

impl TransferProduct {
    fn identity(energy: f64, n_lo: i64, n_hi: i64, inverse: bool) -> Self {
        TransferProduct {
            energy,
            n_lo,
            n_hi,
            inverse,
            q: [[1.0, 0.0], [0.0, 1.0]],
            log_r11: 0.0,
            log_r22: 0.0,
            w: 0.0,
        }
    }

    /// Φ ← M Φ.
    fn left_multiply(&mut self, m: &Mat2) {
        let a = mat_mul(m, &self.q);
        let r = a[0][0].hypot(a[1][0]);
        let (c, s) = (a[0][0] / r, a[1][0] / r);
        let r12 = c * a[0][1] + s * a[1][1];
        let mut r22 = -s * a[0][1] + c * a[1][1];
        let mut q = [[c, -s], [s, c]];
        if r22 < 0.0 {
            r22 = -r22;
            q[0][1] = -q[0][1];
            q[1][1] = -q[1][1];
            // R' row 2 flips sign together with Q' column 2.
        }
        // R ← R' R with R' = [[r, r12], [0, r22]].
        self.w += (r12 / r) * (self.log_r22 - self.log_r11).exp();
        self.log_r11 += r.ln();
        self.log_r22 += r22.ln();
        self.q = q;
    }

    /// The normalized factor Φ / e^{l1}.
    pub fn matrix(&self) -> Mat2 {
        let z = (self.log_r22 - self.log_r11).exp();
        mat_mul(&self.q, &[[1.0, self.w], [0.0, z]])
    }

    /// log ‖Φ‖ (spectral norm).
    pub fn log_norm(&self) -> f64 {
        let z = (self.log_r22 - self.log_r11).exp();
        self.log_r11 + spectral_norm(&[[1.0, self.w], [0.0, z]]).ln()
    }

    /// log |det Φ|, zero for an exact product of unimodular steps.
    pub fn log_det(&self) -> f64 {
        self.log_r11 + self.log_r22
    }

    pub fn det_sign(&self) -> f64 {
        det(&self.q).signum()
    }

    /// The product as a plain matrix; overflows for very long products.
    pub fn unscaled(&self) -> Mat2 {
        let s = self.log_r11.exp();
        let m = self.matrix();
        [[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]]
    }
}

/// Ordered product over the sites n_lo..=n_hi of the values `v`.
///
/// Forward: Φ = T(n_hi)⋯T(n_lo), so Φ (ψ(n_lo), ψ(n_lo−1)) = (ψ(n_hi+1), ψ(n_hi)).
/// Inverse: Φ⁻ = T(n_lo)⁻¹⋯T(n_hi)⁻¹ = Φ⁻¹, which propagates backwards.
pub fn transfer_product_values(v: &[f64], energy: f64, n_lo: i64, inverse: bool) -> Result<TransferProduct> {
    if v.is_empty() {
        return Err(Error::input("empty transfer interval"));
    }
    let mut p = TransferProduct::identity(energy, n_lo, n_lo + v.len() as i64 - 1, inverse);
    if inverse {
        for &x in v.iter().rev() {
            p.left_multiply(&step_inverse(energy, x));
        }
    } else {
        for &x in v {
            p.left_multiply(&step_matrix(energy, x));
        }
    }
    if !(p.log_r11.is_finite() && p.log_r22.is_finite() && p.w.is_finite()) {
        return Err(Error::numerical("transfer product left the representable range"));
    }
    Ok(p)
}

pub fn transfer_product(potential: &Potential, energy: f64, n_lo: i64, n_hi: i64, inverse: bool) -> Result<TransferProduct> {
    if n_lo > n_hi {
        return Err(Error::input(format!("empty interval [{n_lo}, {n_hi}]")));
    }
    transfer_product_values(&potential.values(n_lo, n_hi), energy, n_lo, inverse)
}

#[derive(Debug, Clone, Copy)]
pub struct LyapunovEstimate {
    pub energy: f64,
    pub n: usize,
    pub theta_samples: usize,
    pub gamma_hat: f64,
    pub stderr: f64,
}

/// θ_k = k·(√5−1)/2 mod 1, or seeded uniform draws when `seed` is given.
pub fn phase_samples(count: usize, seed: Option<u64>) -> Vec<f64> {
    match seed {
        None => {
            let g = (5f64.sqrt() - 1.0) / 2.0;
            (0..count).map(|k| (k as f64 * g).rem_euclid(1.0)).collect()
        }
        Some(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            (0..count).map(|_| rng.gen_range(0.0..1.0)).collect()
        }
    }
}

/// Phase average of (1/n) log ‖Φ_{[0,n−1]}(E)‖.
pub fn lyapunov_exponent(
    f: &SamplingFunction,
    alpha: &Rotation,
    energy: f64,
    n: usize,
    theta_samples: usize,
    seed: Option<u64>,
    exec: Execution,
) -> Result<LyapunovEstimate> {
    if n == 0 || theta_samples == 0 {
        return Err(Error::input("lyapunov needs n >= 1 and at least one phase"));
    }
    let thetas = phase_samples(theta_samples, seed);
    let values = par::map(exec, &thetas, |&theta| -> Result<f64> {
        let pot = Potential::Quasi {
            f: f.clone(),
            alpha: alpha.clone(),
            theta,
        };
        Ok(transfer_product(&pot, energy, 0, n as i64 - 1, false)?.log_norm() / n as f64)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let s = theta_samples as f64;
    let mean = par::ordered_sum(&values) / s;
    let var = if theta_samples > 1 {
        values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (s - 1.0)
    } else {
        0.0
    };
    Ok(LyapunovEstimate {
        energy,
        n,
        theta_samples,
        gamma_hat: mean,
        stderr: (var / s).sqrt(),
    })
}

/// Minimizes γ̂ over the supplied spectral proxies (band centers).
pub fn min_lyapunov_on_spectrum(
    f: &SamplingFunction,
    alpha: &Rotation,
    centers: &[f64],
    n: usize,
    theta_samples: usize,
    exec: Execution,
) -> Result<(f64, f64)> {
    if centers.is_empty() {
        return Err(Error::input("no band centers supplied"));
    }
    let estimates = par::map(exec, centers, |&e| {
        lyapunov_exponent(f, alpha, e, n, theta_samples, None, Execution::Sequential)
    });
    let mut best = (f64::NAN, f64::INFINITY);
    for (e, est) in centers.iter().zip(estimates) {
        let g = est?.gamma_hat;
        if g < best.1 {
            best = (*e, g);
        }
    }
    Ok(best)
}

/// max(‖A²u‖, ‖Au‖, ‖A⁻¹u‖, ‖A⁻²u‖), at least 1/2 for unimodular A.
pub fn gordon_block_statistic(a: &Mat2, u: [f64; 2]) -> Result<f64> {
    if (det(a) - 1.0).abs() >= 1e-8 {
        return Err(Error::input(format!("matrix is not unimodular (det = {})", det(a))));
    }
    if (norm2(u) - 1.0).abs() > 1e-12 {
        return Err(Error::input("u must be a unit vector"));
    }
    let ai = inverse(a);
    let a2 = mat_mul(a, a);
    let ai2 = mat_mul(&ai, &ai);
    Ok([a2, *a, ai, ai2].iter().map(|m| norm2(mat_vec(m, u))).fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy)]
pub struct TransferDifference {
    /// ln of max_{0 ≤ n ≤ n_max} ‖(Φ_α − Φ_{α_m})_{[0,n]} u‖ (−∞ if zero).
    pub ln_max: f64,
    pub n_at_max: usize,
}

impl TransferDifference {
    pub fn value(&self) -> f64 {
        self.ln_max.exp()
    }
}

/// Largest deviation between the quasiperiodic and periodic transfer
/// products applied to `u` along [0, n] for n ≤ n_max.
#[allow(clippy::too_many_arguments)]
pub fn transfer_difference(
    f: &SamplingFunction,
    alpha: &Rotation,
    alpha_m: &Rotation,
    theta: f64,
    energy: f64,
    n_max: usize,
    u: [f64; 2],
) -> Result<TransferDifference> {
    if n_max == 0 {
        return Err(Error::input("n_max must be positive"));
    }
    let pa = alpha.phases(theta);
    let pm = alpha_m.phases(theta);
    // Both products share one scale so their difference stays meaningful.
    let mut a: Mat2 = [[1.0, 0.0], [0.0, 1.0]];
    let mut b = a;
    let mut log_scale = 0.0;
    let mut best = TransferDifference {
        ln_max: f64::NEG_INFINITY,
        n_at_max: 0,
    };
    for n in 0..=n_max {
        a = mat_mul(&step_matrix(energy, f.eval(pa.at(n as i64))), &a);
        b = mat_mul(&step_matrix(energy, f.eval(pm.at(n as i64))), &b);
        if (n + 1) % RENORM_EVERY == 0 {
            let big = a.iter().chain(b.iter()).flatten().fold(0.0f64, |m, x| m.max(x.abs()));
            for x in a.iter_mut().chain(b.iter_mut()).flatten() {
                *x /= big;
            }
            log_scale += big.ln();
        }
        let d = [[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]];
        let nd = norm2(mat_vec(&d, u));
        if !nd.is_finite() {
            return Err(Error::numerical(format!("transfer difference overflowed at n = {n}")));
        }
        let ln = if nd > 0.0 { log_scale + nd.ln() } else { f64::NEG_INFINITY };
        if ln > best.ln_max {
            best = TransferDifference { ln_max: ln, n_at_max: n };
        }
    }
    Ok(best)
}

/// CSV (E, gamma_hat, stderr, n, samples).
pub fn lyapunov_csv(estimates: &[LyapunovEstimate]) -> String {
    let mut out = String::from("E,gamma_hat,stderr,n,samples\n");
    for e in estimates {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_real(e.energy),
            fmt_real(e.gamma_hat),
            fmt_real(e.stderr),
            e.n,
            e.theta_samples
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::PeriodicModel;

    fn zero() -> Potential {
        Potential::Periodic(PeriodicModel::from_potential(vec![0.0]).unwrap())
    }

    #[test]
    fn one_and_two_steps() {
        let p = transfer_product(&zero(), 0.0, 0, 0, false).unwrap().unscaled();
        assert_eq!(p, [[0.0, -1.0], [1.0, 0.0]]);
        let p = transfer_product(&zero(), 0.0, 0, 1, false).unwrap().unscaled();
        assert_eq!(p, [[-1.0, 0.0], [0.0, -1.0]]);
    }

    #[test]
    fn product_solves_the_recurrence() {
        let m = PeriodicModel::from_potential(vec![0.3, -1.1, 2.0, 0.5]).unwrap();
        let pot = Potential::Periodic(m.clone());
        let e = 0.37;
        // ψ(n+1) = (E − V(n))ψ(n) − ψ(n−1) from ψ(0) = 1, ψ(−1) = 0.2.
        let mut psi = vec![0.2, 1.0];
        for n in 0..9 {
            let next = (e - m.at(n)) * psi[psi.len() - 1] - psi[psi.len() - 2];
            psi.push(next);
        }
        let phi = transfer_product(&pot, e, 0, 8, false).unwrap().unscaled();
        let out = mat_vec(&phi, [1.0, 0.2]);
        assert!((out[0] - psi[10]).abs() < 1e-12 && (out[1] - psi[9]).abs() < 1e-12);
    }

    #[test]
    fn periodic_relations() {
        let m = PeriodicModel::from_potential(vec![0.3, -1.1, 2.0, 0.5, -0.4]).unwrap();
        let pot = Potential::Periodic(m);
        let e = -0.8;
        let fwd = transfer_product(&pot, e, 0, 4, false).unwrap().unscaled();
        let back = transfer_product(&pot, e, -5, -1, true).unwrap().unscaled();
        let inv = inverse(&fwd);
        let fwd2 = transfer_product(&pot, e, 0, 9, false).unwrap().unscaled();
        let back2 = transfer_product(&pot, e, -10, -1, true).unwrap().unscaled();
        let sq = mat_mul(&fwd, &fwd);
        let bsq = mat_mul(&back, &back);
        for i in 0..2 {
            for j in 0..2 {
                assert!((back[i][j] - inv[i][j]).abs() < 1e-12);
                assert!((fwd2[i][j] - sq[i][j]).abs() < 1e-10 * sq[i][j].abs().max(1.0));
                assert!((back2[i][j] - bsq[i][j]).abs() < 1e-10 * bsq[i][j].abs().max(1.0));
            }
        }
    }

    #[test]
    fn long_products_stay_unimodular() {
        let pot = Potential::Quasi {
            f: SamplingFunction::amo(2.0),
            alpha: Rotation::Real((5f64.sqrt() - 1.0) / 2.0),
            theta: 0.1,
        };
        let p = transfer_product(&pot, 0.3, 0, 99_999, false).unwrap();
        assert!(p.log_det().abs() < 1e-10);
        assert!(p.log_norm() > 0.0);
    }

    #[test]
    fn constant_coefficient_lyapunov() {
        let est = lyapunov_exponent(&SamplingFunction::Zero, &Rotation::Real(0.3), 3.0, 10_000, 4, None, Execution::Sequential).unwrap();
        let exact = ((3.0 + 5f64.sqrt()) / 2.0).ln();
        assert!((est.gamma_hat - exact).abs() < 0.01 * exact);
        let est = lyapunov_exponent(&SamplingFunction::Zero, &Rotation::Real(0.3), 0.0, 10_000, 4, None, Execution::Sequential).unwrap();
        assert!(est.gamma_hat.abs() < 0.01);
    }

    #[test]
    fn min_over_centers() {
        let (e, g) = min_lyapunov_on_spectrum(&SamplingFunction::Zero, &Rotation::Real(0.3), &[-1.0, 0.5], 1000, 2, Execution::Sequential).unwrap();
        assert!(g.abs() < 0.01 && [-1.0, 0.5].contains(&e));
        let (e, _) = min_lyapunov_on_spectrum(&SamplingFunction::Zero, &Rotation::Real(0.3), &[0.7], 100, 1, Execution::Sequential).unwrap();
        assert_eq!(e, 0.7);
        assert!(min_lyapunov_on_spectrum(&SamplingFunction::Zero, &Rotation::Real(0.3), &[], 10, 1, Execution::Sequential).is_err());
    }

    #[test]
    fn gordon_examples() {
        let id = [[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(gordon_block_statistic(&id, [0.6, 0.8]).unwrap(), 1.0);
        assert!((gordon_block_statistic(&[[2.0, 0.0], [0.0, 0.5]], [1.0, 0.0]).unwrap() - 4.0).abs() < 1e-15);
        assert!((gordon_block_statistic(&[[0.0, -1.0], [1.0, 0.0]], [1.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(gordon_block_statistic(&[[2.0, 0.0], [0.0, 2.0]], [1.0, 0.0]).is_err());
    }

    #[test]
    fn transfer_difference_trivial_cases() {
        let a = Rotation::rational(8, 13);
        let d = transfer_difference(&SamplingFunction::amo(2.0), &a, &a, 0.1, 0.3, 26, [1.0, 0.0]).unwrap();
        assert_eq!(d.value(), 0.0);
        let d = transfer_difference(&SamplingFunction::Zero, &Rotation::Real(0.61), &a, 0.1, 0.3, 26, [1.0, 0.0]).unwrap();
        assert_eq!(d.value(), 0.0);
    }

    #[test]
    fn seeded_phases_are_reproducible() {
        assert_eq!(phase_samples(5, Some(9)), phase_samples(5, Some(9)));
        assert_ne!(phase_samples(5, Some(9)), phase_samples(5, Some(10)));
    }
}
