//! Floquet matrices of period-q potentials and everything derived from them:
//! bands, the discriminant, κ-derivatives of eigenpairs and the weights
//! φ_j(κ) = |Ψ_j(0)|² + |Ψ_j(1)|² of the canonical spectral measure.
//!
//! Band indices `j` are 0-based throughout: `j = 0` is the lowest band.

use std::f64::consts::{E, PI};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::hermitian_eigen;
use crate::operator::{PeriodicModel, SamplingFunction};
use crate::par::{self, Execution};
use crate::report::fmt_real;

fn cis(x: f64) -> Complex64 {
    Complex64::from_polar(1.0, x)
}

/// Floquet matrix with corner entries e^{±i·phase}; the physical matrix uses
/// phase = qκ. Other phases are only useful for fault injection.
pub fn floquet_matrix_with_phase(model: &PeriodicModel, phase: f64) -> DMatrix<Complex64> {
    let q = model.q();
    let mut a = DMatrix::<Complex64>::zeros(q, q);
    for i in 0..q {
        a[(i, i)] = Complex64::new(model.v[i], 0.0);
    }
    if q == 1 {
        a[(0, 0)] += 2.0 * phase.cos();
        return a;
    }
    for i in 0..q - 1 {
        a[(i, i + 1)] += 1.0;
        a[(i + 1, i)] += 1.0;
    }
    a[(0, q - 1)] += cis(phase);
    a[(q - 1, 0)] += cis(-phase);
    a
}

/// A_q(κ): unit hopping, diagonal V(0..q-1), corners e^{iqκ} (top right) and
/// e^{-iqκ} (bottom left). For q = 1 this is the scalar V(0) + 2cos κ.
pub fn floquet_matrix(model: &PeriodicModel, kappa: f64) -> DMatrix<Complex64> {
    floquet_matrix_with_phase(model, model.q() as f64 * kappa)
}

/// dA_q/dκ, nonzero only in the corners.
pub fn floquet_matrix_derivative(q: usize, kappa: f64) -> DMatrix<Complex64> {
    let mut d = DMatrix::<Complex64>::zeros(q, q);
    let qf = q as f64;
    if q == 1 {
        d[(0, 0)] = Complex64::new(-2.0 * kappa.sin(), 0.0);
        return d;
    }
    d[(0, q - 1)] += Complex64::i() * qf * cis(qf * kappa);
    d[(q - 1, 0)] += -Complex64::i() * qf * cis(-qf * kappa);
    d
}

#[derive(Debug, Clone)]
pub struct FloquetEigensystem {
    pub kappa: f64,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// φ_j(κ); empty for q = 1, where site 1 does not exist in the cell.
    pub phi: Vec<f64>,
    /// |Ψ_j(0)|² and |Ψ_j(1)|² separately (empty for q = 1).
    pub weight0: Vec<f64>,
    pub weight1: Vec<f64>,
    /// Orthonormal eigenvectors as columns, if requested.
    pub eigenvectors: Option<DMatrix<Complex64>>,
}

impl FloquetEigensystem {
    pub fn q(&self) -> usize {
        self.eigenvalues.len()
    }
}

pub fn floquet_eigensystem(model: &PeriodicModel, kappa: f64, want_vectors: bool) -> Result<FloquetEigensystem> {
    let a = floquet_matrix(model, kappa);
    let (values, vecs) = hermitian_eigen(&a)?;
    let q = model.q();
    // Residual audit; the dense solver is backward stable so this only
    // trips on genuinely broken input (NaN potentials and the like).
    let scale = 2.0 + model.sup_abs();
    for k in 0..q {
        let v = vecs.column(k);
        let r = &a * v - v * Complex64::new(values[k], 0.0);
        let res = r.norm();
        if !(res <= 1e-10 * scale.max(1.0) * q as f64) {
            return Err(Error::numerical(format!(
                "Floquet eigenpair {k} at kappa={kappa} has residual {res:e}"
            )));
        }
    }
    let (weight0, weight1): (Vec<f64>, Vec<f64>) = if q >= 2 {
        (0..q).map(|k| (vecs[(0, k)].norm_sqr(), vecs[(1, k)].norm_sqr())).unzip()
    } else {
        (Vec::new(), Vec::new())
    };
    let phi = weight0.iter().zip(&weight1).map(|(a, b)| a + b).collect();
    Ok(FloquetEigensystem {
        kappa,
        eigenvalues: values,
        phi,
        weight0,
        weight1,
        eigenvectors: want_vectors.then_some(vecs),
    })
}

fn require_phi(model: &PeriodicModel) -> Result<()> {
    if model.q() < 2 {
        return Err(Error::input("phi weights need q >= 2 (site 1 lies outside a period-1 cell)"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub j: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn intersects(&self, lo: f64, hi: f64) -> bool {
        self.lo <= hi && lo <= self.hi
    }
}

#[derive(Debug, Clone)]
pub struct BandStructure {
    pub bands: Vec<Band>,
    /// Uniform grid on [0, π/q] used for the monotonicity audit.
    pub kappa_grid: Vec<f64>,
    /// Eigenvalues on the grid, `grid_values[k][j]`.
    pub grid_values: Vec<Vec<f64>>,
    /// (j, grid index) where λ_j moved against its band's direction by more
    /// than the audit tolerance.
    pub monotonicity_violations: Vec<(usize, usize)>,
    pub max_monotonicity_defect: f64,
}

impl BandStructure {
    pub fn widths(&self) -> Vec<f64> {
        self.bands.iter().map(|b| b.width()).collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.bands.iter().map(|b| b.center()).collect()
    }

    /// Pairs of bands whose interiors overlap by more than `tol`.
    pub fn overlapping_interiors(&self, tol: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.bands.len() {
            for b in a + 1..self.bands.len() {
                let (x, y) = (&self.bands[a], &self.bands[b]);
                if x.hi.min(y.hi) - x.lo.max(y.lo) > tol {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// CSV with columns (j, a_j, b_j, width, center); j is 1-based here to
    /// match the usual labelling of bands.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,a_j,b_j,width,center\n");
        for b in &self.bands {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                b.j + 1,
                fmt_real(b.lo),
                fmt_real(b.hi),
                fmt_real(b.width()),
                fmt_real(b.center())
            ));
        }
        out
    }
}

/// Bands from the endpoint eigenvalues λ_j(0), λ_j(π/q), with a
/// monotonicity audit on a uniform grid of `kappa_grid_size` points.
pub fn band_structure(model: &PeriodicModel, kappa_grid_size: usize) -> Result<BandStructure> {
    if kappa_grid_size < 2 {
        return Err(Error::input("kappa grid needs at least the two endpoints"));
    }
    let q = model.q();
    let top = PI / q as f64;
    let kappa_grid: Vec<f64> = (0..kappa_grid_size)
        .map(|k| top * k as f64 / (kappa_grid_size - 1) as f64)
        .collect();
    let grid_values = kappa_grid
        .iter()
        .map(|&k| Ok(hermitian_eigen(&floquet_matrix(model, k))?.0))
        .collect::<Result<Vec<_>>>()?;
    let first = &grid_values[0];
    let last = &grid_values[kappa_grid_size - 1];
    let bands: Vec<Band> = (0..q)
        .map(|j| Band {
            j,
            lo: first[j].min(last[j]),
            hi: first[j].max(last[j]),
        })
        .collect();
    let tol = 1e-10 * (2.0 + model.sup_abs());
    let mut violations = Vec::new();
    let mut max_defect = 0.0f64;
    for j in 0..q {
        let dir = (last[j] - first[j]).signum();
        for k in 1..kappa_grid_size {
            let step = grid_values[k][j] - grid_values[k - 1][j];
            let defect = -dir * step;
            if dir != 0.0 && defect > 0.0 {
                max_defect = max_defect.max(defect);
                if defect > tol {
                    violations.push((j, k));
                }
            }
        }
    }
    Ok(BandStructure {
        bands,
        kappa_grid,
        grid_values,
        monotonicity_violations: violations,
        max_monotonicity_defect: max_defect,
    })
}

/// tr Φ_{[0,q-1]}(E) and its E-derivative, by forward-mode differentiation
/// of the product T(q-1)⋯T(0) with T(n) = [[E − V(n), −1], [1, 0]].
pub fn transfer_trace_with_derivative(model: &PeriodicModel, energy: f64) -> (f64, f64) {
    // m = [[a, b], [c, d]], dm its derivative.
    let (mut a, mut b, mut c, mut d) = (1.0, 0.0, 0.0, 1.0);
    let (mut da, mut db, mut dc, mut dd) = (0.0, 0.0, 0.0, 0.0);
    for &v in &model.v {
        let x = energy - v;
        // T m = [[x a − c, x b − d], [a, b]]; (T m)' = T m' + [[a, b], [0, 0]].
        let (na, nb, nc, nd) = (x * a - c, x * b - d, a, b);
        let (nda, ndb, ndc, ndd) = (x * da - dc + a, x * db - dd + b, da, db);
        (a, b, c, d) = (na, nb, nc, nd);
        (da, db, dc, dd) = (nda, ndb, ndc, ndd);
    }
    (a + d, da + dd)
}

pub fn transfer_trace(model: &PeriodicModel, energy: f64) -> f64 {
    transfer_trace_with_derivative(model, energy).0
}

/// Δ_q(E), normalized so that det(A_q(κ) − E) = Δ_q(E) + 2(−1)^{q−1} cos(qκ).
///
/// That normalization forces Δ_q = (−1)^q tr Φ_{[0,q−1]}(E); for even q the
/// discriminant is the plain trace.
pub fn discriminant(model: &PeriodicModel, energy: f64) -> f64 {
    discriminant_with_derivative(model, energy).0
}

pub fn discriminant_with_derivative(model: &PeriodicModel, energy: f64) -> (f64, f64) {
    let (t, dt) = transfer_trace_with_derivative(model, energy);
    let s = if model.q() % 2 == 0 { 1.0 } else { -1.0 };
    (s * t, s * dt)
}

/// Central difference of Δ_q with step ε^{1/3} max(1, |E|).
pub fn discriminant_derivative_fd(model: &PeriodicModel, energy: f64) -> f64 {
    let h = f64::EPSILON.cbrt() * energy.abs().max(1.0);
    (discriminant(model, energy + h) - discriminant(model, energy - h)) / (2.0 * h)
}

/// D_{κ,q}(E) = det(A_q(κ) − E).
pub fn characteristic_polynomial(model: &PeriodicModel, kappa: f64, energy: f64) -> f64 {
    let q = model.q();
    let sign = if q % 2 == 1 { 1.0 } else { -1.0 };
    discriminant(model, energy) + 2.0 * sign * (q as f64 * kappa).cos()
}

fn check_interior(q: usize, kappa: f64) -> Result<()> {
    let top = PI / q as f64;
    if !(kappa > 0.0 && kappa < top) {
        return Err(Error::Degenerate(format!(
            "kappa={kappa} is not in the open half-torus (0, {top})"
        )));
    }
    Ok(())
}

fn check_simple(values: &[f64], j: usize, what: &str) -> Result<f64> {
    let gap = values
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != j)
        .map(|(_, v)| (v - values[j]).abs())
        .fold(f64::INFINITY, f64::min);
    if gap < 1e-10 {
        return Err(Error::Degenerate(format!(
            "{what}: eigenvalue {j} is within {gap:e} of a neighbour"
        )));
    }
    Ok(gap)
}

/// λ_j'(κ) from |Δ'(λ_j)||λ_j'| = 2q|sin qκ|; the sign alternates with the
/// band index, the top band decreasing.
pub fn eigenvalue_derivative(model: &PeriodicModel, kappa: f64, j: usize) -> Result<f64> {
    let q = model.q();
    if j >= q {
        return Err(Error::input(format!("band index {j} out of range for q={q}")));
    }
    check_interior(q, kappa)?;
    let es = floquet_eigensystem(model, kappa, false)?;
    check_simple(&es.eigenvalues, j, "eigenvalue derivative")?;
    let lambda = es.eigenvalues[j];
    let (_, dd) = discriminant_with_derivative(model, lambda);
    let s = (q as f64 * kappa).sin().abs();
    let scale = 2.0 * q as f64 * s;
    if dd.abs() <= f64::EPSILON * scale || dd == 0.0 {
        return Err(Error::Degenerate(format!(
            "discriminant derivative vanishes at lambda_{j}({kappa})"
        )));
    }
    let magnitude = scale / dd.abs();
    // (−1)^{q−j} for 0-based j: the top band (j = q−1) decreases.
    let sign = if (q - j) % 2 == 0 { 1.0 } else { -1.0 };
    Ok(sign * magnitude)
}

/// λ_j'(κ) = ⟨Ψ_j, Ȧ Ψ_j⟩ (Hellmann–Feynman).
pub fn eigenvalue_derivative_hf(model: &PeriodicModel, kappa: f64, j: usize) -> Result<f64> {
    let es = floquet_eigensystem(model, kappa, true)?;
    let v = es.eigenvectors.as_ref().unwrap().column(j).into_owned();
    let ad = floquet_matrix_derivative(model.q(), kappa);
    Ok((v.adjoint() * (&ad * &v))[(0, 0)].re)
}

/// φ_j'(κ) from the eigenvector perturbation sum
/// Ψ̇_j = −Σ_{k≠j} ⟨Ψ_k, Ȧ Ψ_j⟩ / (λ_k − λ_j) Ψ_k.
pub fn phi_derivative(model: &PeriodicModel, kappa: f64, j: usize) -> Result<f64> {
    require_phi(model)?;
    let q = model.q();
    if j >= q {
        return Err(Error::input(format!("band index {j} out of range for q={q}")));
    }
    let es = floquet_eigensystem(model, kappa, true)?;
    check_simple(&es.eigenvalues, j, "phi derivative")?;
    let u = es.eigenvectors.as_ref().unwrap();
    let ad = floquet_matrix_derivative(q, kappa);
    let psi = u.column(j).into_owned();
    let a_psi = &ad * &psi;
    let mut dpsi0 = Complex64::new(0.0, 0.0);
    let mut dpsi1 = Complex64::new(0.0, 0.0);
    for k in 0..q {
        if k == j {
            continue;
        }
        let uk = u.column(k);
        let coupling = (uk.adjoint() * &a_psi)[(0, 0)];
        let c = -coupling / (es.eigenvalues[k] - es.eigenvalues[j]);
        dpsi0 += c * uk[0];
        dpsi1 += c * uk[1];
    }
    Ok(2.0 * (psi[0].conj() * dpsi0).re + 2.0 * (psi[1].conj() * dpsi1).re)
}

/// Edge of the trimmed half-torus Λ = [π/(16q²), π/q − π/(16q²)].
pub fn lambda_edge(q: usize) -> f64 {
    PI / (16.0 * (q * q) as f64)
}

/// 8e q² / (ℓ_j (1 − |cos qκ|)) evaluated at κ = π/(16q²): the bound on
/// max_{κ∈Λ} |φ_j'(κ)|.
pub fn phi_derivative_bound(q: usize, width: f64) -> f64 {
    let qf = q as f64;
    let k = lambda_edge(q);
    8.0 * E * qf * qf / (width * (1.0 - (qf * k).cos().abs()))
}

/// Lower and upper sides of the bounds on |λ_j'(κ)| implied by the
/// derivative identity and the Last-type estimates.
pub fn eigenvalue_derivative_sandwich(q: usize, kappa: f64, width: f64) -> (f64, f64) {
    let qf = q as f64;
    let s = (qf * kappa).sin();
    let c = (qf * kappa).cos().abs();
    let lower = 2.0 * qf * s * width / (4.0 * E);
    let upper = 2.0 * qf * s / (1.0 - c) * width / (1.0 + 5f64.sqrt());
    (lower, upper)
}

/// The three members of (1+√5)(1−|cos qκ|) ≤ ℓ_j|D'(λ_j(κ))| ≤ e|D(λ_j(0)) − D(λ_j(π/q))|.
pub fn last_inequality_terms(model: &PeriodicModel, bands: &BandStructure, kappa: f64, j: usize) -> Result<(f64, f64, f64)> {
    let q = model.q();
    let es = floquet_eigensystem(model, kappa, false)?;
    let (_, dd) = discriminant_with_derivative(model, es.eigenvalues[j]);
    let width = bands.bands[j].width();
    let left = (1.0 + 5f64.sqrt()) * (1.0 - (q as f64 * kappa).cos().abs());
    let middle = width * dd.abs();
    let g = &bands.grid_values;
    let (e0, e1) = (g[0][j], g[g.len() - 1][j]);
    let right = E * (characteristic_polynomial(model, kappa, e0) - characteristic_polynomial(model, kappa, e1)).abs();
    Ok((left, middle, right))
}

/// μ_{κ,q}(I) = Σ_{λ_j(κ) ∈ I} φ_j(κ).
pub fn spectral_measure_interval(model: &PeriodicModel, kappa: f64, lo: f64, hi: f64) -> Result<f64> {
    require_phi(model)?;
    let es = floquet_eigensystem(model, kappa, false)?;
    Ok(measure_of(&es, lo, hi))
}

fn measure_of(es: &FloquetEigensystem, lo: f64, hi: f64) -> f64 {
    es.eigenvalues
        .iter()
        .zip(&es.phi)
        .filter(|(l, _)| **l >= lo && **l <= hi)
        .map(|(_, p)| p)
        .sum()
}

/// Atoms (λ_j(κ), φ_j(κ)) of the canonical measure.
pub fn spectral_atoms(model: &PeriodicModel, kappa: f64) -> Result<Vec<(f64, f64)>> {
    require_phi(model)?;
    let es = floquet_eigensystem(model, kappa, false)?;
    Ok(es.eigenvalues.into_iter().zip(es.phi).collect())
}

pub fn uniform_kappa_grid(q: usize, size: usize) -> Vec<f64> {
    let top = PI / q as f64;
    if size <= 1 {
        return vec![0.0];
    }
    (0..size).map(|k| top * k as f64 / (size - 1) as f64).collect()
}

#[derive(Debug, Clone)]
pub struct MeasureLowerBound {
    /// inf over the grids of μ_{κ,q}(I).
    pub eta: f64,
    pub argmin_theta: f64,
    pub argmin_kappa: f64,
}

/// Infimum of μ_{κ,q}(I) over a κ-grid on [0, π/q] and a set of models
/// (typically one per phase θ).
pub fn measure_uniform_lower_bound(
    models: &[PeriodicModel],
    kappa_grid_size: usize,
    lo: f64,
    hi: f64,
    exec: Execution,
) -> Result<MeasureLowerBound> {
    if models.is_empty() || kappa_grid_size == 0 {
        return Err(Error::input("measure lower bound needs nonempty grids"));
    }
    let per_model = par::map(exec, models, |m| -> Result<(f64, f64)> {
        require_phi(m)?;
        let mut best = (f64::INFINITY, 0.0);
        for k in uniform_kappa_grid(m.q(), kappa_grid_size) {
            let es = floquet_eigensystem(m, k, false)?;
            let mu = measure_of(&es, lo, hi);
            if mu < best.0 {
                best = (mu, k);
            }
        }
        Ok(best)
    });
    let mut out = MeasureLowerBound {
        eta: f64::INFINITY,
        argmin_theta: f64::NAN,
        argmin_kappa: f64::NAN,
    };
    for (m, r) in models.iter().zip(per_model) {
        let (mu, k) = r?;
        if mu < out.eta {
            out.eta = mu;
            out.argmin_kappa = k;
            out.argmin_theta = m.source.as_ref().map_or(f64::NAN, |s| s.2);
        }
    }
    Ok(out)
}

/// Phase family V_θ(n) = f(θ + n p/q) on an equispaced θ-grid.
pub fn phase_family(f: &SamplingFunction, p: u64, q: u64, thetas: &[f64]) -> Result<Vec<PeriodicModel>> {
    thetas.iter().map(|&t| PeriodicModel::new(f, p, q, t)).collect()
}

#[derive(Debug, Clone)]
pub struct ChebyshevWitness {
    pub j: usize,
    /// Grid estimate of |{κ ∈ [0, π/q] : φ_j(κ) > η/q}|.
    pub measure: f64,
    pub threshold: f64,
}

/// Looks for a band meeting I on which φ_j > η/q on a κ-set of measure
/// exceeding π/(2q²). Measures are grid estimates (cell fraction × π/q).
pub fn chebyshev_witness(model: &PeriodicModel, bands: &BandStructure, eta: f64, lo: f64, hi: f64, kappa_grid_size: usize) -> Result<Option<ChebyshevWitness>> {
    require_phi(model)?;
    let q = model.q();
    let qf = q as f64;
    let grid = uniform_kappa_grid(q, kappa_grid_size.max(2));
    // Midpoints of the grid cells, each standing for a cell of width h.
    let h = grid[1] - grid[0];
    let systems: Vec<FloquetEigensystem> = grid
        .windows(2)
        .map(|w| floquet_eigensystem(model, 0.5 * (w[0] + w[1]), false))
        .collect::<Result<_>>()?;
    let threshold = PI / (2.0 * qf * qf);
    let mut best: Option<ChebyshevWitness> = None;
    for b in &bands.bands {
        if !b.intersects(lo, hi) {
            continue;
        }
        let count = systems.iter().filter(|s| s.phi[b.j] > eta / qf).count();
        let measure = count as f64 * h;
        if measure > threshold && best.as_ref().is_none_or(|w| measure > w.measure) {
            best = Some(ChebyshevWitness {
                j: b.j,
                measure,
                threshold,
            });
        }
    }
    Ok(best)
}

/// CSV (kappa, j, lambda, phi) over a κ-grid; j is 1-based.
pub fn measure_csv(model: &PeriodicModel, kappa_grid_size: usize) -> Result<String> {
    require_phi(model)?;
    let mut out = String::from("kappa,j,lambda,phi\n");
    for k in uniform_kappa_grid(model.q(), kappa_grid_size) {
        let es = floquet_eigensystem(model, k, false)?;
        for j in 0..model.q() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                fmt_real(k),
                j + 1,
                fmt_real(es.eigenvalues[j]),
                fmt_real(es.phi[j])
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero(q: usize) -> PeriodicModel {
        PeriodicModel::from_potential(vec![0.0; q]).unwrap()
    }

    fn random_model(rng: &mut ChaCha8Rng, q: usize) -> PeriodicModel {
        PeriodicModel::from_potential((0..q).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn two_by_two_closed_forms() {
        let a = floquet_matrix(&zero(2), 0.0);
        assert!((a[(0, 1)] - Complex64::new(2.0, 0.0)).norm() < 1e-15);
        let es = floquet_eigensystem(&zero(2), 0.0, false).unwrap();
        assert!((es.eigenvalues[0] + 2.0).abs() < 1e-14 && (es.eigenvalues[1] - 2.0).abs() < 1e-14);
        let a = floquet_matrix(&zero(2), PI / 2.0);
        assert!(a.iter().all(|z| z.norm() < 1e-15));
        let es = floquet_eigensystem(&zero(2), 0.3, false).unwrap();
        assert!((es.phi[0] - 1.0).abs() < 1e-12 && (es.phi[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hermitian_and_q1() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for q in 1..9 {
            let m = random_model(&mut rng, q);
            let a = floquet_matrix(&m, rng.gen_range(0.0..1.0));
            assert_eq!(a, a.adjoint());
        }
        let m = PeriodicModel::from_potential(vec![0.5]).unwrap();
        let es = floquet_eigensystem(&m, 0.4, false).unwrap();
        assert!((es.eigenvalues[0] - (0.5 + 2.0 * 0.4f64.cos())).abs() < 1e-15);
        assert!(spectral_measure_interval(&m, 0.4, -10.0, 10.0).is_err());
    }

    #[test]
    fn free_laplacian_eigenvalues() {
        let es = floquet_eigensystem(&zero(3), 0.1, false).unwrap();
        let mut expect: Vec<f64> = (0..3).map(|k| 2.0 * (0.1 + 2.0 * PI * k as f64 / 3.0).cos()).collect();
        expect.sort_by(f64::total_cmp);
        for (a, b) in es.eigenvalues.iter().zip(expect) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn residual_and_completeness_on_random_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_model(&mut rng, 8);
        let es = floquet_eigensystem(&m, 0.2, true).unwrap();
        let a = floquet_matrix(&m, 0.2);
        let u = es.eigenvectors.as_ref().unwrap();
        for k in 0..8 {
            let v = u.column(k);
            assert!((&a * v - v * Complex64::new(es.eigenvalues[k], 0.0)).norm() < 1e-10);
        }
        assert!((es.phi.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        assert!(es.phi.iter().all(|p| (0.0..=2.0 + 1e-12).contains(p)));
    }

    #[test]
    fn conjugation_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(&mut rng, 6);
        let a = floquet_eigensystem(&m, 0.17, false).unwrap();
        let b = floquet_eigensystem(&m, -0.17, false).unwrap();
        for j in 0..6 {
            assert!((a.eigenvalues[j] - b.eigenvalues[j]).abs() < 1e-12);
            assert!((a.phi[j] - b.phi[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn bands_of_free_and_amo_models() {
        let bs = band_structure(&zero(3), 64).unwrap();
        let expect = [(-2.0, -1.0), (-1.0, 1.0), (1.0, 2.0)];
        for (b, (lo, hi)) in bs.bands.iter().zip(expect) {
            assert!((b.lo - lo).abs() < 1e-12 && (b.hi - hi).abs() < 1e-12);
        }
        assert!(bs.monotonicity_violations.is_empty());
        let bs = band_structure(&zero(2), 16).unwrap();
        assert_eq!(bs.widths().iter().map(|w| (w * 1e12).round() / 1e12).collect::<Vec<_>>(), vec![2.0, 2.0]);

        let m = PeriodicModel::new(&SamplingFunction::amo(2.0), 1, 2, 0.0).unwrap();
        assert!((m.v[0] - 4.0).abs() < 1e-14 && (m.v[1] + 4.0).abs() < 1e-14);
        let bs = band_structure(&m, 32).unwrap();
        // 2x2 closed form: λ = ±sqrt(16 + |1 + e^{2iκ}|²).
        let e0 = (16.0f64 + 4.0).sqrt();
        let e1 = 4.0;
        assert!((bs.bands[1].hi - e0).abs() < 1e-12 && (bs.bands[1].lo - e1).abs() < 1e-12);
        assert!(bs.widths().iter().sum::<f64>() < 12.0);
        assert!(bs.overlapping_interiors(1e-12).is_empty());
    }

    #[test]
    fn discriminant_closed_forms() {
        assert!((discriminant(&zero(2), 0.0) + 2.0).abs() < 1e-15);
        let m = PeriodicModel::from_potential(vec![0.7, -1.3]).unwrap();
        for e in [-3.0, 0.2, 1.9] {
            assert!((discriminant(&m, e) - ((e - 0.7) * (e + 1.3) - 2.0)).abs() < 1e-13);
        }
    }

    #[test]
    fn determinant_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let q = rng.gen_range(1..=12);
            let m = random_model(&mut rng, q);
            let kappa = rng.gen_range(0.0..PI);
            let e = rng.gen_range(-4.0..4.0);
            let mut a = floquet_matrix(&m, kappa);
            for i in 0..q {
                a[(i, i)] -= e;
            }
            let det = a.determinant().re;
            let d = characteristic_polynomial(&m, kappa, e);
            assert!((det - d).abs() < 1e-8 * discriminant(&m, e).abs().max(1.0), "q={q}");
        }
    }

    #[test]
    fn exact_and_fd_discriminant_derivatives_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for q in 2..=10 {
            let m = random_model(&mut rng, q);
            let e = rng.gen_range(-3.0..3.0);
            let exact = discriminant_with_derivative(&m, e).1;
            let fd = discriminant_derivative_fd(&m, e);
            assert!((exact - fd).abs() < 1e-6 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn eigenvalue_derivative_free_case() {
        let d = eigenvalue_derivative(&zero(2), PI / 8.0, 1).unwrap();
        assert!((d + 2.0 * (PI / 8.0).sin()).abs() < 1e-12);
        assert!((d + 0.7654).abs() < 1e-4);
        assert!(matches!(eigenvalue_derivative(&zero(2), 0.0, 1), Err(Error::Degenerate(_))));
        let small = eigenvalue_derivative(&zero(2), 1e-9, 1).unwrap();
        assert!(small.abs() < 1e-8);
    }

    #[test]
    fn eigenvalue_derivative_matches_fd_and_hellmann_feynman() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for q in 2..=7 {
            let m = random_model(&mut rng, q);
            let kappa = PI / q as f64 * rng.gen_range(0.1..0.9);
            let h = 1e-6;
            for j in 0..q {
                let d = eigenvalue_derivative(&m, kappa, j).unwrap();
                let hf = eigenvalue_derivative_hf(&m, kappa, j).unwrap();
                let up = floquet_eigensystem(&m, kappa + h, false).unwrap().eigenvalues[j];
                let dn = floquet_eigensystem(&m, kappa - h, false).unwrap().eigenvalues[j];
                let fd = (up - dn) / (2.0 * h);
                assert!((d - fd).abs() < 1e-4 * fd.abs().max(1e-3), "q={q} j={j}: {d} vs {fd}");
                assert!((d - hf).abs() < 1e-8 * hf.abs().max(1.0));
            }
        }
    }

    #[test]
    fn phi_derivative_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_model(&mut rng, 5);
        let kappa = 0.31;
        let h = 1e-5;
        for j in 0..5 {
            let d = phi_derivative(&m, kappa, j).unwrap();
            let up = floquet_eigensystem(&m, kappa + h, false).unwrap().phi[j];
            let dn = floquet_eigensystem(&m, kappa - h, false).unwrap().phi[j];
            let fd = (up - dn) / (2.0 * h);
            assert!((d - fd).abs() < 1e-3 * fd.abs().max(1e-2), "j={j}: {d} vs {fd}");
        }
        assert!(phi_derivative(&zero(2), 0.4, 0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn measure_of_intervals() {
        let m = zero(2);
        assert!((spectral_measure_interval(&m, 0.3, -5.0, 5.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((spectral_measure_interval(&m, PI / 4.0, 0.0, 2.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(spectral_measure_interval(&m, 0.3, 5.0, 6.0).unwrap(), 0.0);
        let lb = measure_uniform_lower_bound(&[m.clone()], 65, -2.0, 0.0, Execution::Sequential).unwrap();
        assert!((lb.eta - 1.0).abs() < 1e-12);
        let lb = measure_uniform_lower_bound(&[m], 65, -3.0, 3.0, Execution::Sequential).unwrap();
        assert!((lb.eta - 2.0).abs() < 1e-12);
    }

    #[test]
    fn last_type_terms_on_random_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let q = rng.gen_range(2..=8);
            let m = random_model(&mut rng, q);
            let bs = band_structure(&m, 16).unwrap();
            let kappa = PI / q as f64 * rng.gen_range(0.05..0.95);
            for j in 0..q {
                let (l, mid, r) = last_inequality_terms(&m, &bs, kappa, j).unwrap();
                assert!(l <= mid && mid <= r, "{l} {mid} {r}");
                assert!((r - 4.0 * E).abs() < 1e-8);
            }
        }
    }
}
