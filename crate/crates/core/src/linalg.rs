//! Linear algebra kernels: the symmetric tridiagonal eigensolver behind the
//! time-evolution routes, a pivoted complex tridiagonal solver for resolvent
//! columns, and the dense Hermitian eigendecomposition used for Floquet
//! matrices.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Eigendecomposition of a real symmetric tridiagonal matrix in which only a
/// chosen subset of eigenvector rows is accumulated.
///
/// Row `r` of the eigenvector matrix holds the components `U[site_r, k]` of
/// every eigenvector `k` at lattice site `site_r`. Givens rotations of the QL
/// sweep act on each row independently, so tracking `m` rows costs
/// `O(m n^2)` instead of `O(n^3)`.
#[derive(Debug, Clone)]
pub struct TridiagEigen {
    pub eigenvalues: Vec<f64>,
    sites: Vec<usize>,
    /// Row-major, `sites.len()` rows of length `eigenvalues.len()`.
    rows: Vec<f64>,
}

/// Which eigenvector rows to accumulate.
#[derive(Debug, Clone)]
pub enum Rows {
    None,
    All,
    Sites(Vec<usize>),
}

impl TridiagEigen {
    /// `diag` has length n, `off` length n-1 (entries (i, i+1)).
    pub fn new(diag: &[f64], off: &[f64], rows: Rows, exec: Execution) -> Result<Self> {
        let n = diag.len();
        if n == 0 {
            return Err(Error::input("empty tridiagonal matrix"));
        }
        if off.len() + 1 != n {
            return Err(Error::input("off-diagonal must have length n-1"));
        }
        let sites: Vec<usize> = match rows {
            Rows::None => Vec::new(),
            Rows::All => (0..n).collect(),
            Rows::Sites(s) => {
                if s.iter().any(|&i| i >= n) {
                    return Err(Error::input("requested eigenvector row outside the matrix"));
                }
                s
            }
        };
        let m = sites.len();
        let mut z = vec![0.0; m * n];
        for (r, &s) in sites.iter().enumerate() {
            z[r * n + s] = 1.0;
        }
        let mut d = diag.to_vec();
        let mut e = vec![0.0; n];
        e[..n - 1].copy_from_slice(off);

        let mut rotations: Vec<(usize, f64, f64)> = Vec::with_capacity(n);
        for l in 0..n {
            let mut iter = 0;
            loop {
                let mut mm = l;
                while mm + 1 < n {
                    let dd = d[mm].abs() + d[mm + 1].abs();
                    if e[mm].abs() <= f64::EPSILON * dd {
                        break;
                    }
                    mm += 1;
                }
                if mm == l {
                    break;
                }
                iter += 1;
                if iter > 60 {
                    return Err(Error::numerical(format!(
                        "tridiagonal QL failed to converge for eigenvalue {l} (|e| = {:e})",
                        e[l].abs()
                    )));
                }
                let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                let mut r = g.hypot(1.0);
                g = d[mm] - d[l] + e[l] / (g + r.copysign(g));
                let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
                rotations.clear();
                let mut deflated = false;
                let mut i = mm;
                while i > l {
                    i -= 1;
                    let f = s * e[i];
                    let b = c * e[i];
                    r = f.hypot(g);
                    e[i + 1] = r;
                    if r == 0.0 {
                        d[i + 1] -= p;
                        e[mm] = 0.0;
                        deflated = true;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[i + 1] - p;
                    r = (d[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[i + 1] = g + p;
                    g = c * r - b;
                    rotations.push((i, c, s));
                }
                apply_rotations(&mut z, n, &rotations, exec);
                if deflated {
                    continue;
                }
                d[l] -= p;
                e[l] = g;
                e[mm] = 0.0;
            }
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
        let eigenvalues: Vec<f64> = order.iter().map(|&k| d[k]).collect();
        let mut rows_sorted = vec![0.0; m * n];
        for r in 0..m {
            for (new, &old) in order.iter().enumerate() {
                rows_sorted[r * n + new] = z[r * n + old];
            }
        }
        Ok(TridiagEigen {
            eigenvalues,
            sites,
            rows: rows_sorted,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    /// Components of all eigenvectors at the `r`-th tracked site.
    pub fn row(&self, r: usize) -> &[f64] {
        let n = self.dim();
        &self.rows[r * n..(r + 1) * n]
    }

    /// Index of `site` among the tracked rows.
    pub fn row_of(&self, site: usize) -> Option<usize> {
        self.sites.iter().position(|&s| s == site)
    }
}

fn apply_rotations(z: &mut [f64], n: usize, rotations: &[(usize, f64, f64)], exec: Execution) {
    if z.is_empty() || rotations.is_empty() {
        return;
    }
    let apply_row = |row: &mut [f64]| {
        for &(i, c, s) in rotations {
            let f = row[i + 1];
            row[i + 1] = s * row[i] + c * f;
            row[i] = c * row[i] - s * f;
        }
    };
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && z.len() / n >= 64 {
        use rayon::prelude::*;
        z.par_chunks_mut(n).for_each(apply_row);
        return;
    }
    let _ = exec;
    z.chunks_mut(n).for_each(apply_row);
}

/// LU factorization with partial pivoting of `T - z` for a real symmetric
/// tridiagonal `T`, reusable for several right-hand sides.
#[derive(Debug, Clone)]
pub struct ShiftedTridiagLu {
    // Band storage after pivoting: diagonal, first and second superdiagonal,
    // multipliers and pivot flags (row i swapped with i+1).
    d: Vec<Complex64>,
    du: Vec<Complex64>,
    du2: Vec<Complex64>,
    dl: Vec<Complex64>,
    swapped: Vec<bool>,
}

impl ShiftedTridiagLu {
    pub fn new(diag: &[f64], off: &[f64], z: Complex64) -> Result<Self> {
        let n = diag.len();
        let mut d: Vec<Complex64> = diag.iter().map(|&x| Complex64::new(x, 0.0) - z).collect();
        let mut dl: Vec<Complex64> = off.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let mut du: Vec<Complex64> = dl.clone();
        let mut du2 = vec![Complex64::new(0.0, 0.0); n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].norm() >= dl[i].norm() {
                if d[i].norm() == 0.0 {
                    return Err(Error::numerical("singular shifted tridiagonal matrix"));
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                swapped[i] = true;
            }
        }
        if n > 0 && d[n - 1].norm() == 0.0 {
            return Err(Error::numerical("singular shifted tridiagonal matrix"));
        }
        Ok(ShiftedTridiagLu {
            d,
            du,
            du2,
            dl,
            swapped,
        })
    }

    pub fn solve(&self, b: &mut [Complex64]) {
        let n = self.d.len();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                b.swap(i, i + 1);
                b[i + 1] -= self.dl[i] * b[i];
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        if n == 0 {
            return;
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }

    /// Column `src` of `(T - z)^{-1}`.
    pub fn column(&self, src: usize) -> Vec<Complex64> {
        let mut b = vec![Complex64::new(0.0, 0.0); self.d.len()];
        b[src] = Complex64::new(1.0, 0.0);
        self.solve(&mut b);
        b
    }
}

/// Ascending eigenvalues and orthonormal eigenvectors (columns) of a dense
/// Hermitian matrix, by cyclic Jacobi rotations.
///
/// nalgebra's `SymmetricEigen` returns wrong eigenvectors for some small
/// matrices with zero diagonal, so it is not used here.
pub fn hermitian_eigen(a: &DMatrix<Complex64>) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::input("matrix is not square"));
    }
    let mut m = a.clone();
    let mut v = DMatrix::<Complex64>::identity(n, n);
    let total: f64 = m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if !total.is_finite() {
        return Err(Error::numerical("matrix has non-finite entries"));
    }
    let target = (f64::EPSILON * total.max(f64::MIN_POSITIVE)).powi(2);
    let mut converged = false;
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)].norm_sqr())
            .sum();
        if off <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                let r = apq.norm();
                if r == 0.0 {
                    continue;
                }
                let phase = apq / r;
                let (app, aqq) = (m[(p, p)].re, m[(q, q)].re);
                let tau = (aqq - app) / (2.0 * r);
                let t = if tau == 0.0 {
                    1.0
                } else {
                    tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // G on the (p, q) plane: [[c, s], [−s ē, c ē]] with e = apq/|apq|.
                let g = [
                    [Complex64::new(c, 0.0), Complex64::new(s, 0.0)],
                    [-s * phase.conj(), c * phase.conj()],
                ];
                for k in 0..n {
                    let (x, y) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = x * g[0][0] + y * g[1][0];
                    m[(k, q)] = x * g[0][1] + y * g[1][1];
                }
                for k in 0..n {
                    let (x, y) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = g[0][0].conj() * x + g[1][0].conj() * y;
                    m[(q, k)] = g[0][1].conj() * x + g[1][1].conj() * y;
                }
                m[(p, q)] = Complex64::new(0.0, 0.0);
                m[(q, p)] = Complex64::new(0.0, 0.0);
                m[(p, p)] = Complex64::new(m[(p, p)].re, 0.0);
                m[(q, q)] = Complex64::new(m[(q, q)].re, 0.0);
                for k in 0..n {
                    let (x, y) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = x * g[0][0] + y * g[1][0];
                    v[(k, q)] = x * g[0][1] + y * g[1][1];
                }
            }
        }
    }
    if !converged {
        return Err(Error::numerical("Jacobi eigensolver did not converge"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].re.total_cmp(&m[(j, j)].re));
    let values: Vec<f64> = order.iter().map(|&k| m[(k, k)].re).collect();
    let mut vecs = DMatrix::<Complex64>::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        vecs.set_column(new, &v.column(old));
    }
    Ok((values, vecs))
}

/// Convenience for dense eigenvalues of many small tridiagonal problems.
pub fn tridiag_eigenvalues(diag: &[f64], off: &[f64]) -> Result<Vec<f64>> {
    Ok(TridiagEigen::new(diag, off, Rows::None, Execution::Sequential)?.eigenvalues)
}

/// `par::map` re-export so kernels can share the execution switch.
pub fn map_indices<R: Send>(exec: Execution, n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    par::map_range(exec, n, f)
}
