//! Gauss–Legendre panels with bisection driven by the disagreement between a
//! panel and its two halves.
//!
//! The batch integrators take vector-valued integrands so that several
//! quantities sharing expensive per-node work (all lattice sites of a
//! transport window, say) are integrated on one common set of nodes.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// `n`-point rule on [-1, 1], nodes by Newton iteration on P_n.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tolerances for [`integrate_batch`].
#[derive(Debug, Clone, Copy)]
pub struct BatchTolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_depth: usize,
}

impl Default for BatchTolerance {
    fn default() -> Self {
        BatchTolerance {
            rel: 1e-8,
            abs: 1e-14,
            max_depth: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchIntegral {
    pub values: Vec<f64>,
    /// Sum of the accepted per-panel disagreements, per component.
    pub error_estimates: Vec<f64>,
    pub evaluations: usize,
}

/// Integrates a vector-valued function over a union of panels.
///
/// `f(x, out)` must write `dim` values into `out`. Each panel is accepted
/// when, for every component, the one-panel and two-half-panel rules agree to
/// within `max(rel * |I_c|, abs) * len / total_len`, where `I_c` is a first
/// pass estimate of the full integral. Panels are bisected otherwise.
pub fn integrate_batch<F>(
    rule: &GaussLegendre,
    panels: &[(f64, f64)],
    dim: usize,
    tol: BatchTolerance,
    mut f: F,
) -> Result<BatchIntegral>
where
    F: FnMut(f64, &mut [f64]),
{
    let total_len: f64 = panels.iter().map(|(a, b)| (b - a).abs()).sum();
    let mut evaluations = 0usize;
    let mut scratch = vec![0.0; dim];

    let mut panel_rule = |a: f64, b: f64, acc: &mut [f64], evals: &mut usize| {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (x, w) in rule.mapped(a, b) {
            f(x, &mut scratch);
            *evals += 1;
            for (s, v) in acc.iter_mut().zip(&scratch) {
                *s += w * v;
            }
        }
    };

    // First pass: one rule per panel, used both as the scale estimate and as
    // the coarse value of each root panel.
    let mut coarse: Vec<Vec<f64>> = Vec::with_capacity(panels.len());
    let mut scale = vec![0.0; dim];
    for &(a, b) in panels {
        let mut acc = vec![0.0; dim];
        panel_rule(a, b, &mut acc, &mut evaluations);
        for (s, v) in scale.iter_mut().zip(&acc) {
            *s += v;
        }
        coarse.push(acc);
    }
    let scale: Vec<f64> = scale.iter().map(|s| s.abs()).collect();

    let mut values = vec![0.0; dim];
    let mut errors = vec![0.0; dim];
    let mut left = vec![0.0; dim];
    let mut right = vec![0.0; dim];
    let mut stack: Vec<(f64, f64, Vec<f64>, usize)> = Vec::new();
    for (&(a, b), c) in panels.iter().zip(coarse) {
        stack.push((a, b, c, 0));
        while let Some((a, b, whole, depth)) = stack.pop() {
            let mid = 0.5 * (a + b);
            panel_rule(a, mid, &mut left, &mut evaluations);
            panel_rule(mid, b, &mut right, &mut evaluations);
            let frac = if total_len > 0.0 {
                (b - a).abs() / total_len
            } else {
                1.0
            };
            let mut ok = true;
            for c in 0..dim {
                let fine = left[c] + right[c];
                let allowed = (tol.rel * scale[c]).max(tol.abs) * frac;
                if (fine - whole[c]).abs() > allowed {
                    ok = false;
                    break;
                }
            }
            if ok {
                for c in 0..dim {
                    let fine = left[c] + right[c];
                    values[c] += fine;
                    errors[c] += (fine - whole[c]).abs();
                }
            } else if depth >= tol.max_depth {
                return Err(Error::numerical(format!(
                    "quadrature did not converge on [{a:e}, {b:e}] after {depth} bisections"
                )));
            } else {
                stack.push((mid, b, right.clone(), depth + 1));
                stack.push((a, mid, left.clone(), depth + 1));
            }
        }
    }
    Ok(BatchIntegral {
        values,
        error_estimates: errors,
        evaluations,
    })
}

/// Splits `[a, b]` into panels no wider than `width`, honouring the given
/// interior breakpoints.
pub fn panels_with_breaks(a: f64, b: f64, breaks: &[f64], width: f64) -> Vec<(f64, f64)> {
    let mut pts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|x| *x > a && *x < b)
        .collect();
    pts.push(a);
    pts.push(b);
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup_by(|x, y| (*x - *y).abs() < 1e-15 * (1.0 + y.abs()));
    let mut out = Vec::new();
    for w in pts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let pieces = ((hi - lo) / width).ceil().max(1.0) as usize;
        let h = (hi - lo) / pieces as f64;
        for k in 0..pieces {
            let x0 = lo + h * k as f64;
            let x1 = if k + 1 == pieces { hi } else { x0 + h };
            out.push((x0, x1));
        }
    }
    out
}
