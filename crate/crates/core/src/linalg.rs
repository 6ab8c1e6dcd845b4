//! Thin SVD, polar decomposition and leading singular pairs.
//!
//! The SVD backend is one-sided (Hestenes) Jacobi: columns of a working copy
//! of `C` are rotated pairwise until mutually orthogonal to working
//! precision, which yields `C·Q = P·diag(λ)` directly. It is deterministic for
//! a fixed input and accurate for the small, tall matrices this crate
//! factorizes.

use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, norm, Matrix};

const MAX_SWEEPS: usize = 80;
const ROTATION_TOL: f64 = 1e-15;
const NEGLIGIBLE: f64 = 1e-15;

/// Thin SVD `C = P · diag(λ) · Qᵀ` of an `m × n` matrix, `m ≥ n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdThin {
    pub p: Matrix,
    pub lambda: Vec<f64>,
    pub q: Matrix,
}

/// Polar decomposition `C = U · H` with `UᵀU = I` and `H` symmetric PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarFactors {
    pub u: Matrix,
    pub h: Matrix,
    /// Singular values of `C`, nonincreasing.
    pub singular_values: Vec<f64>,
}

/// Thin SVD of a matrix with at least as many rows as columns.
pub fn thin_svd(c: &Matrix) -> Result<SvdThin> {
    let (m, n) = (c.rows(), c.cols());
    if m < n {
        return Err(Error::ShapeMismatch(format!(
            "thin_svd needs rows >= cols, got {m}x{n}"
        )));
    }
    let mut w = c.clone();
    let mut v = Matrix::identity(n);

    // columns below this squared norm are numerically zero
    let floor = (NEGLIGIBLE * c.frobenius_norm()).powi(2);
    let tol = ROTATION_TOL * (m as f64).sqrt();
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(w.col(p), w.col(p));
                let beta = dot(w.col(q), w.col(q));
                let gamma = dot(w.col(p), w.col(q));
                if alpha <= floor || beta <= floor || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate(&mut w, p, q, cs, sn);
                rotate(&mut v, p, q, cs, sn);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::ConvergenceFailure { sweeps: MAX_SWEEPS });
    }

    let norms: Vec<f64> = w.columns().map(norm).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: ties keep column order
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));

    let lambda: Vec<f64> = order.iter().map(|&k| norms[k]).collect();
    let scale = lambda.first().copied().unwrap_or(0.0);
    let mut p = Matrix::zeros(m, n);
    let mut q = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        q.col_mut(dst).copy_from_slice(v.col(src));
        let s = norms[src];
        if s > 0.0 && s > scale * 1e-300 {
            p.col_mut(dst)
                .iter_mut()
                .zip(w.col(src))
                .for_each(|(a, b)| *a = b / s);
        }
    }
    // Columns belonging to negligible singular values are re-orthogonalized
    // (or completed from the standard basis when they vanish).
    let negligible = |s: f64| s <= scale * 1e-12 || s == 0.0;
    for (k, &s) in lambda.iter().enumerate() {
        if negligible(s) {
            let mut col = p.col(k).to_vec();
            if !orthonormalize_against(&p, k, &mut col) {
                col = basis_completion(&p, k, m);
            }
            p.col_mut(k).copy_from_slice(&col);
        }
    }
    for k in 0..n {
        if first_significant(p.col(k)) < 0.0 {
            p.col_mut(k).iter_mut().for_each(|x| *x = -*x);
            q.col_mut(k).iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok(SvdThin { p, lambda, q })
}

/// Polar decomposition via the thin SVD: `U = P·Qᵀ`, `H = Q·diag(λ)·Qᵀ`.
pub fn polar_decompose(c: &Matrix) -> Result<PolarFactors> {
    let svd = thin_svd(c)?;
    let u = svd.p.matmul(&svd.q.transpose())?;
    let qs = svd.q.scale_columns(&svd.lambda);
    let h = qs.matmul(&svd.q.transpose())?;
    let n = h.rows();
    let mut hs = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            hs.set(i, j, 0.5 * (h.get(i, j) + h.get(j, i)));
        }
    }
    Ok(PolarFactors {
        u,
        h: hs,
        singular_values: svd.lambda,
    })
}

/// Leading singular triple `(u, s, v)` with `C·v = s·u`; the first
/// significant entry of `u` is positive.
pub fn leading_singular_pair(c: &Matrix) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    if c.values().iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let (mut u, s, mut v) = if c.rows() >= c.cols() {
        let svd = thin_svd(c)?;
        (svd.p.col(0).to_vec(), svd.lambda[0], svd.q.col(0).to_vec())
    } else {
        let svd = thin_svd(&c.transpose())?;
        (svd.q.col(0).to_vec(), svd.lambda[0], svd.p.col(0).to_vec())
    };
    if first_significant(&u) < 0.0 {
        u.iter_mut().for_each(|x| *x = -*x);
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok((u, s, v))
}

/// Leading `k` left singular vectors of an arbitrary matrix as an
/// orthonormal `rows × k` matrix (`k ≤ rows`), plus all singular values.
pub fn left_singular_vectors(c: &Matrix, k: usize) -> Result<(Matrix, Vec<f64>)> {
    let m = c.rows();
    if k == 0 || k > m {
        return Err(Error::ShapeMismatch(format!(
            "cannot take {k} left singular vectors of a matrix with {m} rows"
        )));
    }
    let (basis, lambda) = if m <= c.cols() {
        let svd = thin_svd(&c.transpose())?;
        (svd.q, svd.lambda)
    } else {
        let svd = thin_svd(c)?;
        (svd.p, svd.lambda)
    };
    let avail = basis.cols().min(k);
    let mut cols: Vec<Vec<f64>> = (0..avail).map(|j| basis.col(j).to_vec()).collect();
    while cols.len() < k {
        let partial = Matrix::from_columns(&cols)?;
        cols.push(basis_completion(&partial, partial.cols(), m));
    }
    Ok((Matrix::from_columns(&cols)?, lambda))
}

fn rotate(m: &mut Matrix, p: usize, q: usize, cs: f64, sn: f64) {
    let rows = m.rows();
    for r in 0..rows {
        let a = m.get(r, p);
        let b = m.get(r, q);
        m.set(r, p, cs * a - sn * b);
        m.set(r, q, sn * a + cs * b);
    }
}

fn first_significant(x: &[f64]) -> f64 {
    let max = x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    x.iter()
        .copied()
        .find(|v| v.abs() > max * 1e-12)
        .unwrap_or(0.0)
}

/// Two passes of Gram–Schmidt of `col` against the first `k` columns of `p`.
/// Returns false when nothing survives.
fn orthonormalize_against(p: &Matrix, k: usize, col: &mut [f64]) -> bool {
    let n0 = norm(col);
    if n0 == 0.0 {
        return false;
    }
    for _ in 0..2 {
        for j in 0..k {
            let c = dot(p.col(j), col);
            axpy(col, -c, p.col(j));
        }
    }
    let n1 = norm(col);
    if n1 <= 1e-8 * n0 || n1 == 0.0 {
        return false;
    }
    col.iter_mut().for_each(|x| *x /= n1);
    true
}

/// First standard basis vector that is not in the span of the first `k`
/// columns of `p`, orthonormalized against them.
fn basis_completion(p: &Matrix, k: usize, m: usize) -> Vec<f64> {
    let mut best: Option<Vec<f64>> = None;
    for e in 0..m {
        let mut col = vec![0.0; m];
        col[e] = 1.0;
        if orthonormalize_against(p, k, &mut col) {
            best = Some(col);
            break;
        }
    }
    best.expect("k < m guarantees a completing basis vector")
}
