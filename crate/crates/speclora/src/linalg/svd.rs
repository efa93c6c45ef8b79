//! Deterministic thin SVD via one-sided (Hestenes) Jacobi.
//!
//! The factorization is bit-reproducible: a fixed cyclic sweep order, no
//! data-dependent parallelism, and a sign convention that pins the
//! otherwise-arbitrary column signs. Per-index comparison of singular
//! vectors between two factorizations is meaningless without this.

use crate::error::{Error, Result};
use crate::linalg::{dot, DenseMatrix};

/// Convergence threshold on the normalized off-diagonal mass
/// |<a_i, a_j>| / (|a_i| |a_j|).
const OFF_DIAG_TOL: f64 = 1e-13;

/// Thin SVD factors `w = u * diag(sigma) * v^T`.
///
/// Conventions:
/// - `sigma` sorted non-increasing, ties broken by pre-sort column order;
/// - columns of `u` and `v` orthonormal;
/// - in each column of `u` the entry of largest absolute value is
///   non-negative (ties broken by lowest row index); the matching column
///   of `v` is flipped along with it so the product still reconstructs.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// Left singular vectors, `n x p` with `p = min(n, m)`.
    pub u: DenseMatrix,
    /// Singular values, length `p`, non-negative, non-increasing.
    pub sigma: Vec<f64>,
    /// Right singular vectors, `m x p`.
    pub v: DenseMatrix,
}

impl SvdFactors {
    /// Reconstruct `u * diag(sigma) * v^T`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.u.rows();
        let m = self.v.rows();
        let p = self.sigma.len();
        let mut out = DenseMatrix::zeros(n, m);
        for i in 0..n {
            for k in 0..p {
                let c = self.u[(i, k)] * self.sigma[k];
                if c == 0.0 {
                    continue;
                }
                for j in 0..m {
                    out[(i, j)] += c * self.v[(j, k)];
                }
            }
        }
        out
    }
}

/// Compute the thin SVD of `w`.
///
/// Errors with [`Error::Domain`] on non-finite input and with
/// [`Error::Numeric`] (residual attached) if the Jacobi sweeps do not
/// converge within `100 * min(n, m)` sweeps.
pub fn thin_svd(w: &DenseMatrix) -> Result<SvdFactors> {
    if !w.is_finite() {
        return Err(Error::domain("svd input contains NaN or Inf"));
    }
    let (n, m) = (w.rows(), w.cols());
    if n >= m {
        jacobi_tall(w)
    } else {
        // run on the transpose and swap the factor roles
        let f = jacobi_tall(&w.transpose())?;
        Ok(SvdFactors {
            u: f.v,
            sigma: f.sigma,
            v: f.u,
        })
    }
}

/// One-sided Jacobi on a tall (rows >= cols) matrix.
fn jacobi_tall(w: &DenseMatrix) -> Result<SvdFactors> {
    let n = w.rows();
    let p = w.cols();
    if p == 0 {
        return Ok(SvdFactors {
            u: DenseMatrix::zeros(n, 0),
            sigma: Vec::new(),
            v: DenseMatrix::zeros(0, 0),
        });
    }

    // column-major working copy: rotations touch contiguous memory
    let mut cols: Vec<Vec<f64>> = (0..p).map(|j| w.col(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let mut e = vec![0.0; p];
            e[j] = 1.0;
            e
        })
        .collect();

    let max_sweeps = 100 * p;
    let mut converged = false;
    let mut worst = 0.0f64;
    for _ in 0..max_sweeps {
        worst = 0.0;
        for j in 1..p {
            for i in 0..j {
                let (ci, cj) = pair_mut(&mut cols, i, j);
                let alpha = dot(ci, ci);
                let beta = dot(cj, cj);
                let gamma = dot(ci, cj);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let ratio = gamma.abs() / (alpha * beta).sqrt();
                worst = worst.max(ratio);
                if ratio <= OFF_DIAG_TOL {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = sign(zeta) / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(ci, cj, c, s);
                let (vi, vj) = pair_mut(&mut vcols, i, j);
                rotate(vi, vj, c, s);
            }
        }
        if worst <= OFF_DIAG_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::numeric(format!(
            "svd did not converge within {} sweeps (off-diagonal residual {:.3e})",
            max_sweeps, worst
        )));
    }

    // singular values are the column norms; sort descending, stable in
    // the pre-sort column order for ties
    let mut order: Vec<usize> = (0..p).collect();
    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap());

    let mut u = DenseMatrix::zeros(n, p);
    let mut v = DenseMatrix::zeros(p, p);
    let mut sigma = vec![0.0; p];
    let mut needs_basis = Vec::new();
    let sigma_max = order.first().map_or(0.0, |&j| norms[j]);
    for (k, &j) in order.iter().enumerate() {
        sigma[k] = norms[j];
        for r in 0..p {
            v[(r, k)] = vcols[j][r];
        }
        if norms[j] > sigma_max * 1e-200 && norms[j] > 0.0 {
            for r in 0..n {
                u[(r, k)] = cols[j][r] / norms[j];
            }
        } else {
            sigma[k] = 0.0;
            needs_basis.push(k);
        }
    }

    // complete zero-sigma columns of u to an orthonormal basis,
    // deterministically, from canonical basis vectors (projecting
    // against still-zero columns is a harmless no-op)
    for k in needs_basis {
        let mut placed = false;
        for t in 0..n {
            let mut cand = vec![0.0; n];
            cand[t] = 1.0;
            for c in 0..p {
                let proj = (0..n).map(|r| u[(r, c)] * cand[r]).sum::<f64>();
                for (r, cv) in cand.iter_mut().enumerate() {
                    *cv -= proj * u[(r, c)];
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if norm > 0.5 {
                for (r, cv) in cand.iter().enumerate() {
                    u[(r, k)] = cv / norm;
                }
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::numeric(
                "could not complete orthonormal basis for rank-deficient factor",
            ));
        }
    }

    apply_sign_convention(&mut u, &mut v);
    Ok(SvdFactors { u, sigma, v })
}

/// Make the largest-magnitude entry of every `u` column non-negative,
/// flipping the slaved `v` column so the product is unchanged.
fn apply_sign_convention(u: &mut DenseMatrix, v: &mut DenseMatrix) {
    let p = u.cols();
    for k in 0..p {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for r in 0..u.rows() {
            let a = u[(r, k)].abs();
            if a > best_abs {
                best_abs = a;
                best = r;
            }
        }
        if u[(best, k)] < 0.0 {
            for r in 0..u.rows() {
                u[(r, k)] = -u[(r, k)];
            }
            for r in 0..v.rows() {
                v[(r, k)] = -v[(r, k)];
            }
        }
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

#[inline]
fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let xa = *x;
        let yb = *y;
        *x = c * xa - s * yb;
        *y = s * xa + c * yb;
    }
}

/// Disjoint mutable borrows of two entries of a slice-of-vecs.
fn pair_mut(v: &mut [Vec<f64>], i: usize, j: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(i < j);
    let (lo, hi) = v.split_at_mut(j);
    (&mut lo[i], &mut hi[0])
}
