//! Thin singular value decomposition by one-sided (Hestenes) Jacobi
//! rotations.
//!
//! For an `m x n` matrix `A` with `k = min(m, n)` the factorization is
//! `A = U diag(s) Vᵀ` with `U` of shape `m x k`, `V` of shape `n x k`, both
//! with orthonormal columns, and `s` sorted descending. One-sided Jacobi is
//! slower than Golub-Kahan bidiagonalization on large problems but it is
//! short, needs no shifts, and delivers small singular values to high
//! relative accuracy, which matters when the operator decides which of them
//! to switch off.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};

const MAX_SWEEPS: usize = 80;

#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn new(a: &Matrix) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::BadValue("matrix contains non-finite entries"));
        }
        let (m, n) = a.shape();
        if m >= n {
            let (u, s, v) = jacobi_tall(a)?;
            Ok(Self { u, s, v })
        } else {
            // A = U S Vᵀ  <=>  Aᵀ = V S Uᵀ
            let (v, s, u) = jacobi_tall(&a.transpose())?;
            Ok(Self { u, s, v })
        }
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `U diag(s) Vᵀ`
    pub fn reconstruct(&self) -> Matrix {
        let (m, k) = self.u.shape();
        let n = self.v.rows();
        Matrix::from_fn(m, n, |i, j| (0..k).map(|l| self.u[(i, l)] * self.s[l] * self.v[(j, l)]).sum())
    }

    /// Applies the (masked) pseudo-inverse: `V diag(mask/s) Uᵀ y`.
    ///
    /// `enabled(i)` decides whether singular value `i` takes part; values at
    /// or below `cutoff` are always skipped.
    pub fn solve_masked(&self, y: &[f64], cutoff: f64, enabled: impl Fn(usize) -> bool) -> Result<Vec<f64>> {
        let uty = self.u.tr_mul_vec(y)?;
        let n = self.v.rows();
        let mut x = vec![0.0; n];
        for (i, (&coef, &sv)) in uty.iter().zip(&self.s).enumerate() {
            if !enabled(i) || sv <= cutoff {
                continue;
            }
            let f = coef / sv;
            for (j, xj) in x.iter_mut().enumerate() {
                *xj += self.v[(j, i)] * f;
            }
        }
        Ok(x)
    }

    /// Minimum-norm least-squares solution of `A x = y`, dropping singular
    /// values below `rel_tol * s_max`.
    pub fn solve(&self, y: &[f64], rel_tol: f64) -> Result<Vec<f64>> {
        let cutoff = self.s.first().copied().unwrap_or(0.0) * rel_tol;
        self.solve_masked(y, cutoff, |_| true)
    }
}

/// One-sided Jacobi on a matrix with at least as many rows as columns.
fn jacobi_tall(a: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (m, n) = a.shape();
    // work column-major: w[j] is column j of A V
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let tol = f64::EPSILON * libm::sqrt(m as f64);
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if alpha == 0.0 || beta == 0.0 || libm::fabs(gamma) <= tol * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = libm::copysign(1.0, zeta) / (libm::fabs(zeta) + libm::hypot(1.0, zeta));
                let c = 1.0 / libm::hypot(1.0, t);
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::ConvergenceFailure(MAX_SWEEPS));
    }

    let sigma: Vec<f64> = w.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));

    let s_max = order.first().map_or(0.0, |&i| sigma[i]);
    let zero_tol = s_max * f64::EPSILON * (m.max(n) as f64);

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s_sorted = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        let sj = sigma[j];
        if sj > zero_tol && sj > 0.0 {
            u_cols.push(w[j].iter().map(|x| x / sj).collect());
            s_sorted.push(sj);
        } else {
            u_cols.push(vec![0.0; m]);
            s_sorted.push(0.0);
            missing.push(slot);
        }
        v_cols.push(v[j].clone());
    }
    complete_orthonormal(&mut u_cols, &missing);

    Ok((Matrix::from_columns(&u_cols)?, s_sorted, Matrix::from_columns(&v_cols)?))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the columns listed in `missing` with unit vectors orthogonal to all
/// other columns (Gram-Schmidt against the canonical basis).
pub(crate) fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let m = cols[0].len();
    let mut candidate = 0;
    for &slot in missing {
        while candidate < m {
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            // two passes of classical Gram-Schmidt
            for _ in 0..2 {
                for (k, c) in cols.iter().enumerate() {
                    if k == slot {
                        continue;
                    }
                    let proj = dot(c, &e);
                    for (ei, ci) in e.iter_mut().zip(c) {
                        *ei -= proj * ci;
                    }
                }
            }
            let len = norm(&e);
            if len > 1e-8 {
                cols[slot] = e.iter().map(|x| x / len).collect();
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};

    fn random_matrix(rng: &mut impl Rng, m: usize, n: usize) -> Matrix {
        Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn orthonormality_error(q: &Matrix) -> f64 {
        let qtq = q.transpose().mul(q).unwrap();
        qtq.max_abs_diff(&Matrix::identity(q.cols()))
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let svd = Svd::new(&Matrix::identity(3)).unwrap();
        assert_eq!(svd.s, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_sorted_descending() {
        let a = Matrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        let svd = Svd::new(&a).unwrap();
        assert_eq!(svd.s, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn random_wide_matrix_is_orthonormal_and_reconstructs() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 72, 73);
        let svd = Svd::new(&a).unwrap();
        assert_eq!(svd.u.shape(), (72, 72));
        assert_eq!(svd.v.shape(), (73, 72));
        assert!(orthonormality_error(&svd.u) < 1e-10);
        assert!(orthonormality_error(&svd.v) < 1e-10);
        assert!(svd.reconstruct().max_abs_diff(&a) < 1e-10 * a.frobenius_norm());
        assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rank_deficient_keeps_u_orthonormal() {
        // two identical columns
        let a = Matrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 1.0, 3.0, 3.0, 0.0]).unwrap();
        let svd = Svd::new(&a).unwrap();
        assert!(svd.s[2] < 1e-12);
        assert!(orthonormality_error(&svd.u) < 1e-10);
        assert!(svd.reconstruct().max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn zero_matrix() {
        let svd = Svd::new(&Matrix::zeros(4, 2)).unwrap();
        assert_eq!(svd.s, vec![0.0, 0.0]);
        assert!(orthonormality_error(&svd.u) < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let a = Matrix::from_row_slice(1, 2, &[1.0, f64::NAN]).unwrap();
        assert!(matches!(Svd::new(&a), Err(Error::BadValue(_))));
    }
}
