//! Symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Deterministic by construction: fixed sweep order, a fixed sign convention
//! (the largest-magnitude entry of every eigenvector is made positive), and a
//! lexicographic tie-break inside degenerate eigenvalue clusters.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Relative off-diagonal Frobenius tolerance for convergence.
const OFFDIAG_TOL: f64 = 1e-12;
/// Hard cap on the number of cyclic sweeps.
const MAX_SWEEPS: usize = 100;
/// Input must be symmetric to this relative tolerance.
const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues closer than this (relative) are treated as one cluster when
/// ordering eigenvectors.
const CLUSTER_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct SymEig {
    /// Eigenvalues sorted in descending order.
    pub eigenvalues: Vec<f64>,
    /// Matching eigenvectors as columns.
    pub eigenvectors: Matrix,
}

impl SymEig {
    /// Reconstruction U diag(λ) Uᵀ, mainly for test oracles.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.eigenvalues.len();
        let mut out = Matrix::zeros(n, n);
        for k in 0..n {
            let lam = self.eigenvalues[k];
            let u = self.eigenvectors.column(k);
            for i in 0..n {
                for j in 0..n {
                    out.set(i, j, out.get(i, j) + lam * u[i] * u[j]);
                }
            }
        }
        out
    }
}

fn offdiag_frob(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for p in 0..n {
        for q in (p + 1)..n {
            s += 2.0 * a.get(p, q) * a.get(p, q);
        }
    }
    s.sqrt()
}

/// Eigendecomposition of a symmetric matrix with descending eigenvalues.
pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("sym_eig needs a square matrix, got {}x{}", a.rows(), a.cols())));
    }
    if !a.all_finite() {
        return Err(Error::NonFinite("sym_eig input".into()));
    }
    if !a.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::NotSymmetric(format!("relative asymmetry {:e} exceeds {:e}", a.asymmetry(), SYMMETRY_TOL)));
    }

    let n = a.rows();
    let mut m = a.clone();
    m.symmetrize();
    let mut v = Matrix::identity(n);
    let scale = m.frob_norm().max(f64::MIN_POSITIVE);

    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        if offdiag_frob(&m) <= OFFDIAG_TOL * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                // Skip rotations that cannot change anything at f64 precision.
                if apq.abs() <= f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()).max(scale * 1e-16) {
                    m.set(p, q, 0.0);
                    m.set(q, p, 0.0);
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                m.set(p, p, app - t * apq);
                m.set(q, q, aqq + t * apq);
                m.set(p, q, 0.0);
                m.set(q, p, 0.0);
                for r in 0..n {
                    if r != p && r != q {
                        let arp = m.get(r, p);
                        let arq = m.get(r, q);
                        let new_rp = arp - s * (arq + tau * arp);
                        let new_rq = arq + s * (arp - tau * arq);
                        m.set(r, p, new_rp);
                        m.set(p, r, new_rp);
                        m.set(r, q, new_rq);
                        m.set(q, r, new_rq);
                    }
                }
                for r in 0..n {
                    let vrp = v.get(r, p);
                    let vrq = v.get(r, q);
                    v.set(r, p, vrp - s * (vrq + tau * vrp));
                    v.set(r, q, vrq + s * (vrp - tau * vrq));
                }
            }
        }
        sweeps += 1;
    }
    if !converged && offdiag_frob(&m) > OFFDIAG_TOL * scale {
        return Err(Error::NoConvergence { sweeps, offdiag: offdiag_frob(&m) });
    }

    let mut eigenvalues: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    let mut vectors: Vec<Vec<f64>> = (0..n).map(|k| v.column(k)).collect();

    for vec in vectors.iter_mut() {
        fix_sign(vec);
    }

    // Descending order, with lexicographic |entry| comparison inside clusters
    // of numerically equal eigenvalues.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eigenvalues[j].partial_cmp(&eigenvalues[i]).unwrap_or(std::cmp::Ordering::Equal)
    });
    let lam_scale = eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(f64::MIN_POSITIVE);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n
            && (eigenvalues[order[end - 1]] - eigenvalues[order[end]]).abs() <= CLUSTER_TOL * lam_scale
        {
            end += 1;
        }
        if end - start > 1 {
            // Descending lexicographic |entry| order, so that the identity
            // matrix yields the canonical basis in canonical order.
            order[start..end].sort_by(|&i, &j| lex_abs_cmp(&vectors[j], &vectors[i]));
        }
        start = end;
    }

    let sorted_vals: Vec<f64> = order.iter().map(|&i| eigenvalues[i]).collect();
    let mut u = Matrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        u.set_column(k, &vectors[i]);
    }
    eigenvalues.clear();
    Ok(SymEig { eigenvalues: sorted_vals, eigenvectors: u })
}

/// Flip the vector so its largest-magnitude entry is positive; magnitude ties
/// resolve to the lowest index.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0.0f64;
    let mut sign = 1.0f64;
    for &x in v.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = if x >= 0.0 { 1.0 } else { -1.0 };
        }
    }
    if sign < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

fn lex_abs_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.abs().partial_cmp(&y.abs()) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    std::cmp::Ordering::Equal
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn check_orthonormal(u: &Matrix, tol: f64) {
        let g = u.transpose().matmul(u).unwrap();
        let err = g.sub(&Matrix::identity(u.rows())).unwrap().max_abs();
        assert!(err <= tol, "orthonormality error {:e}", err);
    }

    #[test]
    fn diagonal_case() {
        let e = sym_eig(&Matrix::diag(&[2.0, 1.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![2.0, 1.0]);
        assert_eq!(e.eigenvectors.column(0), vec![1.0, 0.0]);
        assert_eq!(e.eigenvectors.column(1), vec![0.0, 1.0]);
    }

    #[test]
    fn exchange_matrix() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let e = sym_eig(&a).unwrap();
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!((e.eigenvalues[1] + 1.0).abs() < 1e-12);
        let u0 = e.eigenvectors.column(0);
        let u1 = e.eigenvectors.column(1);
        assert!((u0[0] - inv_sqrt2).abs() < 1e-12 && (u0[1] - inv_sqrt2).abs() < 1e-12);
        // Sign convention: equal magnitudes break toward positive entry 0.
        assert!((u1[0] - inv_sqrt2).abs() < 1e-12 && (u1[1] + inv_sqrt2).abs() < 1e-12);
    }

    #[test]
    fn random_reconstruction() {
        let mut stream = RngStream::new(11, 0);
        for &n in &[2usize, 3, 8, 16] {
            let g = stream.gaussian(n * n);
            let mut a = Matrix::from_vec(n, n, g).unwrap();
            a.symmetrize();
            let e = sym_eig(&a).unwrap();
            check_orthonormal(&e.eigenvectors, 1e-10);
            let rel = e.reconstruct().sub(&a).unwrap().frob_norm() / a.frob_norm();
            assert!(rel <= 1e-8, "n={} reconstruction error {:e}", n, rel);
            for w in e.eigenvalues.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn shift_invariance() {
        let mut stream = RngStream::new(12, 0);
        let n = 6;
        let mut a = Matrix::from_vec(n, n, stream.gaussian(n * n)).unwrap();
        a.symmetrize();
        let c = 0.737;
        let shifted = a.add(&Matrix::identity(n).scale(c)).unwrap();
        let ea = sym_eig(&a).unwrap();
        let es = sym_eig(&shifted).unwrap();
        for (l, ls) in ea.eigenvalues.iter().zip(&es.eigenvalues) {
            assert!((ls - l - c).abs() <= 1e-10);
        }
    }

    #[test]
    fn identity_returns_canonical_basis() {
        let e = sym_eig(&Matrix::identity(4)).unwrap();
        assert_eq!(e.eigenvectors, Matrix::identity(4));
    }

    #[test]
    fn rejects_asymmetric() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&a), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn rejects_non_square() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(sym_eig(&a), Err(Error::Dimension(_))));
    }
}
