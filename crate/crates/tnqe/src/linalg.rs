//! Robust thin SVD.
//!
//! nalgebra's Golub–Kahan SVD can return inconsistent factors for nearly
//! rank-deficient matrices with more columns than rows: for a rank-1 3x4
//! matrix perturbed at the 1e-16 level the reconstruction ‖UΣVᵀ − M‖ has been
//! observed above 1e-1. Every SVD in this crate therefore goes through
//! [`thin_svd`], which accepts the nalgebra result only when it actually
//! reconstructs the input and otherwise recomputes the decomposition with
//! one-sided Jacobi rotations (slower, but unconditionally accurate for the
//! small matrices that appear here).

use nalgebra::{DMatrix, DVector};

/// Thin SVD `m = u * diag(s) * v_t` with `s` sorted in descending order.
///
/// Shapes: `u` is nrows x r, `s` has length r, `v_t` is r x ncols, with
/// r = min(nrows, ncols). `u` has orthonormal columns and `v_t` orthonormal
/// rows even when `m` is rank deficient (null directions are completed by
/// Gram–Schmidt against the standard basis).
pub fn thin_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let r = m.nrows().min(m.ncols());
    if r == 0 {
        return (
            DMatrix::zeros(m.nrows(), 0),
            DVector::zeros(0),
            DMatrix::zeros(0, m.ncols()),
        );
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let s = svd.singular_values;
    let scale = 1.0 + s.max();
    let recon = &u * DMatrix::from_diagonal(&s) * &v_t;
    let err = (recon - m).abs().max();
    if err <= 1e-10 * scale {
        return (u, s, v_t);
    }
    jacobi_svd(m)
}

/// One-sided Jacobi SVD, applied to the transpose when `m` is wide so the
/// rotated columns are always the short dimension.
fn jacobi_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    if m.nrows() < m.ncols() {
        let (u, s, v_t) = jacobi_svd(&m.transpose());
        return (v_t.transpose(), s, u.transpose());
    }
    let n = m.ncols();
    let mut a = m.clone(); // columns converge to u_j * sigma_j
    let mut v = DMatrix::<f64>::identity(n, n);
    let tol = 1e-15;
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let app: f64 = a.column(p).dot(&a.column(p));
                let aqq: f64 = a.column(q).dot(&a.column(q));
                let apq: f64 = a.column(p).dot(&a.column(q));
                if apq.abs() <= tol * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for i in 0..a.nrows() {
                    let (x, y) = (a[(i, p)], a[(i, q)]);
                    a[(i, p)] = cs * x - sn * y;
                    a[(i, q)] = sn * x + cs * y;
                }
                for i in 0..n {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = cs * x - sn * y;
                    v[(i, q)] = sn * x + cs * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u = DMatrix::<f64>::zeros(m.nrows(), n);
    let mut s = DVector::<f64>::zeros(n);
    let mut vt = DMatrix::<f64>::zeros(n, n);
    let tiny = 1e-300;
    for (out, &j) in order.iter().enumerate() {
        s[out] = norms[j];
        if norms[j] > tiny {
            u.column_mut(out).copy_from(&(a.column(j) / norms[j]));
        }
        for i in 0..n {
            vt[(out, i)] = v[(i, j)];
        }
    }
    // Orthonormal completion for null columns of u.
    for out in 0..n {
        if s[out] > tiny {
            continue;
        }
        for seed in 0..m.nrows() {
            let mut cand = DVector::<f64>::zeros(m.nrows());
            cand[seed] = 1.0;
            for k in 0..n {
                if k != out && (s[k] > tiny || k < out) {
                    let proj = u.column(k).dot(&cand);
                    cand -= proj * u.column(k);
                }
            }
            let nn = cand.norm();
            if nn > 0.5 {
                u.column_mut(out).copy_from(&(cand / nn));
                break;
            }
        }
    }
    (u, s, vt)
}
