//! Small dense symmetric linear algebra: Cholesky factorization and Jacobi
//! eigendecomposition. Matrices here are tiny (spline blocks, factor loadings),
//! so O(p^3) routines without pivoting are adequate.

use ndarray::{Array1, Array2};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
/// Fails with the offending pivot index when a pivot is not strictly positive.
pub(crate) fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>, usize> {
    let p = a.nrows();
    debug_assert_eq!(p, a.ncols());
    let mut l = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..p {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(l)
}

/// Solves L L' x = b given the lower factor from [`cholesky`].
pub(crate) fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let p = l.nrows();
    let mut x = b.clone();
    for i in 0..p {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    for i in (0..p).rev() {
        let mut s = x[i];
        for k in (i + 1)..p {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
pub(crate) fn spd_inverse(a: &Array2<f64>) -> Result<Array2<f64>, usize> {
    let l = cholesky(a)?;
    let p = a.nrows();
    let mut inv = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        let mut e = Array1::<f64>::zeros(p);
        e[j] = 1.0;
        let col = cholesky_solve(&l, &e);
        inv.column_mut(j).assign(&col);
    }
    // Symmetrize to wash out the last bits of round-off.
    for i in 0..p {
        for j in (i + 1)..p {
            let m = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = m;
            inv[(j, i)] = m;
        }
    }
    Ok(inv)
}

/// Eigenvalues and eigenvectors of a symmetric matrix by cyclic Jacobi
/// rotations. Returns (eigenvalues, eigenvectors) with eigenvectors in columns,
/// sorted by descending eigenvalue.
pub(crate) fn jacobi_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let p = a.nrows();
    debug_assert_eq!(p, a.ncols());
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(p);
    if p <= 1 {
        return (m.diag().to_owned(), v);
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..p {
            for j in (i + 1)..p {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= 1e-14 * (1.0 + frobenius(&m)) {
            break;
        }
        for i in 0..p {
            for j in (i + 1)..p {
                let apq = m[(i, j)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(j, j)] - m[(i, i)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..p {
                    let mik = m[(i, k)];
                    let mjk = m[(j, k)];
                    m[(i, k)] = c * mik - s * mjk;
                    m[(j, k)] = s * mik + c * mjk;
                }
                for k in 0..p {
                    let mki = m[(k, i)];
                    let mkj = m[(k, j)];
                    m[(k, i)] = c * mki - s * mkj;
                    m[(k, j)] = s * mki + c * mkj;
                }
                for k in 0..p {
                    let vki = v[(k, i)];
                    let vkj = v[(k, j)];
                    v[(k, i)] = c * vki - s * vkj;
                    v[(k, j)] = s * vki + c * vkj;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let eigvals = Array1::from_iter(order.iter().map(|&k| m[(k, k)]));
    let mut eigvecs = Array2::<f64>::zeros((p, p));
    for (slot, &k) in order.iter().enumerate() {
        eigvecs.column_mut(slot).assign(&v.column(k));
    }
    (eigvals, eigvecs)
}

/// Condition number estimate |lambda_max| / |lambda_min| from the Jacobi
/// spectrum; infinite when the smallest magnitude is zero.
pub(crate) fn condition_number(a: &Array2<f64>) -> f64 {
    let (vals, _) = jacobi_eigen(a);
    let maxabs = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let minabs = vals.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if minabs == 0.0 {
        f64::INFINITY
    } else {
        maxabs / minabs
    }
}

pub(crate) fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Maximum absolute asymmetry |a_ij - a_ji|.
#[cfg(test)]
pub(crate) fn max_asymmetry(a: &Array2<f64>) -> f64 {
    let p = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..p {
        for j in (i + 1)..p {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}
