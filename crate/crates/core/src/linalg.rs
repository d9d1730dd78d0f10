//! Small dense linear-algebra helpers: Jacobi eigensolver, Gram–Schmidt,
//! Cholesky, and a matrix-free conjugate-gradient solver.
//!
//! These back the prosody projector (PCA), the synthetic-trajectory
//! whitening, and the modulation-parameter fitting. All routines are
//! deterministic for identical inputs.

use crate::scalar::Scalar;

/// Dense symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// `a` is an `n x n` symmetric matrix in row-major order. Returns
/// `(eigenvalues, eigenvectors)` sorted by descending eigenvalue; eigenvector
/// `k` occupies `vectors[k * n .. (k + 1) * n]`. Intended for small `n`
/// (covariances of prosody-width matrices), not for full feature dims.
pub fn jacobi_eigh<T: Scalar>(a: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    assert_eq!(a.len(), n * n, "matrix must be n*n");
    let mut m = a.to_vec();
    // v starts as identity, accumulates rotations; v[r * n + c] = V[r][c].
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let tol = T::from_f64_lossy(1e-14);
    let max_sweeps = 100;
    for _ in 0..max_sweeps {
        let mut off = T::zero();
        for r in 0..n {
            for c in (r + 1)..n {
                off += m[r * n + c] * m[r * n + c];
            }
        }
        let scale: T = (0..n).map(|i| m[i * n + i] * m[i * n + i]).sum::<T>() + off;
        if off <= tol * (scale + T::from_f64_lossy(1e-300)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (T::from_f64_lossy(2.0) * apq);
                // Stable tangent of the rotation angle.
                let t = {
                    let sign = if theta >= T::zero() {
                        T::one()
                    } else {
                        -T::one()
                    };
                    sign / (theta.abs() + (T::one() + theta * theta).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[j * n + j]
            .partial_cmp(&m[i * n + i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = vec![T::zero(); n * n];
    for (k, &idx) in order.iter().enumerate() {
        eigenvalues.push(m[idx * n + idx]);
        for r in 0..n {
            eigenvectors[k * n + r] = v[r * n + idx];
        }
    }
    (eigenvalues, eigenvectors)
}

/// In-place modified Gram–Schmidt on row vectors with one re-orthogonalization
/// pass. Rows that collapse below `1e-12` are rejected by returning `false`.
pub fn orthonormalize_rows<T: Scalar>(rows: &mut [Vec<T>]) -> bool {
    let tiny = T::from_f64_lossy(1e-12);
    for i in 0..rows.len() {
        for _ in 0..2 {
            for j in 0..i {
                let dot = dot(&rows[i], &rows[j]);
                let (head, tail) = rows.split_at_mut(i);
                for (x, &y) in tail[0].iter_mut().zip(head[j].iter()) {
                    *x = *x - dot * y;
                }
            }
        }
        let norm = dot(&rows[i], &rows[i]).sqrt();
        if norm < tiny {
            return false;
        }
        for x in rows[i].iter_mut() {
            *x /= norm;
        }
    }
    true
}

/// Dot product.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Squared Euclidean distance.
pub fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// `v / max(||v||, 1e-12)`, the unit-normalized copy used for L2 lookups.
pub fn unit_normalized<T: Scalar>(v: &[T]) -> Vec<T> {
    let norm = dot(v, v).sqrt();
    let denom = norm.max(T::from_f64_lossy(1e-12));
    v.iter().map(|&x| x / denom).collect()
}

/// Cholesky solve of `A x = b` for symmetric positive-definite `A`
/// (row-major `n x n`). Returns `None` when a pivot is not positive.
pub fn cholesky_solve<T: Scalar>(a: &[T], b: &[T], n: usize) -> Option<Vec<T>> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= T::zero() {
                    return None;
                }
                l[i * n + j] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    // Forward then backward substitution.
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    Some(x)
}

/// Conjugate gradients on a symmetric positive-definite operator given as a
/// closure. Solves `A x = b` to relative residual `tol` or `max_iters`.
pub fn conjugate_gradient<T: Scalar>(
    mut apply: impl FnMut(&[T], &mut [T]),
    b: &[T],
    tol: f64,
    max_iters: usize,
) -> Vec<T> {
    let n = b.len();
    let mut x = vec![T::zero(); n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![T::zero(); n];
    let mut rs_old = dot(&r, &r);
    let b_norm = dot(b, b).sqrt().to_f64_lossy().max(1e-300);
    for _ in 0..max_iters {
        if rs_old.sqrt().to_f64_lossy() / b_norm < tol {
            break;
        }
        apply(&p, &mut ap);
        let denom = dot(&p, &ap);
        if denom <= T::zero() {
            break;
        }
        let alpha = rs_old / denom;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs_old;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs_old = rs_new;
    }
    x
}
