//! Small dense complex kernels for per-frequency array processing: Hermitian
//! eigendecomposition (cyclic Jacobi), Cholesky solves and power iteration.
//! Matrices here are at most a few dozen rows, so everything is serial and
//! deterministic.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

pub type CMatrix = Array2<Complex64>;
pub type CVector = Array1<Complex64>;

/// Eigenvalues (ascending) and matching unit eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

fn off_diagonal_norm(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[[i, j]].norm_sqr();
            }
        }
    }
    acc.sqrt()
}

/// Cyclic Jacobi eigensolver for a Hermitian matrix.
pub fn hermitian_eigen(matrix: &CMatrix) -> HermitianEigen {
    let n = matrix.nrows();
    assert_eq!(n, matrix.ncols(), "eigen needs a square matrix");
    let mut a = hermitian_part(matrix);
    let mut v = CMatrix::eye(n);
    let scale = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let tol = 1e-15 * scale.max(f64::MIN_POSITIVE);

    for _sweep in 0..64 {
        if off_diagonal_norm(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let b = a[[p, q]];
                let g = b.norm();
                if g <= tol * 1e-3 {
                    continue;
                }
                let phase = b / g;
                let (ap, aq) = (a[[p, p]].re, a[[q, q]].re);
                let theta = 0.5 * (2.0 * g).atan2(aq - ap);
                let (s, c) = theta.sin_cos();
                // U = diag(1, conj(phase)) * [[c, s], [-s, c]]
                let u_qp = -s * phase.conj();
                let u_qq = c * phase.conj();
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = akp * c + akq * u_qp;
                    a[[k, q]] = akp * s + akq * u_qq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = apk * c + aqk * u_qp.conj();
                    a[[q, k]] = apk * s + aqk * u_qq.conj();
                }
                a[[p, q]] = Complex64::default();
                a[[q, p]] = Complex64::default();
                a[[p, p]] = Complex64::new(a[[p, p]].re, 0.0);
                a[[q, q]] = Complex64::new(a[[q, q]].re, 0.0);
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = vkp * c + vkq * u_qp;
                    v[[k, q]] = vkp * s + vkq * u_qq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[i, i]].re.total_cmp(&a[[j, j]].re));
    let values = order.iter().map(|&i| a[[i, i]].re).collect();
    let vectors = CMatrix::from_shape_fn((n, n), |(r, c)| v[[r, order[c]]]);
    HermitianEigen { values, vectors }
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    CMatrix::from_shape_fn((n, n), |(i, j)| (a[[i, j]] + a[[j, i]].conj()) * 0.5)
}

/// Lower Cholesky factor of a Hermitian positive-definite matrix, or `None`
/// when a pivot is not strictly positive.
pub fn cholesky(a: &CMatrix) -> Option<CMatrix> {
    let n = a.nrows();
    let mut l = CMatrix::zeros((n, n));
    let scale = (0..n).map(|i| a[[i, i]].re.abs()).fold(0.0, f64::max);
    for j in 0..n {
        let mut d = a[[j, j]].re;
        for k in 0..j {
            d -= l[[j, k]].norm_sqr();
        }
        if !(d > 1e-14 * scale) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[[j, j]] = Complex64::new(djj, 0.0);
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L L^H x = b` given the lower Cholesky factor.
pub fn cholesky_solve(l: &CMatrix, b: &CVector) -> CVector {
    let n = l.nrows();
    let mut y = CVector::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = CVector::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[[k, i]].conj() * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

pub fn mat_vec(a: &CMatrix, x: &CVector) -> CVector {
    a.dot(x)
}

/// `x^H y`.
pub fn inner(x: &CVector, y: &CVector) -> Complex64 {
    x.iter().zip(y.iter()).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm(x: &CVector) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Principal eigenvector by power iteration: stops after `max_iter` steps or
/// when `||A v - lambda v|| <= tol * |lambda|`. Returns `None` for a zero matrix.
pub fn power_iteration(a: &CMatrix, max_iter: usize, tol: f64) -> Option<(f64, CVector)> {
    let n = a.nrows();
    // Start from the column with the largest norm: never orthogonal to the
    // dominant eigenvector of a PSD matrix.
    let start = (0..n)
        .max_by(|&i, &j| {
            let ni: f64 = a.column(i).iter().map(|v| v.norm_sqr()).sum();
            let nj: f64 = a.column(j).iter().map(|v| v.norm_sqr()).sum();
            ni.total_cmp(&nj)
        })
        .unwrap_or(0);
    let mut v: CVector = a.column(start).to_owned();
    let n0 = norm(&v);
    if n0 == 0.0 || !n0.is_finite() {
        return None;
    }
    v.mapv_inplace(|z| z / n0);
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = mat_vec(a, &v);
        lambda = inner(&v, &w).re;
        let residual: f64 = w
            .iter()
            .zip(v.iter())
            .map(|(wi, vi)| (wi - vi * lambda).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if residual <= tol * lambda.abs() {
            break;
        }
        let nw = norm(&w);
        if nw == 0.0 {
            return None;
        }
        v = w.mapv(|z| z / nw);
    }
    Some((lambda, v))
}
