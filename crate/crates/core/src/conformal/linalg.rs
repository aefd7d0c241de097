//! Small dense helpers for the conformal stages (dimensions are tiny).

use crate::ndnet::Matrix;
use crate::scalar::{lit, Scalar};

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm_sq<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}

pub fn matvec<T: Scalar>(m: &Matrix<T>, v: &[T]) -> Vec<T> {
    m.row_iter().map(|r| dot(r, v)).collect()
}

/// `mᵀ v`.
pub fn matvec_t<T: Scalar>(m: &Matrix<T>, v: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); m.cols()];
    for (r, &vi) in m.row_iter().zip(v) {
        out.iter_mut().zip(r).for_each(|(o, &a)| *o += a * vi);
    }
    out
}

fn norm_1<T: Scalar>(m: &Matrix<T>) -> T {
    (0..m.cols()).map(|j| (0..m.rows()).map(|i| m[(i, j)].abs()).sum::<T>()).fold(T::zero(), T::max)
}

/// Matrix exponential by scaling and squaring of a Taylor series.
pub fn expm<T: Scalar>(a: &Matrix<T>) -> Matrix<T> {
    let n = a.rows();
    let norm = to_f64_safe(norm_1(a));
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let x = a.map(|v| v / lit::<T>(2f64.powi(squarings)));
    let mut result = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=30 {
        term = term.matmul(&x).expect("square").map(|v| v / lit::<T>(k as f64));
        let small = norm_1(&term) <= T::epsilon() * lit(1e-2);
        result = add(&result, &term);
        if small {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.matmul(&result).expect("square");
    }
    result
}

fn to_f64_safe<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::INFINITY)
}

pub fn add<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| x + y).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

/// Fréchet derivative of `expm` at `a` in direction `e`: the upper-right block
/// of `expm([[a, e], [0, a]])`.
pub fn expm_frechet<T: Scalar>(a: &Matrix<T>, e: &Matrix<T>) -> Matrix<T> {
    let n = a.rows();
    let mut big = Matrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            big[(i, j)] = a[(i, j)];
            big[(n + i, n + j)] = a[(i, j)];
            big[(i, n + j)] = e[(i, j)];
        }
    }
    let ex = expm(&big);
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = ex[(i, n + j)];
        }
    }
    out
}

/// Number of free entries of a `d x d` skew-symmetric matrix.
pub fn skew_len(d: usize) -> usize {
    d * d.saturating_sub(1) / 2
}

/// Skew-symmetric matrix whose strict upper triangle (row-major) is `p`.
pub fn skew<T: Scalar>(d: usize, p: &[T]) -> Matrix<T> {
    let mut s = Matrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in i + 1..d {
            s[(i, j)] = p[k];
            s[(j, i)] = -p[k];
            k += 1;
        }
    }
    s
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and eigenvectors as columns.
pub fn symmetric_eigen<T: Scalar>(m: &Matrix<T>) -> (Vec<T>, Matrix<T>) {
    let n = m.rows();
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    for _sweep in 0..100 {
        let off: T = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)] * a[(i, j)]).sum();
        if off <= T::epsilon() * T::epsilon() * norm_1(&a).max(T::min_positive_value()) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)] == T::zero() {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (lit::<T>(2.0) * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap_or(std::cmp::Ordering::Equal));
    let vals = order.iter().map(|&i| a[(i, i)]).collect();
    (vals, v.select_cols(&order))
}

pub fn determinant<T: Scalar>(m: &Matrix<T>) -> T {
    let n = m.rows();
    let mut a = m.clone();
    let mut det = T::one();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[(i, c)].abs().partial_cmp(&a[(j, c)].abs()).unwrap()).unwrap();
        if a[(p, c)] == T::zero() {
            return T::zero();
        }
        if p != c {
            for k in 0..n {
                let tmp = a[(p, k)];
                a[(p, k)] = a[(c, k)];
                a[(c, k)] = tmp;
            }
            det = -det;
        }
        det *= a[(c, c)];
        for r in c + 1..n {
            let f = a[(r, c)] / a[(c, c)];
            for k in c..n {
                let v = a[(c, k)];
                a[(r, k)] -= f * v;
            }
        }
    }
    det
}
