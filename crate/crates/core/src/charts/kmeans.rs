use rand::Rng;

use crate::error::{Error, Result};
use crate::ndnet::Matrix;
use crate::scalar::{lit, to_f64, Scalar};

pub const KMEANS_MAX_ITERS: usize = 100;
pub const KMEANS_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct KMeans<T> {
    pub centers: Matrix<T>,
    pub assignments: Vec<usize>,
    /// Mean squared distance to the assigned center, after seeding and after each Lloyd step.
    pub objective: Vec<f64>,
}

pub(crate) fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Nearest center by squared distance; ties go to the lowest index.
fn nearest<T: Scalar>(centers: &Matrix<T>, x: &[T]) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (k, c) in centers.row_iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn assign<T: Scalar>(data: &Matrix<T>, centers: &Matrix<T>, out: &mut [usize]) -> f64 {
    let mut total = 0.0;
    for (r, x) in data.row_iter().enumerate() {
        let (k, d) = nearest(centers, x);
        out[r] = k;
        total += to_f64(d);
    }
    total / data.rows() as f64
}

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded at
/// the point farthest from its current center.
pub fn kmeans<T: Scalar, R: Rng + ?Sized>(data: &Matrix<T>, k: usize, rng: &mut R) -> Result<KMeans<T>> {
    let n = data.rows();
    if k == 0 || n < k {
        return Err(Error::Precondition(format!("k-means needs 1 <= K <= n, got K={k}, n={n}")));
    }
    let dim = data.cols();
    let mut centers = Matrix::zeros(k, dim);
    centers.row_mut(0).copy_from_slice(data.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = data.row_iter().map(|x| to_f64(sq_dist(x, centers.row(0)))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(data.row(pick));
        for (i, x) in data.row_iter().enumerate() {
            d2[i] = d2[i].min(to_f64(sq_dist(x, centers.row(c))));
        }
    }

    let mut assignments = vec![0; n];
    let mut objective = vec![assign(data, &centers, &mut assignments)];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut sums = Matrix::<T>::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (x, &a) in data.row_iter().zip(&assignments) {
            counts[a] += 1;
            sums.row_mut(a).iter_mut().zip(x).for_each(|(s, &v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = T::one() / lit::<T>(counts[c] as f64);
                let row: Vec<T> = sums.row(c).iter().map(|&s| s * inv).collect();
                centers.row_mut(c).copy_from_slice(&row);
            }
        }
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let far = (0..n)
                .max_by(|&i, &j| {
                    let di = sq_dist(data.row(i), centers.row(assignments[i]));
                    let dj = sq_dist(data.row(j), centers.row(assignments[j]));
                    di.partial_cmp(&dj).unwrap_or(std::cmp::Ordering::Equal)
                })
                .expect("nonempty data");
            centers.row_mut(c).copy_from_slice(data.row(far));
            assignments[far] = c;
        }
        let obj = assign(data, &centers, &mut assignments);
        let prev = *objective.last().expect("seeded");
        objective.push(obj);
        if prev - obj <= KMEANS_TOL * prev.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(KMeans { centers, assignments, objective })
}
