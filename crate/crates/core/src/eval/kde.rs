use crate::error::{Error, Result};
use crate::ndnet::Matrix;
use crate::scalar::{to_f64, Scalar};

pub const DEFAULT_FOLDS: usize = 5;

/// Gaussian kernel density estimate with isotropic bandwidth `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct KdeModel {
    reference: Matrix<f64>,
    h: f64,
}

impl KdeModel {
    pub fn new<T: Scalar>(reference: &Matrix<T>, h: f64) -> Result<Self> {
        if reference.rows() == 0 {
            return Err(Error::Precondition("KDE needs at least one reference point".into()));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidConfig(format!("bandwidth {h} must be positive")));
        }
        Ok(Self { reference: reference.convert(), h })
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.reference.cols()
    }

    pub fn len(&self) -> usize {
        self.reference.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.rows() == 0
    }

    /// `log (1/N) sum_n N(x; x_n, h² I)` for every row of `x`.
    pub fn log_prob<T: Scalar>(&self, x: &Matrix<T>) -> Result<Vec<f64>> {
        if x.cols() != self.dim() {
            return Err(Error::Dimension(format!("{} columns for a {}-dim KDE", x.cols(), self.dim())));
        }
        let norm = log_norm(self.dim(), self.h, self.len());
        let inv = 1.0 / (2.0 * self.h * self.h);
        let mut buf = vec![0.0; self.len()];
        Ok(x.row_iter()
            .map(|r| {
                let p: Vec<f64> = r.iter().map(|&v| to_f64(v)).collect();
                for (b, q) in buf.iter_mut().zip(self.reference.row_iter()) {
                    *b = -sq_dist(&p, q) * inv;
                }
                lse(&buf) - norm
            })
            .collect())
    }

    /// Mean of `log_prob` over the rows of `x`.
    pub fn mean_log_prob<T: Scalar>(&self, x: &Matrix<T>) -> Result<f64> {
        if x.rows() == 0 {
            return Err(Error::Precondition("no points to score".into()));
        }
        Ok(self.log_prob(x)?.iter().sum::<f64>() / x.rows() as f64)
    }
}

fn log_norm(dim: usize, h: f64, n: usize) -> f64 {
    (n as f64).ln() + 0.5 * dim as f64 * (2.0 * std::f64::consts::PI * h * h).ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lse(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `n` logarithmically spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Default bandwidth grid: 20 points in `[1e-3, 1]`.
pub fn default_bandwidth_grid() -> Vec<f64> {
    log_grid(1e-3, 1.0, 20)
}

/// Fold of a point from an FNV-1a hash of its coordinates, so fold assignment
/// does not depend on row order.
fn fold_of(row: &[f64], folds: usize) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in row {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    (h % folds as u64) as usize
}

/// Bandwidth maximising the mean held-out log-likelihood over `folds`
/// hash-assigned folds. Ties go to the smaller bandwidth. Folds whose held-out
/// or reference part is empty, or whose reference points are all identical,
/// are skipped.
pub fn cv_bandwidth<T: Scalar>(data: &Matrix<T>, grid: &[f64], folds: usize) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty bandwidth grid".into()));
    }
    if grid.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::InvalidConfig("bandwidths must be positive".into()));
    }
    if folds < 2 {
        return Err(Error::InvalidConfig("cross-validation needs at least two folds".into()));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let x: Matrix<f64> = data.convert();
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite bandwidths"));
    let assign: Vec<usize> = x.row_iter().map(|r| fold_of(r, folds)).collect();
    let d = x.cols();

    let mut score = vec![0.0; sorted.len()];
    let mut used = 0usize;
    for f in 0..folds {
        let held: Vec<usize> = (0..x.rows()).filter(|&i| assign[i] == f).collect();
        let refs: Vec<usize> = (0..x.rows()).filter(|&i| assign[i] != f).collect();
        if held.is_empty() || refs.is_empty() {
            continue;
        }
        let first = x.row(refs[0]);
        if refs.iter().all(|&i| x.row(i) == first) {
            continue;
        }
        used += 1;
        let mut dists = vec![0.0; refs.len()];
        let mut buf = vec![0.0; refs.len()];
        let mut fold_score = vec![0.0; sorted.len()];
        for &i in &held {
            let p = x.row(i);
            for (dd, &j) in dists.iter_mut().zip(&refs) {
                *dd = sq_dist(p, x.row(j));
            }
            for (s, &h) in fold_score.iter_mut().zip(&sorted) {
                let inv = 1.0 / (2.0 * h * h);
                buf.iter_mut().zip(&dists).for_each(|(b, &dd)| *b = -dd * inv);
                *s += lse(&buf) - log_norm(d, h, refs.len());
            }
        }
        for (s, fs) in score.iter_mut().zip(fold_score) {
            *s += fs / held.len() as f64;
        }
    }
    if used == 0 {
        return Err(Error::Precondition("every cross-validation fold is degenerate".into()));
    }
    let mut best = 0;
    for i in 1..sorted.len() {
        if score[i] > score[best] {
            best = i;
        }
    }
    Ok(sorted[best])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints() {
        let g = default_bandwidth_grid();
        assert_eq!(g.len(), 20);
        assert!((g[0] - 1e-3).abs() < 1e-15 && (g[19] - 1.0).abs() < 1e-12);
        assert_eq!(log_grid(0.5, 2.0, 1), vec![0.5]);
    }

    #[test]
    fn fold_hash_is_stable() {
        assert_eq!(fold_of(&[1.0, 2.0], 5), fold_of(&[1.0, 2.0], 5));
        let counts = (0..1000).fold([0usize; 5], |mut c, i| {
            c[fold_of(&[i as f64 * 0.37], 5)] += 1;
            c
        });
        assert!(counts.iter().all(|&c| c > 120), "{counts:?}");
    }
}
