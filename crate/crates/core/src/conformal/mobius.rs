use serde::{Deserialize, Serialize};

use super::linalg::{matvec, matvec_t, norm_sq};
use crate::error::{Error, Result};
use crate::ndnet::Matrix;
use crate::scalar::{lit, Scalar};

/// Exponent of the denominator: 0 for a similarity, 2 for an inversion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Epsilon {
    Zero,
    Two,
}

/// `x -> b + alpha (A x - a) / |A x - a|^eps` with `A` orthogonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MobiusParams<T> {
    pub orth: Matrix<T>,
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub alpha: T,
    pub epsilon: Epsilon,
}

fn orth_tolerance<T: Scalar>() -> T {
    (T::epsilon() * lit(1e3)).max(lit(1e-10))
}

impl<T: Scalar> MobiusParams<T> {
    pub fn new(orth: Matrix<T>, a: Vec<T>, b: Vec<T>, alpha: T, epsilon: Epsilon) -> Result<Self> {
        let m = Self { orth, a, b, alpha, epsilon };
        m.validate()?;
        Ok(m)
    }

    /// Builds the map from its center `c = Aᵀ a`: `x -> b + alpha A (x - c) / |x - c|^eps`.
    pub fn from_center(orth: Matrix<T>, c: &[T], b: Vec<T>, alpha: T, epsilon: Epsilon) -> Result<Self> {
        if orth.cols() != c.len() {
            return Err(Error::Dimension(format!("center of length {} for a {}-dim map", c.len(), orth.cols())));
        }
        let a = matvec(&orth, c);
        Self::new(orth, a, b, alpha, epsilon)
    }

    pub fn identity(d: usize) -> Self {
        Self { orth: Matrix::identity(d), a: vec![T::zero(); d], b: vec![T::zero(); d], alpha: T::one(), epsilon: Epsilon::Zero }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.orth.rows();
        if self.orth.cols() != d || self.a.len() != d || self.b.len() != d {
            return Err(Error::Dimension(format!(
                "Möbius parts A {:?}, a {}, b {}",
                self.orth.shape(),
                self.a.len(),
                self.b.len()
            )));
        }
        if self.alpha == T::zero() || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig("Möbius scale alpha must be finite and nonzero".into()));
        }
        let ata = self.orth.transpose().matmul(&self.orth)?;
        if ata.max_abs_diff(&Matrix::identity(d)) > orth_tolerance() {
            return Err(Error::InvalidConfig("Möbius matrix A is not orthogonal".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.orth.rows()
    }

    /// The point `c` with `A c = a` (the pole when eps = 2).
    pub fn center(&self) -> Vec<T> {
        matvec_t(&self.orth, &self.a)
    }

    fn offset(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!("point of length {} for a {}-dim map", x.len(), self.dim())));
        }
        let mut w = matvec(&self.orth, x);
        w.iter_mut().zip(&self.a).for_each(|(v, &a)| *v -= a);
        if self.epsilon == Epsilon::Two && norm_sq(&w) == T::zero() {
            return Err(Error::Pole);
        }
        Ok(w)
    }

    fn denom(&self, w: &[T]) -> T {
        match self.epsilon {
            Epsilon::Zero => T::one(),
            Epsilon::Two => norm_sq(w),
        }
    }

    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        let w = self.offset(x)?;
        let s = self.alpha / self.denom(&w);
        Ok(self.b.iter().zip(&w).map(|(&b, &w)| b + s * w).collect())
    }

    /// `|lambda(x)|` with `JᵀJ = lambda² I`.
    pub fn conformal_factor(&self, x: &[T]) -> Result<T> {
        let w = self.offset(x)?;
        Ok(self.alpha.abs() / self.denom(&w))
    }

    pub fn jacobian(&self, x: &[T]) -> Result<Matrix<T>> {
        let w = self.offset(x)?;
        let d = self.dim();
        let n2 = self.denom(&w);
        let mut j = self.orth.map(|v| v * self.alpha / n2);
        if self.epsilon == Epsilon::Two {
            // alpha (I - 2 w wᵀ / |w|²) A / |w|²
            let wa = matvec_t(&self.orth, &w);
            let two: T = lit(2.0);
            for r in 0..d {
                for c in 0..d {
                    j[(r, c)] -= two * self.alpha * w[r] * wa[c] / (n2 * n2);
                }
            }
        }
        Ok(j)
    }

    /// The group inverse.
    pub fn inverse(&self) -> Self {
        let c = self.center();
        let orth = self.orth.transpose();
        let alpha = match self.epsilon {
            Epsilon::Zero => T::one() / self.alpha,
            Epsilon::Two => self.alpha,
        };
        let a = matvec(&orth, &self.b);
        Self { orth, a, b: c, alpha, epsilon: self.epsilon }
    }

    pub fn inverse_apply(&self, y: &[T]) -> Result<Vec<T>> {
        self.inverse().apply(y)
    }

    /// Block embedding into `d + s` dimensions: `blockdiag(A, I)`, zero-padded
    /// `a` and `b`. Agrees with `pad ∘ m` on padded points.
    pub fn pad(&self, s: usize) -> Self {
        let d = self.dim();
        let mut orth = Matrix::identity(d + s);
        for r in 0..d {
            for c in 0..d {
                orth[(r, c)] = self.orth[(r, c)];
            }
        }
        let padv = |v: &[T]| v.iter().copied().chain(std::iter::repeat_n(T::zero(), s)).collect();
        Self { orth, a: padv(&self.a), b: padv(&self.b), alpha: self.alpha, epsilon: self.epsilon }
    }
}

/// Householder reflection `I - 2 v vᵀ / |v|²`.
fn householder<T: Scalar>(v: &[T]) -> Matrix<T> {
    let d = v.len();
    let n2 = norm_sq(v);
    let mut h = Matrix::identity(d);
    for r in 0..d {
        for c in 0..d {
            h[(r, c)] -= lit::<T>(2.0) * v[r] * v[c] / n2;
        }
    }
    h
}

/// `|delta|²` below which `m1.b` is taken to sit on the center of `m2`.
fn collapse_tol<T: Scalar>(b1: &[T], c2: &[T]) -> T {
    let scale = T::one() + norm_sq(b1).sqrt() + norm_sq(c2).sqrt();
    let t = T::epsilon() * lit(64.0) * scale;
    t * t
}

/// The group product `m2 ∘ m1`.
pub fn compose<T: Scalar>(m2: &MobiusParams<T>, m1: &MobiusParams<T>) -> Result<MobiusParams<T>> {
    if m1.dim() != m2.dim() {
        return Err(Error::Dimension(format!("composing {}-dim with {}-dim Möbius maps", m2.dim(), m1.dim())));
    }
    let c1 = m1.center();
    let c2 = m2.center();
    let delta: Vec<T> = m1.b.iter().zip(&c2).map(|(&b, &c)| b - c).collect();
    let d2 = norm_sq(&delta);
    let a21 = m2.orth.matmul(&m1.orth)?;
    let a1t_delta = matvec_t(&m1.orth, &delta);
    let a2_delta = matvec(&m2.orth, &delta);
    let shifted = |scale: T| -> Vec<T> { c1.iter().zip(&a1t_delta).map(|(&c, &v)| c - scale * v).collect() };
    use Epsilon::{Two, Zero};
    match (m1.epsilon, m2.epsilon) {
        (Zero, Zero) => {
            let c = shifted(T::one() / m1.alpha);
            MobiusParams::from_center(a21, &c, m2.b.clone(), m1.alpha * m2.alpha, Zero)
        }
        (Zero, Two) => {
            let c = shifted(T::one() / m1.alpha);
            MobiusParams::from_center(a21, &c, m2.b.clone(), m2.alpha / m1.alpha, Two)
        }
        (Two, Zero) => {
            let b = m2.b.iter().zip(&a2_delta).map(|(&b, &v)| b + m2.alpha * v).collect();
            MobiusParams::from_center(a21, &c1, b, m1.alpha * m2.alpha, Two)
        }
        (Two, Two) if d2 <= collapse_tol::<T>(&m1.b, &c2) => MobiusParams::from_center(a21, &c1, m2.b.clone(), m2.alpha / m1.alpha, Zero),
        (Two, Two) => {
            let c = shifted(m1.alpha / d2);
            let orth = m2.orth.matmul(&householder(&delta))?.matmul(&m1.orth)?;
            let b = m2.b.iter().zip(&a2_delta).map(|(&b, &v)| b + m2.alpha * v / d2).collect();
            MobiusParams::from_center(orth, &c, b, m1.alpha * m2.alpha / d2, Two)
        }
    }
}

/// Collapses `m2 ∘ pad_s ∘ m1` into a single `(d + s)`-dim map `m` with
/// `m2 ∘ pad_s ∘ m1 = m ∘ pad_s`.
pub fn flatten<T: Scalar>(m1: &MobiusParams<T>, s: usize, m2: &MobiusParams<T>) -> Result<MobiusParams<T>> {
    if m1.dim() + s != m2.dim() {
        return Err(Error::Dimension(format!(
            "cannot flatten {}-dim map, pad {s} and {}-dim map",
            m1.dim(),
            m2.dim()
        )));
    }
    compose(m2, &m1.pad(s))
}

/// Zero padding `R^d -> R^{d+s}`.
pub fn pad_point<T: Scalar>(x: &[T], s: usize) -> Vec<T> {
    x.iter().copied().chain(std::iter::repeat_n(T::zero(), s)).collect()
}

/// Parameter-wise comparison within `tol`.
pub fn params_close<T: Scalar>(a: &MobiusParams<T>, b: &MobiusParams<T>, tol: T) -> bool {
    a.epsilon == b.epsilon
        && a.dim() == b.dim()
        && (a.alpha - b.alpha).abs() <= tol
        && a.orth.max_abs_diff(&b.orth) <= tol
        && a.a.iter().zip(&b.a).chain(a.b.iter().zip(&b.b)).all(|(&x, &y)| (x - y).abs() <= tol)
}
