use serde::{Deserialize, Serialize};

use super::linalg::{dot, expm, expm_frechet, matvec, matvec_t, norm_sq, skew, skew_len};
use super::mobius::{Epsilon, MobiusParams};
use crate::error::{Error, Result};
use crate::ndnet::Matrix;
use crate::scalar::{lit, Scalar};

/// Denominators below this are treated as a pole during training.
pub const POLE_TOL: f64 = 1e-6;

/// One conformal step of an embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum Stage<T> {
    /// Appends `extra` zero coordinates.
    Pad { extra: usize },
    /// `x -> exp(log_scale) x`.
    Scale { log_scale: T },
    Shift { offset: Vec<T> },
    /// `x -> base expm(S) x` with `S` skew-symmetric; only `S` is learned.
    Orthogonal { base: Matrix<T>, skew: Vec<T> },
    /// `x -> (x - b |x|²) / (1 - 2 b·x + |b|² |x|²)`.
    SpecialConformal { b: Vec<T> },
    /// A fixed Möbius map.
    Mobius(MobiusParams<T>),
}

impl<T: Scalar> Stage<T> {
    pub fn orthogonal_identity(d: usize) -> Self {
        Stage::Orthogonal { base: Matrix::identity(d), skew: vec![T::zero(); skew_len(d)] }
    }

    /// Output dimension for input dimension `d`, or an error if the stage does not fit.
    pub fn out_dim(&self, d: usize) -> Result<usize> {
        let expect = |n: usize, what: &str| {
            if n == d {
                Ok(d)
            } else {
                Err(Error::Dimension(format!("{what} stage of dim {n} applied to dim {d}")))
            }
        };
        match self {
            Stage::Pad { extra } => Ok(d + extra),
            Stage::Scale { .. } => Ok(d),
            Stage::Shift { offset } => expect(offset.len(), "shift"),
            Stage::Orthogonal { base, skew } => {
                if base.cols() != base.rows() || skew.len() != skew_len(base.rows()) {
                    return Err(Error::Dimension("orthogonal stage parameters".into()));
                }
                expect(base.rows(), "orthogonal")
            }
            Stage::SpecialConformal { b } => expect(b.len(), "special conformal"),
            Stage::Mobius(m) => {
                m.validate()?;
                expect(m.dim(), "Möbius")
            }
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Stage::Pad { .. } | Stage::Mobius(_) => 0,
            Stage::Scale { .. } => 1,
            Stage::Shift { offset } => offset.len(),
            Stage::Orthogonal { skew, .. } => skew.len(),
            Stage::SpecialConformal { b } => b.len(),
        }
    }

    pub fn params(&self) -> Vec<T> {
        match self {
            Stage::Pad { .. } | Stage::Mobius(_) => vec![],
            Stage::Scale { log_scale } => vec![*log_scale],
            Stage::Shift { offset } => offset.clone(),
            Stage::Orthogonal { skew, .. } => skew.clone(),
            Stage::SpecialConformal { b } => b.clone(),
        }
    }

    pub fn set_params(&mut self, p: &[T]) {
        debug_assert_eq!(p.len(), self.num_params());
        match self {
            Stage::Pad { .. } | Stage::Mobius(_) => {}
            Stage::Scale { log_scale } => *log_scale = p[0],
            Stage::Shift { offset } => offset.copy_from_slice(p),
            Stage::Orthogonal { skew, .. } => skew.copy_from_slice(p),
            Stage::SpecialConformal { b } => b.copy_from_slice(p),
        }
    }

    /// Derived quantities (matrix exponentials) computed once per parameter setting.
    pub fn prepare(&self) -> Prepared<T> {
        match self {
            Stage::Orthogonal { base, skew: p } => {
                let d = base.rows();
                let s = skew(d, p);
                let mat = base.matmul(&expm(&s)).expect("square");
                let mut dmat = Vec::with_capacity(p.len());
                for k in 0..p.len() {
                    let mut e = vec![T::zero(); p.len()];
                    e[k] = T::one();
                    dmat.push(base.matmul(&expm_frechet(&s, &skew(d, &e))).expect("square"));
                }
                Prepared { stage: self.clone(), orth: Some((mat, dmat)) }
            }
            _ => Prepared { stage: self.clone(), orth: None },
        }
    }
}

/// A stage with its derived matrices.
#[derive(Clone, Debug)]
pub struct Prepared<T> {
    stage: Stage<T>,
    orth: Option<(Matrix<T>, Vec<Matrix<T>>)>,
}

/// Stage value and first derivatives at one point.
pub struct StageEval<T> {
    pub y: Vec<T>,
    pub log_factor: T,
    /// `dy/dx`, out_dim x in_dim.
    pub jac_x: Matrix<T>,
    /// `dy/dparams`, out_dim x num_params.
    pub jac_p: Matrix<T>,
}

fn sct_sigma<T: Scalar>(b: &[T], x: &[T]) -> T {
    T::one() - lit::<T>(2.0) * dot(b, x) + norm_sq(b) * norm_sq(x)
}

fn sct_apply<T: Scalar>(b: &[T], x: &[T]) -> Result<(Vec<T>, T)> {
    let sigma = sct_sigma(b, x);
    if sigma <= T::zero() {
        return Err(Error::Pole);
    }
    let s = norm_sq(x);
    Ok((x.iter().zip(b).map(|(&xi, &bi)| (xi - bi * s) / sigma).collect(), sigma))
}

impl<T: Scalar> Prepared<T> {
    pub fn stage(&self) -> &Stage<T> {
        &self.stage
    }

    fn orth(&self) -> &Matrix<T> {
        &self.orth.as_ref().expect("prepared orthogonal stage").0
    }

    /// Smallest denominator the stage divides by at `x` (1 for stages without poles).
    pub fn pole_margin(&self, x: &[T]) -> T {
        match &self.stage {
            Stage::SpecialConformal { b } => sct_sigma(b, x),
            Stage::Mobius(m) if m.epsilon == Epsilon::Two => {
                let mut w = matvec(&m.orth, x);
                w.iter_mut().zip(&m.a).for_each(|(v, &a)| *v -= a);
                norm_sq(&w).sqrt()
            }
            _ => T::one(),
        }
    }

    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, T)> {
        Ok(match &self.stage {
            Stage::Pad { extra } => (x.iter().copied().chain(std::iter::repeat_n(T::zero(), *extra)).collect(), T::zero()),
            Stage::Scale { log_scale } => {
                let s = log_scale.exp();
                (x.iter().map(|&v| v * s).collect(), *log_scale)
            }
            Stage::Shift { offset } => (x.iter().zip(offset).map(|(&a, &b)| a + b).collect(), T::zero()),
            Stage::Orthogonal { .. } => (matvec(self.orth(), x), T::zero()),
            Stage::SpecialConformal { b } => {
                let (y, sigma) = sct_apply(b, x)?;
                (y, -sigma.ln())
            }
            Stage::Mobius(m) => (m.apply(x)?, m.conformal_factor(x)?.ln()),
        })
    }

    /// Inverse map; `Pad` drops its coordinates and reports their norm as the second value.
    pub fn inverse(&self, y: &[T]) -> Result<(Vec<T>, T)> {
        Ok(match &self.stage {
            Stage::Pad { extra } => {
                let keep = y.len() - extra;
                (y[..keep].to_vec(), norm_sq(&y[keep..]).sqrt())
            }
            Stage::Scale { log_scale } => {
                let s = (-*log_scale).exp();
                (y.iter().map(|&v| v * s).collect(), T::zero())
            }
            Stage::Shift { offset } => (y.iter().zip(offset).map(|(&a, &b)| a - b).collect(), T::zero()),
            Stage::Orthogonal { .. } => (matvec_t(self.orth(), y), T::zero()),
            Stage::SpecialConformal { b } => {
                let nb: Vec<T> = b.iter().map(|&v| -v).collect();
                (sct_apply(&nb, y)?.0, T::zero())
            }
            Stage::Mobius(m) => (m.inverse_apply(y)?, T::zero()),
        })
    }

    pub fn eval(&self, x: &[T]) -> Result<StageEval<T>> {
        let (y, log_factor) = self.forward(x)?;
        let (din, dout) = (x.len(), y.len());
        let np = self.stage.num_params();
        let mut jac_p = Matrix::zeros(dout, np);
        let jac_x = match &self.stage {
            Stage::Pad { .. } => {
                let mut j = Matrix::zeros(dout, din);
                (0..din).for_each(|i| j[(i, i)] = T::one());
                j
            }
            Stage::Scale { log_scale } => {
                (0..dout).for_each(|i| jac_p[(i, 0)] = y[i]);
                Matrix::identity(din).map(|v| v * log_scale.exp())
            }
            Stage::Shift { .. } => {
                jac_p = Matrix::identity(dout);
                Matrix::identity(din)
            }
            Stage::Orthogonal { .. } => {
                let (mat, dmat) = self.orth.as_ref().expect("prepared orthogonal stage");
                for (k, dm) in dmat.iter().enumerate() {
                    let col = matvec(dm, x);
                    (0..dout).for_each(|i| jac_p[(i, k)] = col[i]);
                }
                mat.clone()
            }
            Stage::SpecialConformal { b } => {
                let sigma = sct_sigma(b, x);
                let s = norm_sq(x);
                let nb2 = norm_sq(b);
                let two: T = lit(2.0);
                // numerator n = x - b s; y = n / sigma
                let num: Vec<T> = x.iter().zip(b).map(|(&xi, &bi)| xi - bi * s).collect();
                let gx: Vec<T> = x.iter().zip(b).map(|(&xi, &bi)| two * nb2 * xi - two * bi).collect();
                let gb: Vec<T> = x.iter().zip(b).map(|(&xi, &bi)| two * s * bi - two * xi).collect();
                let s2 = sigma * sigma;
                let mut j = Matrix::zeros(dout, din);
                for r in 0..dout {
                    for c in 0..din {
                        let eye = if r == c { T::one() } else { T::zero() };
                        j[(r, c)] = (eye - two * b[r] * x[c]) / sigma - num[r] * gx[c] / s2;
                        jac_p[(r, c)] = -s * eye / sigma - num[r] * gb[c] / s2;
                    }
                }
                j
            }
            Stage::Mobius(m) => m.jacobian(x)?,
        };
        Ok(StageEval { y, log_factor, jac_x, jac_p })
    }
}
