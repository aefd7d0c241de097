use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::linalg::{determinant, norm_sq, symmetric_eigen};
use super::stage::{Prepared, Stage, POLE_TOL};
use crate::error::{Error, Result};
use crate::ndnet::{Adam, AdamConfig, Matrix};
use crate::rng::{stream, streams};
use crate::scalar::{lit, to_f64, Scalar};

/// Default distance from the embedded manifold beyond which a point is flagged off-manifold.
pub const DEFAULT_TAU_PROJ: f64 = 1e-3;

/// Dimension-raising conformal map `c = c_J ∘ ... ∘ c_1` from `in_dim` to `out_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ConformalEmbedding<T> {
    in_dim: usize,
    out_dim: usize,
    stages: Vec<Stage<T>>,
}

/// Result of the left inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection<T> {
    pub u: Vec<T>,
    /// `|x - c(c†(x))|`.
    pub residual: T,
    /// `log|lambda(u)|` at the recovered latent.
    pub log_lambda: T,
    pub off_manifold: bool,
}

impl<T: Scalar> ConformalEmbedding<T> {
    pub fn new(in_dim: usize, stages: Vec<Stage<T>>) -> Result<Self> {
        let mut d = in_dim;
        for s in &stages {
            d = s.out_dim(d)?;
        }
        Ok(Self { in_dim, out_dim: d, stages })
    }

    /// `[pad, orthogonal, special conformal, scale, shift]`, all at the identity.
    pub fn standard(in_dim: usize, out_dim: usize) -> Result<Self> {
        if out_dim < in_dim {
            return Err(Error::InvalidConfig(format!("cannot embed dim {in_dim} into dim {out_dim}")));
        }
        let mut stages = Vec::new();
        if out_dim > in_dim {
            stages.push(Stage::Pad { extra: out_dim - in_dim });
        }
        stages.extend([
            Stage::orthogonal_identity(out_dim),
            Stage::SpecialConformal { b: vec![T::zero(); out_dim] },
            Stage::Scale { log_scale: T::zero() },
            Stage::Shift { offset: vec![T::zero(); out_dim] },
        ]);
        Self::new(in_dim, stages)
    }

    /// Standard embedding whose flat initial image is the principal plane of
    /// `data` through its mean.
    pub fn standard_for_data(in_dim: usize, data: &Matrix<T>) -> Result<Self> {
        let out_dim = data.cols();
        let mut e = Self::standard(in_dim, out_dim)?;
        if data.rows() == 0 {
            return Ok(e);
        }
        let mean = data.col_means();
        let mut cov = Matrix::<T>::zeros(out_dim, out_dim);
        for r in data.row_iter() {
            for i in 0..out_dim {
                for j in 0..out_dim {
                    cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]);
                }
            }
        }
        let (_, mut vecs) = symmetric_eigen(&cov);
        if determinant(&vecs) < T::zero() {
            for i in 0..out_dim {
                vecs[(i, out_dim - 1)] = -vecs[(i, out_dim - 1)];
            }
        }
        for s in &mut e.stages {
            match s {
                Stage::Orthogonal { base, .. } => *base = vecs.clone(),
                Stage::Shift { offset } => offset.clone_from(&mean),
                _ => {}
            }
        }
        Ok(e)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn stages(&self) -> &[Stage<T>] {
        &self.stages
    }

    pub fn num_params(&self) -> usize {
        self.stages.iter().map(|s| s.num_params()).sum()
    }

    pub fn params(&self) -> Vec<T> {
        self.stages.iter().flat_map(|s| s.params()).collect()
    }

    pub fn set_params(&mut self, p: &[T]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::Dimension(format!("{} embedding parameters, expected {}", p.len(), self.num_params())));
        }
        let mut off = 0;
        for s in &mut self.stages {
            let n = s.num_params();
            s.set_params(&p[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn prepare(&self) -> PreparedEmbedding<T> {
        let mut offsets = Vec::with_capacity(self.stages.len());
        let mut off = 0;
        for s in &self.stages {
            offsets.push(off);
            off += s.num_params();
        }
        PreparedEmbedding {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            stages: self.stages.iter().map(|s| s.prepare()).collect(),
            offsets,
            num_params: off,
        }
    }

    pub fn embed(&self, u: &[T]) -> Result<(Vec<T>, T)> {
        self.prepare().embed(u)
    }

    pub fn left_inverse(&self, x: &[T], tau_proj: T) -> Result<Projection<T>> {
        self.prepare().left_inverse(x, tau_proj)
    }
}

/// An embedding with derived matrices cached for repeated evaluation.
#[derive(Clone, Debug)]
pub struct PreparedEmbedding<T> {
    in_dim: usize,
    out_dim: usize,
    stages: Vec<Prepared<T>>,
    offsets: Vec<usize>,
    num_params: usize,
}

impl<T: Scalar> PreparedEmbedding<T> {
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// `(c(u), log|lambda(u)|)`.
    pub fn embed(&self, u: &[T]) -> Result<(Vec<T>, T)> {
        if u.len() != self.in_dim {
            return Err(Error::Dimension(format!("latent of length {}, embedding expects {}", u.len(), self.in_dim)));
        }
        let mut cur = u.to_vec();
        let mut log_lambda = T::zero();
        for s in &self.stages {
            let (y, lf) = s.forward(&cur)?;
            log_lambda += lf;
            cur = y;
        }
        Ok((cur, log_lambda))
    }

    /// Inverts the stages in reverse order, truncating at pads. Points farther
    /// than `tau_proj` from their reconstruction are flagged off-manifold.
    pub fn left_inverse(&self, x: &[T], tau_proj: T) -> Result<Projection<T>> {
        if x.len() != self.out_dim {
            return Err(Error::Dimension(format!("point of length {}, embedding outputs {}", x.len(), self.out_dim)));
        }
        let mut cur = x.to_vec();
        for s in self.stages.iter().rev() {
            cur = s.inverse(&cur)?.0;
        }
        let (back, log_lambda) = self.embed(&cur)?;
        let residual = back.iter().zip(x).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt();
        Ok(Projection { u: cur, residual, log_lambda, off_manifold: !(residual <= tau_proj) })
    }

    pub fn embed_batch(&self, u: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>)> {
        let mut out = Matrix::zeros(u.rows(), self.out_dim);
        let mut ll = Vec::with_capacity(u.rows());
        for (r, row) in u.row_iter().enumerate() {
            let (x, l) = self.embed(row)?;
            out.row_mut(r).copy_from_slice(&x);
            ll.push(l);
        }
        Ok((out, ll))
    }

    pub fn left_inverse_batch(&self, x: &Matrix<T>, tau_proj: T) -> Result<(Matrix<T>, Vec<Projection<T>>)> {
        let mut u = Matrix::zeros(x.rows(), self.in_dim);
        let mut proj = Vec::with_capacity(x.rows());
        for (r, row) in x.row_iter().enumerate() {
            let p = self.left_inverse(row, tau_proj)?;
            u.row_mut(r).copy_from_slice(&p.u);
            proj.push(p);
        }
        Ok((u, proj))
    }

    /// Squared reconstruction error `|x - c(c†(x))|²` and its parameter gradient,
    /// or `None` when the round trip passes within [`POLE_TOL`] of a pole.
    pub fn reconstruction_grad(&self, x: &[T]) -> Result<Option<(T, Vec<T>)>> {
        if x.len() != self.out_dim {
            return Err(Error::Dimension(format!("point of length {}, embedding outputs {}", x.len(), self.out_dim)));
        }
        let tol: T = lit(POLE_TOL);
        let np = self.num_params;
        // Tangent of the current point with respect to all parameters.
        let mut tan = Matrix::zeros(self.out_dim, np);
        let mut cur = x.to_vec();
        for (s, &off) in self.stages.iter().zip(&self.offsets).rev() {
            let (xin, _) = s.inverse(&cur)?;
            if s.pole_margin(&xin) < tol {
                return Ok(None);
            }
            if let Stage::Pad { .. } = s.stage() {
                tan = tan.select_rows(&(0..xin.len()).collect::<Vec<_>>());
            } else {
                let ev = s.eval(&xin)?;
                for r in 0..tan.rows() {
                    for c in 0..ev.jac_p.cols() {
                        tan[(r, off + c)] -= ev.jac_p[(r, c)];
                    }
                }
                let inv_l2 = (-lit::<T>(2.0) * ev.log_factor).exp();
                tan = ev.jac_x.transpose().matmul(&tan)?.map(|v| v * inv_l2);
            }
            cur = xin;
        }
        for (s, &off) in self.stages.iter().zip(&self.offsets) {
            if s.pole_margin(&cur) < tol {
                return Ok(None);
            }
            let ev = s.eval(&cur)?;
            tan = ev.jac_x.matmul(&tan)?;
            for r in 0..tan.rows() {
                for c in 0..ev.jac_p.cols() {
                    tan[(r, off + c)] += ev.jac_p[(r, c)];
                }
            }
            cur = ev.y;
        }
        let diff: Vec<T> = cur.iter().zip(x).map(|(&a, &b)| a - b).collect();
        let two: T = lit(2.0);
        let grad = (0..np).map(|k| two * (0..diff.len()).map(|r| diff[r] * tan[(r, k)]).sum::<T>()).collect();
        Ok(Some((norm_sq(&diff), grad)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 128, adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() }, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    /// Mean squared reconstruction error per epoch.
    pub loss: Vec<f64>,
    /// Points skipped because their round trip came within the pole tolerance.
    pub pole_hits: usize,
}

/// Mean squared reconstruction error over `data` (pole points excluded).
pub fn reconstruction_loss<T: Scalar>(emb: &ConformalEmbedding<T>, data: &Matrix<T>) -> Result<f64> {
    let p = emb.prepare();
    let (mut sum, mut n) = (0.0, 0usize);
    for row in data.row_iter() {
        if let Some((l, _)) = p.reconstruction_grad(row)? {
            sum += to_f64(l);
            n += 1;
        }
    }
    Ok(if n == 0 { f64::INFINITY } else { sum / n as f64 })
}

/// Fits the embedding parameters to minimise `|x - c(c†(x))|²` with Adam.
pub fn pretrain_reconstruction<T: Scalar>(
    emb: &mut ConformalEmbedding<T>,
    data: &Matrix<T>,
    cfg: &ReconConfig,
) -> Result<ReconReport> {
    if data.rows() == 0 {
        return Err(Error::Precondition("empty reconstruction set".into()));
    }
    let mut rng = stream(cfg.seed, streams::EMBEDDING);
    let np = emb.num_params();
    let mut adam = Adam::new(np, cfg.adam.clone());
    let mut order: Vec<usize> = (0..data.rows()).collect();
    let mut report = ReconReport::default();
    let mut params = emb.params();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut seen) = (0.0, 0usize);
        for rows in order.chunks(cfg.batch_size.max(1)) {
            let prepared = emb.prepare();
            let mut grad = vec![T::zero(); np];
            let mut used = 0usize;
            for &r in rows {
                match prepared.reconstruction_grad(data.row(r))? {
                    Some((l, g)) => {
                        sum += to_f64(l);
                        used += 1;
                        grad.iter_mut().zip(&g).for_each(|(a, &b)| *a += b);
                    }
                    None => report.pole_hits += 1,
                }
            }
            seen += used;
            if used == 0 {
                continue;
            }
            let scale = T::one() / lit::<T>(used as f64);
            grad.iter_mut().for_each(|g| *g *= scale);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, detail: "non-finite reconstruction gradient".into() });
            }
            adam.step(&mut params, &grad)?;
            emb.set_params(&params)?;
        }
        report.loss.push(if seen == 0 { f64::INFINITY } else { sum / seen as f64 });
    }
    Ok(report)
}
