use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndnet::{batch_moments, Matrix, Mode, BN_EPS, BN_MOMENTUM};
use crate::scalar::{lit, Scalar};

/// Batch normalisation as an invertible layer:
/// `z = (x - mean) / sqrt(var + eps) * exp(log_gamma) + beta`.
///
/// Parameters are `[log_gamma (dim), beta (dim)]`. Train mode uses the batch
/// moments (and differentiates through them); eval mode and the inverse use the
/// running moments, so a frozen layer is a fixed affine map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FlowBatchNorm<T> {
    dim: usize,
    running_mean: Vec<T>,
    running_var: Vec<T>,
}

pub struct FlowBnTape<T> {
    xhat: Matrix<T>,
    inv_std: Vec<T>,
    batch_mean: Vec<T>,
    batch_var: Vec<T>,
    mode: Mode,
}

impl<T: Scalar> FlowBatchNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self { dim, running_mean: vec![T::zero(); dim], running_var: vec![T::one(); dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_params(&self) -> usize {
        2 * self.dim
    }

    pub fn init_params(&self) -> Vec<T> {
        vec![T::zero(); 2 * self.dim]
    }

    pub fn running(&self) -> (&[T], &[T]) {
        (&self.running_mean, &self.running_var)
    }

    pub fn set_running(&mut self, mean: Vec<T>, var: Vec<T>) -> Result<()> {
        if mean.len() != self.dim || var.len() != self.dim {
            return Err(Error::Dimension("running moments".into()));
        }
        self.running_mean = mean;
        self.running_var = var;
        Ok(())
    }

    pub fn forward(&self, params: &[T], x: &Matrix<T>, mode: Mode) -> Result<(Matrix<T>, Vec<T>, FlowBnTape<T>)> {
        if x.cols() != self.dim {
            return Err(Error::Dimension(format!("batch norm on {} columns, expects {}", x.cols(), self.dim)));
        }
        let (mean, var) = match mode {
            Mode::Train => batch_moments(x),
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + lit(BN_EPS)).sqrt()).collect();
        let (lg, beta) = params.split_at(self.dim);
        let ld: T = (0..self.dim).map(|j| lg[j] + inv_std[j].ln()).sum();
        let n = x.rows();
        let mut xhat = Matrix::zeros(n, self.dim);
        let mut z = Matrix::zeros(n, self.dim);
        for r in 0..n {
            for j in 0..self.dim {
                let h = (x[(r, j)] - mean[j]) * inv_std[j];
                xhat[(r, j)] = h;
                z[(r, j)] = h * lg[j].exp() + beta[j];
            }
        }
        Ok((z, vec![ld; n], FlowBnTape { xhat, inv_std, batch_mean: mean, batch_var: var, mode }))
    }

    pub fn backward(
        &self,
        params: &[T],
        tape: &FlowBnTape<T>,
        g_z: &Matrix<T>,
        g_logdet: &[T],
        param_grad: &mut [T],
    ) -> Result<Matrix<T>> {
        let (n, d) = g_z.shape();
        let lg = &params[..self.dim];
        let total_ld: T = g_logdet.iter().copied().sum();
        let mut dxhat = Matrix::zeros(n, d);
        for j in 0..d {
            let scale = lg[j].exp();
            let mut g_lg = total_ld;
            let mut g_beta = T::zero();
            for r in 0..n {
                let g = g_z[(r, j)];
                g_lg += g * scale * tape.xhat[(r, j)];
                g_beta += g;
                dxhat[(r, j)] = g * scale;
            }
            param_grad[j] += g_lg;
            param_grad[d + j] += g_beta;
        }
        let mut g_x = Matrix::zeros(n, d);
        match tape.mode {
            Mode::Eval => {
                for r in 0..n {
                    for j in 0..d {
                        g_x[(r, j)] = dxhat[(r, j)] * tape.inv_std[j];
                    }
                }
            }
            Mode::Train => {
                let nn = T::from_usize(n).unwrap();
                for j in 0..d {
                    let mut sum = T::zero();
                    let mut sum_x = T::zero();
                    for r in 0..n {
                        sum += dxhat[(r, j)];
                        sum_x += dxhat[(r, j)] * tape.xhat[(r, j)];
                    }
                    let inv = tape.inv_std[j];
                    for r in 0..n {
                        let h = tape.xhat[(r, j)];
                        g_x[(r, j)] = inv / nn * (nn * dxhat[(r, j)] - sum - h * sum_x) - total_ld * h * inv / nn;
                    }
                }
            }
        }
        Ok(g_x)
    }

    pub fn inverse(&self, params: &[T], z: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>)> {
        if z.cols() != self.dim {
            return Err(Error::Dimension(format!("batch norm on {} columns, expects {}", z.cols(), self.dim)));
        }
        let (lg, beta) = params.split_at(self.dim);
        let std: Vec<T> = self.running_var.iter().map(|&v| (v + lit(BN_EPS)).sqrt()).collect();
        let ld: T = (0..self.dim).map(|j| -lg[j] + std[j].ln()).sum();
        let mut x = Matrix::zeros(z.rows(), self.dim);
        for r in 0..z.rows() {
            for j in 0..self.dim {
                x[(r, j)] = (z[(r, j)] - beta[j]) * (-lg[j]).exp() * std[j] + self.running_mean[j];
            }
        }
        Ok((x, vec![ld; z.rows()]))
    }

    pub fn update_running(&mut self, tape: &FlowBnTape<T>) {
        if tape.mode != Mode::Train {
            return;
        }
        let m: T = lit(BN_MOMENTUM);
        for j in 0..self.dim {
            self.running_mean[j] = m * self.running_mean[j] + (T::one() - m) * tape.batch_mean[j];
            self.running_var[j] = m * self.running_var[j] + (T::one() - m) * tape.batch_var[j];
        }
    }
}
