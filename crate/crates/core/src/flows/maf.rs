use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndnet::{Activation, Matrix, Mlp, MlpSpec, MlpTape, Mode};
use crate::scalar::Scalar;

/// Masked autoregressive layer: `z_i = (x_i - t_i) * exp(-s_i)` where `(s_i, t_i)`
/// depend on the coordinates of lower degree and on the conditioning input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MafLayer<T> {
    dim: usize,
    cond_dim: usize,
    /// Autoregressive degree (1-based) of each input coordinate.
    degrees: Vec<usize>,
    net: Mlp<T>,
}

pub struct MafTape<T> {
    x: Matrix<T>,
    z: Matrix<T>,
    s: Matrix<T>,
    net_tape: MlpTape<T>,
}

/// Sequential hidden degrees in `1..dim-1`; all zero for a one-dimensional layer.
pub fn hidden_degrees(dim: usize, width: usize) -> Vec<usize> {
    if dim <= 1 {
        return vec![0; width];
    }
    (0..width).map(|j| j % (dim - 1) + 1).collect()
}

impl<T: Scalar> MafLayer<T> {
    /// `degrees` must be a permutation of `1..=dim`. The network has one masked
    /// relu hidden layer per entry of `hidden`; conditioning inputs feed the first
    /// hidden layer without masking.
    pub fn new(degrees: Vec<usize>, cond_dim: usize, hidden: &[usize]) -> Result<Self> {
        let dim = degrees.len();
        let mut sorted = degrees.clone();
        sorted.sort_unstable();
        if dim == 0 || sorted != (1..=dim).collect::<Vec<_>>() {
            return Err(Error::InvalidConfig(format!("MAF ordering {degrees:?} is not a permutation")));
        }
        let spec = MlpSpec {
            in_dim: dim + cond_dim,
            out_dim: 2 * dim,
            hidden: hidden.to_vec(),
            activation: Activation::Relu,
            batch_norm: false,
        };
        let mut masks = Vec::new();
        let mut prev: Vec<usize> = degrees.clone();
        let mut prev_is_input = true;
        for &width in hidden {
            let hd = hidden_degrees(dim, width);
            let fan_in = prev.len() + if prev_is_input { cond_dim } else { 0 };
            let mut m = Matrix::zeros(fan_in, width);
            for (i, &d) in prev.iter().enumerate() {
                for (j, &h) in hd.iter().enumerate() {
                    if h >= d {
                        m[(i, j)] = T::one();
                    }
                }
            }
            for i in prev.len()..fan_in {
                for j in 0..width {
                    m[(i, j)] = T::one();
                }
            }
            masks.push(m);
            prev = hd;
            prev_is_input = false;
        }
        // output mask: strict inequality against the input degree of each coordinate
        let fan_in = prev.len() + if prev_is_input { cond_dim } else { 0 };
        let mut m = Matrix::zeros(fan_in, 2 * dim);
        for c in 0..2 * dim {
            let d_out = degrees[c % dim];
            for (j, &h) in prev.iter().enumerate() {
                let allowed = if prev_is_input { h < d_out } else { d_out > h };
                if allowed {
                    m[(j, c)] = T::one();
                }
            }
            for j in prev.len()..fan_in {
                m[(j, c)] = T::one();
            }
        }
        masks.push(m);
        let net = Mlp::new(spec)?.with_masks(masks)?;
        Ok(Self { dim, cond_dim, degrees, net })
    }

    pub fn natural_order(dim: usize) -> Vec<usize> {
        (1..=dim).collect()
    }

    pub fn reversed_order(dim: usize) -> Vec<usize> {
        (1..=dim).rev().collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        self.net.init_params(rng)
    }

    fn net_input(&self, x: &Matrix<T>, cond: Option<&Matrix<T>>) -> Result<Matrix<T>> {
        match (cond, self.cond_dim) {
            (None, 0) => Ok(x.clone()),
            (Some(c), d) if d > 0 && c.cols() == d => x.hcat(c),
            _ => Err(Error::Dimension(format!(
                "conditioning input does not match cond_dim {}",
                self.cond_dim
            ))),
        }
    }

    pub fn forward(
        &self,
        params: &[T],
        x: &Matrix<T>,
        cond: Option<&Matrix<T>>,
        mode: Mode,
    ) -> Result<(Matrix<T>, Vec<T>, MafTape<T>)> {
        if x.cols() != self.dim {
            return Err(Error::Dimension(format!("MAF on {} columns, expects {}", x.cols(), self.dim)));
        }
        let (out, net_tape) = self.net.forward(params, &self.net_input(x, cond)?, mode)?;
        let n = x.rows();
        let mut z = Matrix::zeros(n, self.dim);
        let mut s = Matrix::zeros(n, self.dim);
        let mut logdet = vec![T::zero(); n];
        for r in 0..n {
            for i in 0..self.dim {
                let sv = out[(r, i)];
                let tv = out[(r, self.dim + i)];
                s[(r, i)] = sv;
                z[(r, i)] = (x[(r, i)] - tv) * (-sv).exp();
                logdet[r] -= sv;
            }
        }
        let tape = MafTape { x: x.clone(), z: z.clone(), s, net_tape };
        Ok((z, logdet, tape))
    }

    pub fn backward(
        &self,
        params: &[T],
        tape: &MafTape<T>,
        g_z: &Matrix<T>,
        g_logdet: &[T],
        param_grad: &mut [T],
    ) -> Result<Matrix<T>> {
        let n = tape.x.rows();
        let d = self.dim;
        let mut g_x = Matrix::zeros(n, d);
        let mut g_out = Matrix::zeros(n, 2 * d);
        for r in 0..n {
            for i in 0..d {
                let e = (-tape.s[(r, i)]).exp();
                let gz = g_z[(r, i)];
                g_x[(r, i)] = gz * e;
                g_out[(r, d + i)] = -gz * e;
                g_out[(r, i)] = -gz * tape.z[(r, i)] - g_logdet[r];
            }
        }
        let g_in = self.net.backward(params, &tape.net_tape, &g_out, param_grad)?;
        for r in 0..n {
            for i in 0..d {
                g_x[(r, i)] += g_in[(r, i)];
            }
        }
        Ok(g_x)
    }

    /// Sequential inverse: one network pass per degree.
    pub fn inverse(&self, params: &[T], z: &Matrix<T>, cond: Option<&Matrix<T>>) -> Result<(Matrix<T>, Vec<T>)> {
        if z.cols() != self.dim {
            return Err(Error::Dimension(format!("MAF on {} columns, expects {}", z.cols(), self.dim)));
        }
        let n = z.rows();
        let mut x = Matrix::zeros(n, self.dim);
        let mut logdet = vec![T::zero(); n];
        for step in 1..=self.dim {
            let out = self.net.eval(params, &self.net_input(&x, cond)?)?;
            for i in (0..self.dim).filter(|&i| self.degrees[i] == step) {
                for r in 0..n {
                    let sv = out[(r, i)];
                    x[(r, i)] = z[(r, i)] * sv.exp() + out[(r, self.dim + i)];
                    logdet[r] += sv;
                }
            }
        }
        Ok((x, logdet))
    }
}
