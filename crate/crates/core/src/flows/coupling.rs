use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndnet::{Activation, Matrix, Mlp, MlpSpec, MlpTape, Mode};
use crate::scalar::{lit, Scalar};

/// Bound on the log-scale of a coupling step, applied as `S_MAX * tanh(s / S_MAX)`.
pub const S_MAX: f64 = 5.0;

/// Affine coupling: passive coordinates pass through and parameterise an affine
/// map `y = x * exp(s) + t` of the active ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CouplingLayer<T> {
    dim: usize,
    cond_dim: usize,
    /// `true` marks a passive (copied) coordinate.
    mask: Vec<bool>,
    passive: Vec<usize>,
    active: Vec<usize>,
    scale_net: Mlp<T>,
    shift_net: Mlp<T>,
}

pub struct CouplingTape<T> {
    x: Matrix<T>,
    s: Matrix<T>,
    s_tape: MlpTape<T>,
    t_tape: MlpTape<T>,
}

impl<T: Scalar> CouplingLayer<T> {
    /// Scale net uses tanh hidden units, shift net relu; both end in a linear layer.
    pub fn new(mask: Vec<bool>, cond_dim: usize, hidden: &[usize]) -> Result<Self> {
        let dim = mask.len();
        let passive: Vec<usize> = (0..dim).filter(|&i| mask[i]).collect();
        let active: Vec<usize> = (0..dim).filter(|&i| !mask[i]).collect();
        if passive.is_empty() || active.is_empty() {
            return Err(Error::InvalidConfig("coupling mask must be neither all-zero nor all-one".into()));
        }
        let net = |act| MlpSpec {
            in_dim: passive.len() + cond_dim,
            out_dim: active.len(),
            hidden: hidden.to_vec(),
            activation: act,
            batch_norm: false,
        };
        Ok(Self {
            dim,
            cond_dim,
            scale_net: Mlp::new(net(Activation::Tanh))?,
            shift_net: Mlp::new(net(Activation::Relu))?,
            mask,
            passive,
            active,
        })
    }

    /// Even/odd split; `parity` selects which half is passive.
    pub fn alternating_mask(dim: usize, parity: usize) -> Vec<bool> {
        (0..dim).map(|i| i % 2 == parity % 2).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn num_params(&self) -> usize {
        self.scale_net.num_params() + self.shift_net.num_params()
    }

    pub fn scale_net(&self) -> &Mlp<T> {
        &self.scale_net
    }

    pub fn shift_net(&self) -> &Mlp<T> {
        &self.shift_net
    }

    /// Parameter sub-ranges of the scale and shift networks within this layer's block.
    pub fn net_ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let ns = self.scale_net.num_params();
        (0..ns, ns..ns + self.shift_net.num_params())
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let mut p = self.scale_net.init_params(rng);
        p.extend(self.shift_net.init_params(rng));
        p
    }

    fn net_input(&self, x: &Matrix<T>, cond: Option<&Matrix<T>>) -> Result<Matrix<T>> {
        let passive = x.select_cols(&self.passive);
        match (cond, self.cond_dim) {
            (None, 0) => Ok(passive),
            (Some(c), d) if d > 0 && c.cols() == d => passive.hcat(c),
            _ => Err(Error::Dimension(format!(
                "conditioning input does not match cond_dim {}",
                self.cond_dim
            ))),
        }
    }

    fn scale_and_shift(
        &self,
        params: &[T],
        net_in: &Matrix<T>,
        mode: Mode,
    ) -> Result<(Matrix<T>, Matrix<T>, MlpTape<T>, MlpTape<T>)> {
        let (rs, rt) = self.net_ranges();
        let (s_raw, s_tape) = self.scale_net.forward(&params[rs], net_in, mode)?;
        let (t, t_tape) = self.shift_net.forward(&params[rt], net_in, mode)?;
        let cap: T = lit(S_MAX);
        let s = s_raw.map(|v| cap * (v / cap).tanh());
        Ok((s, t, s_tape, t_tape))
    }

    pub fn forward(
        &self,
        params: &[T],
        x: &Matrix<T>,
        cond: Option<&Matrix<T>>,
        mode: Mode,
    ) -> Result<(Matrix<T>, Vec<T>, CouplingTape<T>)> {
        if x.cols() != self.dim {
            return Err(Error::Dimension(format!("coupling on {} columns, expects {}", x.cols(), self.dim)));
        }
        let net_in = self.net_input(x, cond)?;
        let (s, t, s_tape, t_tape) = self.scale_and_shift(params, &net_in, mode)?;
        let mut z = x.clone();
        let mut logdet = vec![T::zero(); x.rows()];
        for r in 0..x.rows() {
            for (j, &a) in self.active.iter().enumerate() {
                let sv = s[(r, j)];
                z[(r, a)] = x[(r, a)] * sv.exp() + t[(r, j)];
                logdet[r] += sv;
            }
        }
        Ok((z, logdet, CouplingTape { x: x.clone(), s, s_tape, t_tape }))
    }

    pub fn backward(
        &self,
        params: &[T],
        tape: &CouplingTape<T>,
        g_z: &Matrix<T>,
        g_logdet: &[T],
        param_grad: &mut [T],
    ) -> Result<Matrix<T>> {
        let n = tape.x.rows();
        let na = self.active.len();
        let mut g_x = g_z.clone();
        let mut g_sraw = Matrix::zeros(n, na);
        let mut g_t = Matrix::zeros(n, na);
        let cap: T = lit(S_MAX);
        for r in 0..n {
            for (j, &a) in self.active.iter().enumerate() {
                let s = tape.s[(r, j)];
                let e = s.exp();
                let gz = g_z[(r, a)];
                g_x[(r, a)] = gz * e;
                g_t[(r, j)] = gz;
                let g_s = gz * tape.x[(r, a)] * e + g_logdet[r];
                let ratio = s / cap;
                g_sraw[(r, j)] = g_s * (T::one() - ratio * ratio);
            }
        }
        let (rs, rt) = self.net_ranges();
        let g_in_s = {
            let (p, g) = (&params[rs.clone()], &mut param_grad[rs]);
            self.scale_net.backward(p, &tape.s_tape, &g_sraw, g)?
        };
        let g_in_t = {
            let (p, g) = (&params[rt.clone()], &mut param_grad[rt]);
            self.shift_net.backward(p, &tape.t_tape, &g_t, g)?
        };
        for r in 0..n {
            for (i, &p) in self.passive.iter().enumerate() {
                g_x[(r, p)] += g_in_s[(r, i)] + g_in_t[(r, i)];
            }
        }
        Ok(g_x)
    }

    pub fn inverse(&self, params: &[T], z: &Matrix<T>, cond: Option<&Matrix<T>>) -> Result<(Matrix<T>, Vec<T>)> {
        if z.cols() != self.dim {
            return Err(Error::Dimension(format!("coupling on {} columns, expects {}", z.cols(), self.dim)));
        }
        let net_in = self.net_input(z, cond)?;
        let (s, t, _, _) = self.scale_and_shift(params, &net_in, Mode::Eval)?;
        let mut x = z.clone();
        let mut logdet = vec![T::zero(); z.rows()];
        for r in 0..z.rows() {
            for (j, &a) in self.active.iter().enumerate() {
                let sv = s[(r, j)];
                x[(r, a)] = (z[(r, a)] - t[(r, j)]) * (-sv).exp();
                logdet[r] -= sv;
            }
        }
        Ok((x, logdet))
    }
}
