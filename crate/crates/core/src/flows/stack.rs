use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batchnorm::FlowBatchNorm;
use super::coupling::CouplingLayer;
use super::layer::{FlowLayer, LayerTape};
use super::maf::MafLayer;
use super::prior::LatentPrior;
use crate::error::{Error, Result};
use crate::ndnet::{Matrix, Mlp, Mode, ParameterVector};
use crate::scalar::{lit, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    RealNvp,
    Maf,
}

/// Shape of a standard stack: `layers` transforms, each followed by flow batch norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowArchitecture {
    pub kind: FlowKind,
    pub layers: usize,
    pub hidden: Vec<usize>,
    pub batch_norm: bool,
}

impl FlowArchitecture {
    pub fn realnvp() -> Self {
        Self { kind: FlowKind::RealNvp, layers: 5, hidden: vec![128, 128], batch_norm: true }
    }

    pub fn maf() -> Self {
        Self { kind: FlowKind::Maf, layers: 5, hidden: vec![128], batch_norm: true }
    }
}

/// An ordered composition of conditional layers `f = f^L ∘ ... ∘ f^1` (density
/// direction) with a latent prior. Owns every layer's parameters in one flat vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FlowStack<T> {
    dim: usize,
    cond_dim: usize,
    layers: Vec<FlowLayer<T>>,
    ranges: Vec<Range<usize>>,
    params: ParameterVector<T>,
    prior: LatentPrior,
}

/// Forward pass through the whole stack.
pub struct StackForward<T> {
    pub z: Matrix<T>,
    pub logdet: Vec<T>,
    pub tapes: Vec<LayerTape<T>>,
}

impl<T: Scalar> FlowStack<T> {
    /// Assembles a stack from layers, initialising parameters from `rng`.
    pub fn from_layers<R: Rng + ?Sized>(layers: Vec<FlowLayer<T>>, prior: LatentPrior, rng: &mut R) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::InvalidConfig("a flow needs at least one layer".into()))?;
        let dim = first.dim();
        let cond_dim = layers.iter().map(|l| l.cond_dim()).max().unwrap_or(0);
        let mut params = ParameterVector::new();
        let mut ranges = Vec::with_capacity(layers.len());
        for (i, l) in layers.iter().enumerate() {
            if l.dim() != dim {
                return Err(Error::Dimension(format!("layer {i} has dim {} in a {dim}-dim stack", l.dim())));
            }
            if l.cond_dim() != 0 && l.cond_dim() != cond_dim {
                return Err(Error::Dimension(format!("layer {i} conditioning width {}", l.cond_dim())));
            }
            let name = match l {
                FlowLayer::Coupling(_) => format!("layer{i}.coupling"),
                FlowLayer::MaskedAutoregressive(_) => format!("layer{i}.maf"),
                FlowLayer::FlowBatchnorm(_) => format!("layer{i}.batchnorm"),
            };
            ranges.push(params.push(name, &l.init_params(rng)));
        }
        Ok(Self { dim, cond_dim, layers, ranges, params, prior })
    }

    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        cond_dim: usize,
        arch: &FlowArchitecture,
        prior: LatentPrior,
        rng: &mut R,
    ) -> Result<Self> {
        if arch.layers == 0 {
            return Err(Error::InvalidConfig("a flow needs at least one layer".into()));
        }
        let mut layers = Vec::new();
        for l in 0..arch.layers {
            let layer = match arch.kind {
                FlowKind::RealNvp => {
                    let mask = CouplingLayer::<T>::alternating_mask(dim, l);
                    FlowLayer::Coupling(CouplingLayer::new(mask, cond_dim, &arch.hidden)?)
                }
                FlowKind::Maf => {
                    let order = if l % 2 == 0 { MafLayer::<T>::natural_order(dim) } else { MafLayer::<T>::reversed_order(dim) };
                    FlowLayer::MaskedAutoregressive(MafLayer::new(order, cond_dim, &arch.hidden)?)
                }
            };
            layers.push(layer);
            if arch.batch_norm {
                layers.push(FlowLayer::FlowBatchnorm(FlowBatchNorm::new(dim)));
            }
        }
        Self::from_layers(layers, prior, rng)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn prior(&self) -> LatentPrior {
        self.prior
    }

    pub fn layers(&self) -> &[FlowLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [FlowLayer<T>] {
        &mut self.layers
    }

    pub fn params(&self) -> &ParameterVector<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterVector<T> {
        &mut self.params
    }

    pub fn layer_range(&self, i: usize) -> Range<usize> {
        self.ranges[i].clone()
    }

    fn check_inputs(&self, x: &Matrix<T>, cond: Option<&Matrix<T>>) -> Result<()> {
        if x.cols() != self.dim {
            return Err(Error::Dimension(format!("input has {} columns, flow dim is {}", x.cols(), self.dim)));
        }
        match cond {
            Some(c) if c.rows() != x.rows() || c.cols() != self.cond_dim => Err(Error::Dimension(format!(
                "conditioning {:?} for {} rows and cond_dim {}",
                c.shape(),
                x.rows(),
                self.cond_dim
            ))),
            None if self.cond_dim > 0 => Err(Error::Dimension("conditioning input required".into())),
            _ => Ok(()),
        }
    }

    /// `z = f(x)` with the summed log-determinant and per-layer tapes.
    pub fn forward(&self, x: &Matrix<T>, cond: Option<&Matrix<T>>, mode: Mode) -> Result<StackForward<T>> {
        self.check_inputs(x, cond)?;
        let mut cur = x.clone();
        let mut logdet = vec![T::zero(); x.rows()];
        let mut tapes = Vec::with_capacity(self.layers.len());
        for (l, r) in self.layers.iter().zip(&self.ranges) {
            let out = l.forward(&self.params.values()[r.clone()], &cur, cond, mode)?;
            logdet.iter_mut().zip(&out.logdet).for_each(|(a, &b)| *a += b);
            cur = out.z;
            tapes.push(out.tape);
        }
        Ok(StackForward { z: cur, logdet, tapes })
    }

    /// Accumulates into `param_grad` (same layout as [`Self::params`]) and returns `dL/dx`.
    pub fn backward(
        &self,
        tapes: &[LayerTape<T>],
        g_z: &Matrix<T>,
        g_logdet: &[T],
        param_grad: &mut [T],
    ) -> Result<Matrix<T>> {
        if tapes.len() != self.layers.len() || param_grad.len() != self.params.len() {
            return Err(Error::Precondition("tapes or gradient buffer do not match the stack".into()));
        }
        let mut g = g_z.clone();
        for ((l, r), tape) in self.layers.iter().zip(&self.ranges).zip(tapes).rev() {
            g = l.backward(&self.params.values()[r.clone()], tape, &g, g_logdet, &mut param_grad[r.clone()])?;
        }
        Ok(g)
    }

    /// `x = g(z) = f^{-1}(z)` with `log|det J_g(z)|` per row.
    pub fn inverse(&self, z: &Matrix<T>, cond: Option<&Matrix<T>>) -> Result<(Matrix<T>, Vec<T>)> {
        self.check_inputs(z, cond)?;
        let mut cur = z.clone();
        let mut logdet = vec![T::zero(); z.rows()];
        for (l, r) in self.layers.iter().zip(&self.ranges).rev() {
            let (x, ld) = l.inverse(&self.params.values()[r.clone()], &cur, cond)?;
            logdet.iter_mut().zip(&ld).for_each(|(a, &b)| *a += b);
            cur = x;
        }
        Ok((cur, logdet))
    }

    /// `log q(f(x)) + log|det J_f(x)|` per row, in eval mode.
    pub fn log_prob(&self, x: &Matrix<T>, cond: Option<&Matrix<T>>) -> Result<Vec<T>> {
        let out = self.forward(x, cond, Mode::Eval)?;
        Ok(out.z.row_iter().zip(&out.logdet).map(|(z, &ld)| self.prior.log_density(z) + ld).collect())
    }

    /// Draws `z ~ q` and returns `g(z)`; `cond` (if any) supplies one row per draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, cond: Option<&Matrix<T>>) -> Result<Matrix<T>> {
        let z = self.prior.sample(rng, n, self.dim)?;
        Ok(self.inverse(&z, cond)?.0)
    }

    /// Mean negative log-likelihood of a batch and its parameter gradient.
    ///
    /// Returns the tapes so train-mode callers can fold batch statistics into
    /// the running moments afterwards.
    pub fn nll_and_grad(
        &self,
        x: &Matrix<T>,
        cond: Option<&Matrix<T>>,
        mode: Mode,
    ) -> Result<(T, Vec<T>, Vec<LayerTape<T>>)> {
        let n = x.rows();
        if n == 0 {
            return Err(Error::Precondition("empty batch".into()));
        }
        let out = self.forward(x, cond, mode)?;
        let inv_n = T::one() / lit::<T>(n as f64);
        let mut loss = T::zero();
        let mut g_z = Matrix::zeros(n, self.dim);
        for r in 0..n {
            let z = out.z.row(r);
            loss -= self.prior.log_density(z) + out.logdet[r];
            self.prior.grad_log_density(z, g_z.row_mut(r));
            g_z.row_mut(r).iter_mut().for_each(|v| *v = -*v * inv_n);
        }
        loss *= inv_n;
        let g_ld = vec![-inv_n; n];
        let mut grad = vec![T::zero(); self.params.len()];
        self.backward(&out.tapes, &g_z, &g_ld, &mut grad)?;
        Ok((loss, grad, out.tapes))
    }

    /// Zeroes every net's output layer and every batch-norm affine, so each
    /// transform (and batch norm in eval mode, up to its epsilon) is the identity.
    pub fn set_identity(&mut self) {
        fn zero_output<T: Scalar>(net: &Mlp<T>, params: &mut [T]) {
            let last = net.num_linear_layers() - 1;
            params[net.weight_range(last)].iter_mut().for_each(|v| *v = T::zero());
            params[net.bias_range(last)].iter_mut().for_each(|v| *v = T::zero());
        }
        for (l, r) in self.layers.iter().zip(&self.ranges) {
            let p = &mut self.params.values_mut()[r.clone()];
            match l {
                FlowLayer::Coupling(c) => {
                    let (rs, rt) = c.net_ranges();
                    zero_output(c.scale_net(), &mut p[rs]);
                    zero_output(c.shift_net(), &mut p[rt]);
                }
                FlowLayer::MaskedAutoregressive(m) => zero_output(m.net(), p),
                FlowLayer::FlowBatchnorm(_) => p.iter_mut().for_each(|v| *v = T::zero()),
            }
        }
    }

    pub fn update_running(&mut self, tapes: &[LayerTape<T>]) {
        for (l, t) in self.layers.iter_mut().zip(tapes) {
            l.update_running(t);
        }
    }
}
