use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batchnorm::{FlowBatchNorm, FlowBnTape};
use super::coupling::{CouplingLayer, CouplingTape};
use super::maf::{MafLayer, MafTape};
use crate::error::Result;
use crate::ndnet::{Matrix, Mode};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Coupling,
    MaskedAutoregressive,
    FlowBatchnorm,
}

/// One invertible layer, written in the density direction `x -> z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", tag = "kind", rename_all = "snake_case")]
pub enum FlowLayer<T> {
    Coupling(CouplingLayer<T>),
    MaskedAutoregressive(MafLayer<T>),
    FlowBatchnorm(FlowBatchNorm<T>),
}

pub enum LayerTape<T> {
    Coupling(CouplingTape<T>),
    MaskedAutoregressive(MafTape<T>),
    FlowBatchnorm(FlowBnTape<T>),
}

/// Output of a layer's forward pass.
pub struct LayerForward<T> {
    pub z: Matrix<T>,
    pub logdet: Vec<T>,
    pub tape: LayerTape<T>,
}

impl<T: Scalar> FlowLayer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            FlowLayer::Coupling(_) => LayerKind::Coupling,
            FlowLayer::MaskedAutoregressive(_) => LayerKind::MaskedAutoregressive,
            FlowLayer::FlowBatchnorm(_) => LayerKind::FlowBatchnorm,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FlowLayer::Coupling(l) => l.dim(),
            FlowLayer::MaskedAutoregressive(l) => l.dim(),
            FlowLayer::FlowBatchnorm(l) => l.dim(),
        }
    }

    pub fn cond_dim(&self) -> usize {
        match self {
            FlowLayer::Coupling(l) => l.cond_dim(),
            FlowLayer::MaskedAutoregressive(l) => l.cond_dim(),
            FlowLayer::FlowBatchnorm(_) => 0,
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            FlowLayer::Coupling(l) => l.num_params(),
            FlowLayer::MaskedAutoregressive(l) => l.num_params(),
            FlowLayer::FlowBatchnorm(l) => l.num_params(),
        }
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        match self {
            FlowLayer::Coupling(l) => l.init_params(rng),
            FlowLayer::MaskedAutoregressive(l) => l.init_params(rng),
            FlowLayer::FlowBatchnorm(l) => l.init_params(),
        }
    }

    /// `z = f(x)` and `log|det J_f(x)|` per row.
    pub fn forward(&self, params: &[T], x: &Matrix<T>, cond: Option<&Matrix<T>>, mode: Mode) -> Result<LayerForward<T>> {
        let (z, logdet, tape) = match self {
            FlowLayer::Coupling(l) => {
                let (z, ld, t) = l.forward(params, x, cond, mode)?;
                (z, ld, LayerTape::Coupling(t))
            }
            FlowLayer::MaskedAutoregressive(l) => {
                let (z, ld, t) = l.forward(params, x, cond, mode)?;
                (z, ld, LayerTape::MaskedAutoregressive(t))
            }
            FlowLayer::FlowBatchnorm(l) => {
                let (z, ld, t) = l.forward(params, x, mode)?;
                (z, ld, LayerTape::FlowBatchnorm(t))
            }
        };
        Ok(LayerForward { z, logdet, tape })
    }

    /// Accumulates parameter gradients and returns the gradient with respect to `x`,
    /// given upstream gradients on `z` and on each row's log-determinant.
    pub fn backward(
        &self,
        params: &[T],
        tape: &LayerTape<T>,
        g_z: &Matrix<T>,
        g_logdet: &[T],
        param_grad: &mut [T],
    ) -> Result<Matrix<T>> {
        match (self, tape) {
            (FlowLayer::Coupling(l), LayerTape::Coupling(t)) => l.backward(params, t, g_z, g_logdet, param_grad),
            (FlowLayer::MaskedAutoregressive(l), LayerTape::MaskedAutoregressive(t)) => {
                l.backward(params, t, g_z, g_logdet, param_grad)
            }
            (FlowLayer::FlowBatchnorm(l), LayerTape::FlowBatchnorm(t)) => {
                l.backward(params, t, g_z, g_logdet, param_grad)
            }
            _ => Err(crate::Error::Precondition("tape belongs to a different layer kind".into())),
        }
    }

    /// `x = f^{-1}(z)` and `log|det J_{f^{-1}}(z)|` per row; batch norm uses running moments.
    pub fn inverse(&self, params: &[T], z: &Matrix<T>, cond: Option<&Matrix<T>>) -> Result<(Matrix<T>, Vec<T>)> {
        match self {
            FlowLayer::Coupling(l) => l.inverse(params, z, cond),
            FlowLayer::MaskedAutoregressive(l) => l.inverse(params, z, cond),
            FlowLayer::FlowBatchnorm(l) => l.inverse(params, z),
        }
    }

    pub fn update_running(&mut self, tape: &LayerTape<T>) {
        if let (FlowLayer::FlowBatchnorm(l), LayerTape::FlowBatchnorm(t)) = (self, tape) {
            l.update_running(t);
        }
    }
}
