//! Dense matrices, small feedforward networks with manual reverse-mode
//! gradients, and the Adam optimizer.

mod adam;
mod matrix;
mod mlp;
mod params;

pub use adam::{Adam, AdamConfig};
pub use matrix::{gemm_into, Matrix};
pub use mlp::{batch_moments, Activation, Mlp, MlpSpec, MlpTape, Mode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use params::{ParamSlice, ParameterVector};
