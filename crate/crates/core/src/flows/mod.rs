//! Invertible conditional flow layers, stacks with exact log-determinants and
//! maximum-likelihood training.

mod batchnorm;
mod coupling;
mod layer;
mod maf;
mod prior;
mod stack;
mod train;

pub use batchnorm::FlowBatchNorm;
pub use coupling::{CouplingLayer, S_MAX};
pub use layer::{FlowLayer, LayerForward, LayerKind, LayerTape};
pub use maf::{hidden_degrees, MafLayer};
pub use prior::{log_unit_ball_volume, LatentPrior};
pub use stack::{FlowArchitecture, FlowKind, FlowStack, StackForward};
pub use train::{mean_nll, train_mle, Batch, BatchSource, TrainConfig, TrainReport, UnconditionalSource};
