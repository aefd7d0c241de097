//! Mixtures of chart-conditioned flows: exact likelihood, chart posteriors,
//! sampling, latent inference and stochastic-chart training.

mod model;
mod train;

pub use model::{
    ChartLogProb, EvalCounter, InferenceMode, InferenceResult, MixtureModel, MixtureSamples, Posterior, SupportMode,
};
pub use train::{MixtureTrainConfig, MixtureTrainReport, StochasticChartSource};
