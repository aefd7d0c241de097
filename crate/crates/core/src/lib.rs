pub mod charts;
pub mod conformal;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod flows;
pub mod mixture;
pub mod ndnet;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases of the generic types.
pub mod f64 {
    pub type Matrix = crate::ndnet::Matrix<f64>;
    pub type FlowStack = crate::flows::FlowStack<f64>;
    pub type ChartAtlas = crate::charts::ChartAtlas<f64>;
    pub type VqAe = crate::charts::VqAe<f64>;
    pub type ConformalEmbedding = crate::conformal::ConformalEmbedding<f64>;
    pub type MobiusParams = crate::conformal::MobiusParams<f64>;
    pub type MixtureModel = crate::mixture::MixtureModel<f64>;
}
