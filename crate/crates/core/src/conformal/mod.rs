//! Möbius transformations, their group algebra, and dimension-raising conformal
//! embeddings with exact conformal factors and left inverses.

mod embedding;
pub mod linalg;
mod mobius;
mod stage;

pub use embedding::{
    pretrain_reconstruction, reconstruction_loss, ConformalEmbedding, PreparedEmbedding, Projection, ReconConfig,
    ReconReport, DEFAULT_TAU_PROJ,
};
pub use mobius::{compose, flatten, pad_point, params_close, Epsilon, MobiusParams};
pub use stage::{Prepared, Stage, StageEval, POLE_TOL};
