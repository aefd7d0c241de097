//! Chart learning: the vector-quantised autoencoder, k-means partitioning,
//! chart membership and chart priors.

mod atlas;
mod kmeans;
mod vqae;

pub use atlas::{priors_from_memberships, ChartAtlas, Membership, MembershipRule, Partitioner};
pub use kmeans::{kmeans, KMeans, KMEANS_MAX_ITERS, KMEANS_TOL};
pub use vqae::{train_vqae, VqAe, VqAeConfig, VqReport};
