//! PCA, k-means codebooks, soft-assignment VLAD and the power/L2
//! normalization chain.

mod kmeans;
mod pca;
pub mod persist;
mod vlad;

pub use kmeans::{kmeans_fit, Codebook, KMeansConfig, KMeansFit};
pub use pca::{pca_fit, PcaModel, DEFAULT_WHITEN_EPSILON};
pub use vlad::{l2_normalize, normalize_chain, soft_assign, vlad_encode, VladConfig};
