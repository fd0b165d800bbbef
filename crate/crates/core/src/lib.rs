//! Multi-scale orderless pooling of patch descriptors.
//!
//! An image is normalized to a 256×256 frame and cut into three levels of
//! square patches: the whole frame, a 128-pixel grid and a 64-pixel grid
//! (stride 32). Each patch is mapped to a descriptor by a
//! [`descriptors::DescriptorSource`]. The finer levels are reduced with PCA,
//! pooled orderlessly with soft-assignment VLAD against a per-level k-means
//! codebook, power/L2 normalized and reduced again with PCA. The global
//! descriptor and the pooled blocks are unit-normalized and concatenated.
//!
//! [`eval`] holds the classification, retrieval and invariance harnesses,
//! and [`cli`] the batch front end behind the `mop` binary.

pub mod cli;
pub mod descriptors;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod format;
pub mod imaging;
pub mod patchgrid;
pub mod pooling;
pub mod synth;

pub use error::{MopError, Result};
