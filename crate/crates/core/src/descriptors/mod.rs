//! Patch descriptor sources.
//!
//! The pooling pipeline only needs a map from (image, patch geometry) to a
//! fixed-length vector. Two backends implement it: an [`ActivationStore`]
//! of precomputed network activations and a deterministic [`ToyEmbedder`].

mod store;
mod toy;

pub use store::{ActivationStore, ManifestRecord};
pub use toy::{ToyEmbedder, ToyEmbedderConfig};

use crate::error::Result;
use crate::imaging::ImageTensor;
use crate::patchgrid::PatchSpec;

/// Fixed-length real descriptor of one patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor(pub Vec<f64>);

impl Descriptor {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Descriptor {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Descriptor {
    fn from(v: Vec<f64>) -> Self {
        Descriptor(v)
    }
}

/// An image as seen by a descriptor source: its identifier and, when
/// available, its pixels in the normalized frame.
#[derive(Clone, Copy, Debug)]
pub struct ImageRef<'a> {
    pub id: &'a str,
    pub pixels: Option<&'a ImageTensor>,
}

impl<'a> ImageRef<'a> {
    pub fn new(id: &'a str, pixels: &'a ImageTensor) -> Self {
        ImageRef {
            id,
            pixels: Some(pixels),
        }
    }

    pub fn id_only(id: &'a str) -> Self {
        ImageRef { id, pixels: None }
    }
}

pub trait DescriptorSource: Sync {
    /// Descriptor length; constant for the lifetime of the source.
    fn dim(&self) -> usize;

    fn descriptor_for(&self, image: ImageRef<'_>, spec: &PatchSpec) -> Result<Descriptor>;

    /// Whether the source reads pixels (and so can serve transformed images).
    fn needs_pixels(&self) -> bool;
}
