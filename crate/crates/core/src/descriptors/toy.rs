use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use super::{Descriptor, DescriptorSource, ImageRef};
use crate::error::{MopError, Result};
use crate::imaging::{crop, resize_bilinear, ImageTensor};
use crate::patchgrid::PatchSpec;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyEmbedderConfig {
    #[serde(default = "default_thumb_side")]
    pub thumb_side: usize,
    #[serde(default = "default_out_dim")]
    pub out_dim: usize,
    #[serde(default)]
    pub projection_seed: u64,
}

fn default_thumb_side() -> usize {
    16
}

fn default_out_dim() -> usize {
    64
}

impl Default for ToyEmbedderConfig {
    fn default() -> Self {
        ToyEmbedderConfig {
            thumb_side: default_thumb_side(),
            out_dim: default_out_dim(),
            projection_seed: 0,
        }
    }
}

/// Network-free stand-in for patch activations.
///
/// A patch is resized to a `thumb_side` square thumbnail, converted to gray
/// in `[0, 1]`, centered by its scalar mean, multiplied by a ±1 matrix and
/// passed through `max(·, 0)`.
///
/// The projection has `out_dim` rows and `thumb_side²` columns and is filled
/// column-major from SplitMix64 seeded with `projection_seed`: entry
/// `(row, col)` consumes draw number `col * out_dim + row`, and is `+1` when
/// the draw's top bit is clear, `-1` otherwise.
#[derive(Clone, Debug)]
pub struct ToyEmbedder {
    cfg: ToyEmbedderConfig,
    // row-major out_dim x thumb_side²
    projection: Vec<f64>,
}

impl ToyEmbedder {
    pub fn new(cfg: ToyEmbedderConfig) -> Result<Self> {
        if cfg.out_dim == 0 || cfg.thumb_side == 0 {
            return Err(MopError::invalid(
                "toy embedder needs out_dim >= 1 and thumb_side >= 1",
            ));
        }
        let cols = cfg.thumb_side * cfg.thumb_side;
        let mut projection = vec![0.0; cfg.out_dim * cols];
        let mut rng = SplitMix64::seed_from_u64(cfg.projection_seed);
        for col in 0..cols {
            for row in 0..cfg.out_dim {
                projection[row * cols + col] = if rng.next_u64() >> 63 == 0 { 1.0 } else { -1.0 };
            }
        }
        Ok(ToyEmbedder { cfg, projection })
    }

    pub fn config(&self) -> &ToyEmbedderConfig {
        &self.cfg
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn embed(&self, patch: &ImageTensor) -> Result<Descriptor> {
        let side = self.cfg.thumb_side;
        let thumb = resize_bilinear(patch, side, side)?;
        // Luma scaled by 1000 keeps the weights integral, so the mean
        // subtraction is exact and constant patches give exact zeros.
        let luma: Vec<i64> = thumb
            .data()
            .chunks_exact(thumb.channels())
            .map(|px| match px {
                [g] => 1000 * *g as i64,
                [r, g, b] => 299 * *r as i64 + 587 * *g as i64 + 114 * *b as i64,
                _ => unreachable!("images have 1 or 3 channels"),
            })
            .collect();
        let n = luma.len() as i64;
        let total: i64 = luma.iter().sum();
        let scale = (n * 255_000) as f64;
        let gray: Vec<f64> = luma.iter().map(|&l| (l * n - total) as f64 / scale).collect();
        let out = self
            .projection
            .chunks_exact(gray.len())
            .map(|row| {
                row.iter()
                    .zip(&gray)
                    .map(|(p, g)| p * g)
                    .sum::<f64>()
                    .max(0.0)
            })
            .collect();
        Ok(Descriptor(out))
    }
}

impl DescriptorSource for ToyEmbedder {
    fn dim(&self) -> usize {
        self.cfg.out_dim
    }

    fn descriptor_for(&self, image: ImageRef<'_>, spec: &PatchSpec) -> Result<Descriptor> {
        let pixels = image.pixels.ok_or_else(|| {
            MopError::invalid(format!("toy embedder needs pixels for image {:?}", image.id))
        })?;
        if spec.x == 0 && spec.y == 0 && spec.side == pixels.width() && spec.side == pixels.height()
        {
            return self.embed(pixels);
        }
        let patch = crop(pixels, spec.x, spec.y, spec.side, spec.side).map_err(|e| {
            MopError::invalid(format!("patch {spec:?} of image {:?}: {e}", image.id))
        })?;
        self.embed(&patch)
    }

    fn needs_pixels(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patchgrid::Level;

    fn gradient_patch() -> ImageTensor {
        ImageTensor::from_fn(32, 32, 3, |x, y, c| (x * 7 + y * 3 + c * 20) as u8).unwrap()
    }

    #[test]
    fn constant_patch_embeds_to_zero() {
        let e = ToyEmbedder::new(ToyEmbedderConfig::default()).unwrap();
        let d = e.embed(&ImageTensor::filled(40, 40, 3, 90).unwrap()).unwrap();
        assert_eq!(d.dim(), 64);
        assert!(d.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let cfg = ToyEmbedderConfig::default();
        let a = ToyEmbedder::new(cfg.clone()).unwrap();
        let b = ToyEmbedder::new(cfg.clone()).unwrap();
        let p = gradient_patch();
        let da = a.embed(&p).unwrap();
        let db = b.embed(&p).unwrap();
        assert!(da.values().iter().zip(db.values()).all(|(x, y)| x.to_bits() == y.to_bits()));

        let s1 = ToyEmbedder::new(ToyEmbedderConfig { projection_seed: 1, ..cfg.clone() }).unwrap();
        let s2 = ToyEmbedder::new(ToyEmbedderConfig { projection_seed: 2, ..cfg }).unwrap();
        assert_ne!(s1.embed(&p).unwrap(), s2.embed(&p).unwrap());
    }

    #[test]
    fn projection_fill_order() {
        let cfg = ToyEmbedderConfig { thumb_side: 2, out_dim: 3, projection_seed: 9 };
        let e = ToyEmbedder::new(cfg).unwrap();
        let mut rng = SplitMix64::seed_from_u64(9);
        let draws: Vec<f64> = (0..12)
            .map(|_| if rng.next_u64() >> 63 == 0 { 1.0 } else { -1.0 })
            .collect();
        // entry (row 2, col 1) is draw 1 * 3 + 2
        assert_eq!(e.projection()[2 * 4 + 1], draws[5]);
        assert_eq!(e.projection()[0], draws[0]);
        assert_eq!(e.projection()[1], draws[3]);
    }

    #[test]
    fn outputs_are_non_negative() {
        let e = ToyEmbedder::new(ToyEmbedderConfig::default()).unwrap();
        let d = e.embed(&gradient_patch()).unwrap();
        assert!(d.values().iter().all(|v| *v >= 0.0 && v.is_finite()));
        assert!(d.values().iter().any(|v| *v > 0.0));
    }

    #[test]
    fn source_crops_patch() {
        let e = ToyEmbedder::new(ToyEmbedderConfig::default()).unwrap();
        let img = ImageTensor::from_fn(64, 64, 1, |x, y, _| ((x * x + y) % 251) as u8).unwrap();
        let spec = PatchSpec { level: Level::L2, x: 16, y: 8, side: 32 };
        let via_source = e.descriptor_for(ImageRef::new("a", &img), &spec).unwrap();
        let direct = e.embed(&crop(&img, 16, 8, 32, 32).unwrap()).unwrap();
        assert_eq!(via_source, direct);
        let outside = PatchSpec { level: Level::L2, x: 40, y: 0, side: 32 };
        assert!(e.descriptor_for(ImageRef::new("a", &img), &outside).is_err());
        assert!(e.descriptor_for(ImageRef::id_only("a"), &spec).is_err());
    }
}
