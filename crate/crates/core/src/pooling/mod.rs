//! Per-level pooling and assembly of the final multi-scale descriptor.

mod features;
mod pipeline;

pub use features::{FeatureSet, FeatureSidecar};
pub use pipeline::{
    encode_image, encode_patches, extract_patches, fingerprint_of, fit_pipeline, ImagePatches, LevelModel,
    MopPipelineModel, PipelineConfig,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoding::{normalize_chain, vlad_encode, Codebook, PcaModel, VladConfig};
use crate::error::{MopError, Result};
use crate::patchgrid::Level;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMethod {
    Average,
    Max,
    Vlad,
}

impl PoolingMethod {
    pub fn name(self) -> &'static str {
        match self {
            PoolingMethod::Average => "avg",
            PoolingMethod::Max => "max",
            PoolingMethod::Vlad => "vlad",
        }
    }
}

impl fmt::Display for PoolingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PoolingMethod {
    type Err = MopError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "avg" | "average" => Ok(PoolingMethod::Average),
            "max" => Ok(PoolingMethod::Max),
            "vlad" => Ok(PoolingMethod::Vlad),
            _ => Err(MopError::invalid(format!("unknown pooling method {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    /// Pool the union of every selected level's patches into one block.
    MultiScale,
    /// Pool each selected level separately and concatenate the blocks.
    Concatenation,
}

/// How pooled levels are combined, and which levels take part.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "StrategyRepr", into = "StrategyRepr")]
pub struct ScaleStrategy {
    kind: ScaleKind,
    levels: Vec<Level>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StrategyRepr {
    kind: ScaleKind,
    levels: Vec<Level>,
}

impl TryFrom<StrategyRepr> for ScaleStrategy {
    type Error = MopError;

    fn try_from(r: StrategyRepr) -> Result<Self> {
        ScaleStrategy::new(r.kind, r.levels)
    }
}

impl From<ScaleStrategy> for StrategyRepr {
    fn from(s: ScaleStrategy) -> Self {
        StrategyRepr {
            kind: s.kind,
            levels: s.levels,
        }
    }
}

impl ScaleStrategy {
    /// Levels are sorted and deduplicated; the set must be non-empty.
    pub fn new(kind: ScaleKind, mut levels: Vec<Level>) -> Result<Self> {
        levels.sort();
        levels.dedup();
        if levels.is_empty() {
            return Err(MopError::invalid("scale strategy needs at least one level"));
        }
        Ok(ScaleStrategy { kind, levels })
    }

    /// Concatenation of all three levels.
    pub fn full() -> Self {
        ScaleStrategy {
            kind: ScaleKind::Concatenation,
            levels: Level::ALL.to_vec(),
        }
    }

    pub fn concatenation(levels: &[Level]) -> Result<Self> {
        Self::new(ScaleKind::Concatenation, levels.to_vec())
    }

    pub fn multi_scale(levels: &[Level]) -> Result<Self> {
        Self::new(ScaleKind::MultiScale, levels.to_vec())
    }

    pub fn kind(&self) -> ScaleKind {
        self.kind
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    /// Row label in the style of the result tables, e.g.
    /// `level1+level2+level3`.
    pub fn levels_label(&self) -> String {
        self.levels
            .iter()
            .map(|l| l.name())
            .collect::<Vec<_>>()
            .join("+")
    }

    pub fn kind_label(&self) -> &'static str {
        match self.kind {
            ScaleKind::MultiScale => "multi-scale",
            ScaleKind::Concatenation => "concatenation",
        }
    }
}

/// Which patches fed a block of the final descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSource {
    Level(Level),
    MultiScale,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block {
    pub source: BlockSource,
    pub offset: usize,
    pub length: usize,
    /// Set on a per-image descriptor when the pooled block was all zero and
    /// was left unnormalized.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub zero: bool,
}

/// Builds contiguous blocks from `(source, length)` pairs.
pub fn layout_from_lengths(parts: &[(BlockSource, usize)]) -> Vec<Block> {
    let mut offset = 0;
    parts
        .iter()
        .map(|&(source, length)| {
            let b = Block {
                source,
                offset,
                length,
                zero: false,
            };
            offset += length;
            b
        })
        .collect()
}

/// Concatenated unit-norm blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct MopDescriptor {
    pub values: Vec<f64>,
    pub layout: Vec<Block>,
}

impl MopDescriptor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, i: usize) -> &[f64] {
        let b = &self.layout[i];
        &self.values[b.offset..b.offset + b.length]
    }
}

/// Elementwise mean of equal-length vectors.
pub fn average_pool<R: AsRef<[f64]>>(descriptors: &[R]) -> Result<Vec<f64>> {
    let dim = check_nonempty(descriptors)?;
    let mut out = vec![0.0; dim];
    for d in descriptors {
        out.iter_mut().zip(d.as_ref()).for_each(|(o, v)| *o += v);
    }
    let n = descriptors.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// Elementwise maximum of equal-length vectors.
pub fn max_pool<R: AsRef<[f64]>>(descriptors: &[R]) -> Result<Vec<f64>> {
    check_nonempty(descriptors)?;
    let mut out = descriptors[0].as_ref().to_vec();
    for d in &descriptors[1..] {
        out.iter_mut().zip(d.as_ref()).for_each(|(o, &v)| *o = o.max(v));
    }
    Ok(out)
}

fn check_nonempty<R: AsRef<[f64]>>(descriptors: &[R]) -> Result<usize> {
    let first = descriptors
        .first()
        .ok_or_else(|| MopError::invalid("pooling needs at least one descriptor"))?;
    let dim = first.as_ref().len();
    if let Some(i) = descriptors.iter().position(|d| d.as_ref().len() != dim) {
        return Err(MopError::invalid(format!(
            "descriptor {i} has length {}, expected {dim}",
            descriptors[i].as_ref().len()
        )));
    }
    Ok(dim)
}

/// VLAD path of one level: patch PCA, soft-assignment VLAD, power/L2
/// normalization. The pooled PCA is applied by the caller.
pub fn vlad_pool_unreduced<R: AsRef<[f64]>>(
    vlad: &VladConfig,
    patch_pca: &PcaModel,
    codebook: &Codebook,
    descriptors: &[R],
) -> Result<Vec<f64>> {
    check_nonempty(descriptors)?;
    let reduced = descriptors
        .iter()
        .map(|d| patch_pca.transform(d.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let raw = vlad_encode(vlad, codebook, &reduced)?;
    Ok(normalize_chain(&raw, vlad.power_alpha))
}

/// Pools one level's descriptors. `Vlad` needs the level's fitted models.
pub fn pool_level<R: AsRef<[f64]>>(
    method: PoolingMethod,
    descriptors: &[R],
    model: Option<&LevelModel>,
    vlad: &VladConfig,
) -> Result<Vec<f64>> {
    match method {
        PoolingMethod::Average => average_pool(descriptors),
        PoolingMethod::Max => max_pool(descriptors),
        PoolingMethod::Vlad => {
            let model = model.ok_or_else(|| {
                MopError::Mismatch("VLAD pooling requested but no fitted level model".into())
            })?;
            let pooled = vlad_pool_unreduced(vlad, &model.patch_pca, &model.codebook, descriptors)?;
            model.pooled_pca.transform(&pooled)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_and_max() {
        let d = [vec![1.0, 3.0], vec![3.0, 5.0]];
        assert_eq!(average_pool(&d).unwrap(), vec![2.0, 4.0]);
        assert_eq!(max_pool(&d).unwrap(), vec![3.0, 5.0]);
        let same = vec![vec![0.25, -7.0, 3.5]; 9];
        assert_eq!(average_pool(&same).unwrap(), same[0]);
        assert_eq!(max_pool(&same).unwrap(), same[0]);
    }

    #[test]
    fn empty_and_ragged_rejected() {
        let empty: [Vec<f64>; 0] = [];
        assert!(average_pool(&empty).is_err());
        assert!(max_pool(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(pool_level(PoolingMethod::Vlad, &[vec![1.0]], None, &VladConfig::default()).is_err());
    }

    #[test]
    fn strategy_normalizes_levels() {
        let s = ScaleStrategy::concatenation(&[Level::L3, Level::L1, Level::L3]).unwrap();
        assert_eq!(s.levels(), &[Level::L1, Level::L3]);
        assert_eq!(s.levels_label(), "level1+level3");
        assert!(ScaleStrategy::multi_scale(&[]).is_err());
        let json = serde_json::to_string(&ScaleStrategy::full()).unwrap();
        assert_eq!(json, r#"{"kind":"concatenation","levels":["L1","L2","L3"]}"#);
        assert!(serde_json::from_str::<ScaleStrategy>(r#"{"kind":"multi_scale","levels":[]}"#).is_err());
    }

    #[test]
    fn layout_is_contiguous() {
        let l = layout_from_lengths(&[
            (BlockSource::Level(Level::L1), 4),
            (BlockSource::Level(Level::L2), 3),
        ]);
        assert_eq!(l[1].offset, 4);
        assert_eq!(l[1].offset + l[1].length, 7);
    }
}
