use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Block, MopDescriptor, PoolingMethod, ScaleStrategy};
use crate::error::{MopError, Result};
use crate::format::FeatureMatrix;

/// JSON companion of an encoded-feature matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSidecar {
    pub ids: Vec<String>,
    pub layout: Vec<Block>,
    /// Fingerprint of the pipeline model that produced the rows.
    pub fingerprint: String,
    pub method: PoolingMethod,
    pub strategy: ScaleStrategy,
}

/// Encoded descriptors, one row per image, plus their sidecar.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub matrix: FeatureMatrix,
    pub sidecar: FeatureSidecar,
}

/// `features.mopd` → `features.mopd.json`.
pub fn sidecar_path(matrix_path: &Path) -> PathBuf {
    let mut s = matrix_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl FeatureSet {
    pub fn from_descriptors(
        ids: Vec<String>,
        descriptors: &[MopDescriptor],
        layout: Vec<Block>,
        fingerprint: String,
        method: PoolingMethod,
        strategy: ScaleStrategy,
    ) -> Result<Self> {
        if ids.len() != descriptors.len() {
            return Err(MopError::invalid(format!(
                "{} ids for {} descriptors",
                ids.len(),
                descriptors.len()
            )));
        }
        if ids.is_empty() {
            return Err(MopError::invalid("feature set needs at least one image"));
        }
        let dim: usize = layout.iter().map(|b| b.length).sum();
        if let Some(d) = descriptors.iter().find(|d| d.len() != dim) {
            return Err(MopError::invalid(format!(
                "descriptor length {} does not match layout length {dim}",
                d.len()
            )));
        }
        let rows: Vec<&[f64]> = descriptors.iter().map(|d| d.values.as_slice()).collect();
        let matrix = FeatureMatrix::from_rows(&rows)?;
        let set = FeatureSet {
            matrix,
            sidecar: FeatureSidecar { ids, layout: layout.into_iter().map(|b| Block { zero: false, ..b }).collect(), fingerprint, method, strategy },
        };
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn ids(&self) -> &[String] {
        &self.sidecar.ids
    }

    pub fn rows_f64(&self) -> Vec<Vec<f64>> {
        self.matrix.to_rows_f64()
    }

    fn check(&self) -> Result<()> {
        if self.sidecar.ids.len() != self.matrix.rows() {
            return Err(MopError::format(format!(
                "sidecar lists {} ids for {} feature rows",
                self.sidecar.ids.len(),
                self.matrix.rows()
            )));
        }
        let mut offset = 0;
        for b in &self.sidecar.layout {
            if b.offset != offset {
                return Err(MopError::format("sidecar block layout is not contiguous"));
            }
            offset += b.length;
        }
        if offset != self.matrix.dim() {
            return Err(MopError::format(format!(
                "sidecar layout covers {offset} values, rows have {}",
                self.matrix.dim()
            )));
        }
        Ok(())
    }

    pub fn save(&self, matrix_path: &Path) -> Result<()> {
        self.check()?;
        self.matrix.save(matrix_path)?;
        let mut json = serde_json::to_string_pretty(&self.sidecar)?;
        json.push('\n');
        fs::write(sidecar_path(matrix_path), json)?;
        Ok(())
    }

    pub fn load(matrix_path: &Path) -> Result<Self> {
        let matrix = FeatureMatrix::load(matrix_path)?;
        let side = sidecar_path(matrix_path);
        let text = fs::read_to_string(&side)
            .map_err(|e| MopError::NotFound(format!("cannot read {}: {e}", side.display())))?;
        let set = FeatureSet {
            matrix,
            sidecar: serde_json::from_str(&text)?,
        };
        set.check()?;
        Ok(set)
    }

    /// Loads and rejects files produced by a different model.
    pub fn load_expecting(matrix_path: &Path, fingerprint: &str) -> Result<Self> {
        let set = Self::load(matrix_path)?;
        if set.sidecar.fingerprint != fingerprint {
            return Err(MopError::Mismatch(format!(
                "{} was encoded with model {} but the current model is {}",
                matrix_path.display(),
                short(&set.sidecar.fingerprint),
                short(fingerprint)
            )));
        }
        Ok(set)
    }
}

fn short(fp: &str) -> &str {
    &fp[..fp.len().min(12)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patchgrid::Level;
    use crate::pooling::{layout_from_lengths, BlockSource};

    fn sample() -> FeatureSet {
        let layout = layout_from_lengths(&[(BlockSource::Level(Level::L1), 2), (BlockSource::Level(Level::L2), 1)]);
        let descs = vec![
            MopDescriptor { values: vec![0.6, 0.8, 1.0], layout: layout.clone() },
            MopDescriptor { values: vec![1.0, 0.0, -1.0], layout: layout.clone() },
        ];
        FeatureSet::from_descriptors(
            vec!["a".into(), "b".into()],
            &descs,
            layout,
            "abc123".into(),
            PoolingMethod::Vlad,
            ScaleStrategy::concatenation(&[Level::L1, Level::L2]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_and_fingerprint_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.mopd");
        let set = sample();
        set.save(&p).unwrap();
        assert!(sidecar_path(&p).ends_with("f.mopd.json"));
        assert_eq!(FeatureSet::load(&p).unwrap(), set);
        assert!(FeatureSet::load_expecting(&p, "abc123").is_ok());
        assert!(matches!(FeatureSet::load_expecting(&p, "zzz"), Err(MopError::Mismatch(_))));
    }

    #[test]
    fn inconsistent_sidecar_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.mopd");
        let mut set = sample();
        set.save(&p).unwrap();
        set.sidecar.ids.pop();
        let json = serde_json::to_string(&set.sidecar).unwrap();
        fs::write(sidecar_path(&p), json).unwrap();
        assert!(matches!(FeatureSet::load(&p), Err(MopError::Format(_))));
        fs::remove_file(sidecar_path(&p)).unwrap();
        assert!(matches!(FeatureSet::load(&p), Err(MopError::NotFound(_))));
    }
}
