use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Descriptor, DescriptorSource, ImageRef};
use crate::error::{MopError, Result};
use crate::format::FeatureMatrix;
use crate::patchgrid::{Level, PatchSpec};

/// One manifest entry mapping a patch of an image to a matrix row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image_id: String,
    pub level: Level,
    pub x: usize,
    pub y: usize,
    pub side: usize,
    pub row: usize,
}

impl ManifestRecord {
    pub fn spec(&self) -> PatchSpec {
        PatchSpec {
            level: self.level,
            x: self.x,
            y: self.y,
            side: self.side,
        }
    }
}

type Key = (String, PatchSpec);

/// Precomputed activations: a `MOPD` matrix plus a JSON manifest.
/// Immutable after construction.
#[derive(Clone, Debug)]
pub struct ActivationStore {
    matrix: FeatureMatrix,
    manifest: Vec<ManifestRecord>,
    index: HashMap<Key, usize>,
}

impl ActivationStore {
    pub fn new(matrix: FeatureMatrix, manifest: Vec<ManifestRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(manifest.len());
        for rec in &manifest {
            if rec.row >= matrix.rows() {
                return Err(MopError::format(format!(
                    "manifest row {} out of range for {} stored rows",
                    rec.row,
                    matrix.rows()
                )));
            }
            if index
                .insert((rec.image_id.clone(), rec.spec()), rec.row)
                .is_some()
            {
                return Err(MopError::format(format!(
                    "duplicate manifest key ({}, {:?})",
                    rec.image_id,
                    rec.spec()
                )));
            }
        }
        Ok(ActivationStore {
            matrix,
            manifest,
            index,
        })
    }

    pub fn load(matrix_path: &Path, manifest_path: &Path) -> Result<Self> {
        let matrix = FeatureMatrix::load(matrix_path)?;
        let file = File::open(manifest_path).map_err(|e| {
            MopError::NotFound(format!("cannot open manifest {}: {e}", manifest_path.display()))
        })?;
        let manifest: Vec<ManifestRecord> = serde_json::from_reader(BufReader::new(file))?;
        Self::new(matrix, manifest)
    }

    pub fn save(&self, matrix_path: &Path, manifest_path: &Path) -> Result<()> {
        self.matrix.save(matrix_path)?;
        std::fs::write(manifest_path, serde_json::to_vec_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn matrix(&self) -> &FeatureMatrix {
        &self.matrix
    }

    pub fn manifest(&self) -> &[ManifestRecord] {
        &self.manifest
    }

    /// Distinct image ids in first-appearance order.
    pub fn image_ids(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        self.manifest
            .iter()
            .filter(|r| seen.insert(r.image_id.as_str()))
            .map(|r| r.image_id.clone())
            .collect()
    }

    pub fn lookup(&self, image_id: &str, spec: &PatchSpec) -> Result<Descriptor> {
        let row = self
            .index
            .get(&(image_id.to_string(), *spec))
            .ok_or_else(|| {
                MopError::NotFound(format!(
                    "no activation for image {image_id:?} level {} at ({}, {}) side {}",
                    spec.level, spec.x, spec.y, spec.side
                ))
            })?;
        Ok(Descriptor(self.matrix.row_f64(*row)))
    }
}

impl DescriptorSource for ActivationStore {
    fn dim(&self) -> usize {
        self.matrix.dim()
    }

    fn descriptor_for(&self, image: ImageRef<'_>, spec: &PatchSpec) -> Result<Descriptor> {
        self.lookup(image.id, spec)
    }

    fn needs_pixels(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, level: Level, x: usize, row: usize) -> ManifestRecord {
        ManifestRecord {
            image_id: id.into(),
            level,
            x,
            y: 0,
            side: 128,
            row,
        }
    }

    fn store() -> ActivationStore {
        let m = FeatureMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 0.5, 0.25, 0.125]).unwrap();
        ActivationStore::new(m, vec![rec("a", Level::L2, 0, 0), rec("a", Level::L2, 32, 1)])
            .unwrap()
    }

    #[test]
    fn lookup_returns_rows() {
        let s = store();
        let k0 = rec("a", Level::L2, 0, 0).spec();
        let k1 = rec("a", Level::L2, 32, 1).spec();
        assert_eq!(s.lookup("a", &k0).unwrap().values(), &[1.0, 2.0, 3.0]);
        assert_eq!(s.lookup("a", &k1).unwrap().values(), &[0.5, 0.25, 0.125]);
        assert_ne!(s.lookup("a", &k0).unwrap(), s.lookup("a", &k1).unwrap());
    }

    #[test]
    fn missing_key_names_the_tuple() {
        let s = store();
        let spec = rec("b", Level::L3, 64, 0).spec();
        match s.lookup("b", &spec) {
            Err(MopError::NotFound(msg)) => {
                assert!(msg.contains("\"b\"") && msg.contains("level3") && msg.contains("64"))
            }
            other => panic!("expected not-found, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_manifests() {
        let m = FeatureMatrix::new(1, 1, vec![0.0]).unwrap();
        assert!(ActivationStore::new(m.clone(), vec![rec("a", Level::L2, 0, 1)]).is_err());
        assert!(ActivationStore::new(
            m,
            vec![rec("a", Level::L2, 0, 0), rec("a", Level::L2, 0, 0)]
        )
        .is_err());
    }

    #[test]
    fn persists_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let s = store();
        let (mp, jp) = (dir.path().join("acts.mopd"), dir.path().join("acts.json"));
        s.save(&mp, &jp).unwrap();
        let text = std::fs::read_to_string(&jp).unwrap();
        assert!(text.contains("\"image_id\"") && text.contains("\"row\""));
        let back = ActivationStore::load(&mp, &jp).unwrap();
        assert_eq!(back.matrix(), s.matrix());
        assert_eq!(back.manifest(), s.manifest());
        assert!(matches!(
            ActivationStore::load(&dir.path().join("nope"), &jp),
            Err(MopError::NotFound(_))
        ));
    }
}
