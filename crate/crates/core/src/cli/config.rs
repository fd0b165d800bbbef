use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::descriptors::ToyEmbedderConfig;
use crate::error::{MopError, Result};
use crate::eval::{default_sweep, SgdConfig};
use crate::eval::invariance::{DEFAULT_WINDOW_SIDES, DEFAULT_WINDOW_STRIDE};
use crate::imaging::TransformSpec;
use crate::pooling::{PipelineConfig, PoolingMethod};

/// Where patch descriptors come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    /// Images on disk (binary PGM/PPM) embedded with the toy embedder.
    Toy {
        images_dir: PathBuf,
        #[serde(default)]
        embedder: ToyEmbedderConfig,
    },
    /// Precomputed activations: a MOPD matrix plus its JSON manifest.
    Store { matrix: PathBuf, manifest: PathBuf },
}

/// Retrieval-time PCA compression of the encoded features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionConfig {
    pub dim: usize,
    #[serde(default = "yes")]
    pub whiten: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    #[serde(default = "default_sides")]
    pub sides: Vec<usize>,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_sides() -> Vec<usize> {
    DEFAULT_WINDOW_SIDES.to_vec()
}

fn default_stride() -> usize {
    DEFAULT_WINDOW_STRIDE
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            sides: default_sides(),
            stride: default_stride(),
        }
    }
}

/// Everything a command needs, read from one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub source: SourceConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default = "default_method")]
    pub method: PoolingMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compression: Option<CompressionConfig>,
    #[serde(default)]
    pub sgd: SgdConfig,
    /// JSON object mapping image id to class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// JSON object mapping image id to `"train"` or `"test"`. Without it
    /// every image is used for both.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<PathBuf>,
    /// JSON object mapping query id to its relevant ids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<PathBuf>,
    #[serde(default = "default_sweep")]
    pub sweep: Vec<TransformSpec>,
    #[serde(default)]
    pub windows: WindowConfig,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn default_method() -> PoolingMethod {
    PoolingMethod::Vlad
}

fn default_out() -> PathBuf {
    PathBuf::from("mop-out")
}

/// Every key accepted in a run configuration, with a short description.
/// Shown by `mop --help`.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("source.toy.images_dir", "directory of binary PGM/PPM images; id = file stem"),
    ("source.toy.embedder.thumb_side", "toy embedder thumbnail side (16)"),
    ("source.toy.embedder.out_dim", "toy embedder descriptor length (64)"),
    ("source.toy.embedder.projection_seed", "toy embedder projection seed (0)"),
    ("source.store.matrix", "MOPD activation matrix"),
    ("source.store.manifest", "JSON manifest of the activation rows"),
    ("pipeline.grid.frame", "normalized frame side (256)"),
    ("pipeline.grid.level_sides", "patch side per level ([256, 128, 64])"),
    ("pipeline.grid.stride", "grid stride (32)"),
    ("pipeline.vlad.r", "nearest centers per patch (5)"),
    ("pipeline.vlad.sigma", "assignment kernel width (10)"),
    ("pipeline.vlad.power_alpha", "signed power exponent (0.5)"),
    ("pipeline.patch_dim", "patch PCA output dimension (500)"),
    ("pipeline.codebook_size", "k-means centers per level (100)"),
    ("pipeline.pooled_dim", "pooled PCA output dimension (4096)"),
    ("pipeline.kmeans_max_iters", "k-means iteration cap (100)"),
    ("pipeline.kmeans_tol", "k-means relative improvement stop (1e-6)"),
    ("pipeline.seed", "codebook seed (0; --seed overrides)"),
    ("pipeline.strategy.kind", "concatenation | multi_scale"),
    ("pipeline.strategy.levels", "subset of [\"L1\", \"L2\", \"L3\"]"),
    ("method", "avg | max | vlad (vlad)"),
    ("compression.dim", "retrieval PCA dimension (off when absent)"),
    ("compression.whiten", "whiten the retrieval PCA (true)"),
    ("sgd.lambda", "SVM regularization (1e-5)"),
    ("sgd.eta", "SVM learning rate (0.2)"),
    ("sgd.epochs", "SVM epochs (100)"),
    ("sgd.seed", "SVM shuffling seed (0; --seed overrides)"),
    ("labels", "JSON {\"image_id\": \"class\"}"),
    ("split", "JSON {\"image_id\": \"train\" | \"test\"}"),
    ("relevance", "JSON {\"query_id\": [\"relevant_id\", ...]}"),
    ("sweep", "list of {\"kind\", \"parameter\"}; kind scale | translate_h | translate_v | flip | rotate"),
    ("windows.sides", "window sides for best-window search ([224, 192, 160, 128])"),
    ("windows.stride", "window stride (16)"),
    ("out_dir", "output directory (mop-out; --out overrides)"),
];

pub fn config_help() -> String {
    let width = CONFIG_KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from("Config keys (JSON, unknown keys rejected):\n");
    for (k, d) in CONFIG_KEYS {
        s.push_str(&format!("  {k:<width$}  {d}\n"));
    }
    s
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| MopError::NotFound(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| MopError::InvalidArgument(format!("config {}: {e}", path.display())))
    }

    /// Pretty JSON with keys in declaration order.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.pipeline.seed = seed;
        self.sgd.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.sgd.validate()?;
        match &self.source {
            SourceConfig::Toy { images_dir, .. } => must_exist(images_dir, "images directory")?,
            SourceConfig::Store { matrix, manifest } => {
                must_exist(matrix, "activation matrix")?;
                must_exist(manifest, "activation manifest")?;
            }
        }
        for (p, what) in [(&self.labels, "labels file"), (&self.split, "split file"), (&self.relevance, "relevance file")] {
            if let Some(p) = p {
                must_exist(p, what)?;
            }
        }
        if let Some(c) = &self.compression {
            if c.dim == 0 {
                return Err(MopError::invalid("compression.dim must be positive"));
            }
        }
        if self.windows.sides.is_empty() || self.windows.stride == 0 {
            return Err(MopError::invalid("windows.sides must be non-empty and windows.stride positive"));
        }
        for t in &self.sweep {
            t.validate()?;
        }
        Ok(())
    }
}

fn must_exist(p: &Path, what: &str) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(MopError::InvalidArgument(format!("{what} {} does not exist", p.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"source": {"toy": {"images_dir": "imgs"}}}"#
    }

    #[test]
    fn defaults_and_round_trip() {
        let cfg: RunConfig = serde_json::from_str(minimal()).unwrap();
        assert_eq!(cfg.method, PoolingMethod::Vlad);
        assert_eq!(cfg.pipeline.pooled_dim, 4096);
        assert_eq!(cfg.sweep.len(), 34);
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn typos_rejected() {
        let bad = r#"{"source": {"toy": {"images_dir": "imgs"}}, "pipeline": {"patch_dims": 4}}"#;
        assert!(serde_json::from_str::<RunConfig>(bad).is_err());
        let bad = r#"{"source": {"toy": {"images_dir": "imgs", "embeder": {}}}}"#;
        assert!(serde_json::from_str::<RunConfig>(bad).is_err());
    }

    fn keys(v: &serde_json::Value, prefix: &str, out: &mut Vec<String>) {
        if let serde_json::Value::Object(m) = v {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                if child.is_object() {
                    keys(child, &key, out);
                } else {
                    out.push(key);
                }
            }
        }
    }

    #[test]
    fn help_lists_every_key() {
        let mut cfg: RunConfig = serde_json::from_str(minimal()).unwrap();
        cfg.compression = Some(CompressionConfig { dim: 4, whiten: true });
        cfg.labels = Some("l".into());
        cfg.split = Some("s".into());
        cfg.relevance = Some("r".into());
        let store = RunConfig {
            source: SourceConfig::Store { matrix: "m".into(), manifest: "f".into() },
            ..cfg.clone()
        };
        let help = config_help();
        for c in [cfg, store] {
            let mut all = Vec::new();
            keys(&serde_json::to_value(&c).unwrap(), "", &mut all);
            for k in all {
                assert!(help.contains(&format!("  {k} ")), "help misses {k}");
            }
        }
    }
}
