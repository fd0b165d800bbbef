use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    average_pool, layout_from_lengths, max_pool, pool_level, vlad_pool_unreduced, Block,
    BlockSource, MopDescriptor, PoolingMethod, ScaleKind, ScaleStrategy,
};
use crate::descriptors::{Descriptor, DescriptorSource, ImageRef};
use crate::encoding::persist::{read_sections, write_sections, Section};
use crate::encoding::{kmeans_fit, l2_normalize, pca_fit, Codebook, KMeansConfig, PcaModel, VladConfig};
use crate::error::{MopError, Result};
use crate::patchgrid::{GridConfig, Level};

/// Hyperparameters of the full encoding recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub vlad: VladConfig,
    /// Patch descriptors are reduced to this many dimensions before VLAD.
    #[serde(default = "default_patch_dim")]
    pub patch_dim: usize,
    #[serde(default = "default_codebook_size")]
    pub codebook_size: usize,
    /// Output dimension of the PCA applied to each pooled VLAD vector.
    #[serde(default = "default_pooled_dim")]
    pub pooled_dim: usize,
    #[serde(default = "default_kmeans_iters")]
    pub kmeans_max_iters: usize,
    #[serde(default = "default_kmeans_tol")]
    pub kmeans_tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "ScaleStrategy::full")]
    pub strategy: ScaleStrategy,
}

fn default_patch_dim() -> usize {
    500
}

fn default_codebook_size() -> usize {
    100
}

fn default_pooled_dim() -> usize {
    4096
}

fn default_kmeans_iters() -> usize {
    100
}

fn default_kmeans_tol() -> f64 {
    1e-6
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            grid: GridConfig::default(),
            vlad: VladConfig::default(),
            patch_dim: default_patch_dim(),
            codebook_size: default_codebook_size(),
            pooled_dim: default_pooled_dim(),
            kmeans_max_iters: default_kmeans_iters(),
            kmeans_tol: default_kmeans_tol(),
            seed: 0,
            strategy: ScaleStrategy::full(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.vlad.validate()?;
        if self.patch_dim == 0 || self.codebook_size == 0 || self.pooled_dim == 0 {
            return Err(MopError::invalid(
                "patch_dim, codebook_size and pooled_dim must be positive",
            ));
        }
        if self.vlad.r > self.codebook_size {
            return Err(MopError::invalid(format!(
                "VLAD r = {} exceeds codebook size {}",
                self.vlad.r, self.codebook_size
            )));
        }
        Ok(())
    }

    /// Length of an unreduced VLAD vector: `codebook_size * patch_dim`.
    pub fn vlad_dim(&self) -> usize {
        self.codebook_size * self.patch_dim
    }

    /// Levels that need fitted VLAD models under the configured strategy.
    fn vlad_levels(&self) -> Vec<Level> {
        match self.strategy.kind() {
            ScaleKind::Concatenation => self
                .strategy
                .levels()
                .iter()
                .copied()
                .filter(|&l| l != Level::L1)
                .collect(),
            ScaleKind::MultiScale => Vec::new(),
        }
    }

    /// Block layout implied by the configuration alone, before any rank
    /// clamping at fit time.
    pub fn nominal_layout(&self, method: PoolingMethod, descriptor_dim: usize) -> Vec<Block> {
        layout(&self.strategy, method, descriptor_dim, |_| self.pooled_dim)
    }

    fn kmeans_config(&self, seed_offset: u64) -> KMeansConfig {
        KMeansConfig {
            k: self.codebook_size,
            seed: self.seed.wrapping_add(seed_offset),
            max_iters: self.kmeans_max_iters,
            tol: self.kmeans_tol,
        }
    }
}

fn layout(
    strategy: &ScaleStrategy,
    method: PoolingMethod,
    descriptor_dim: usize,
    mut pooled_dim: impl FnMut(Level) -> usize,
) -> Vec<Block> {
    match strategy.kind() {
        ScaleKind::Concatenation => {
            let parts: Vec<_> = strategy
                .levels()
                .iter()
                .map(|&l| {
                    let len = if l == Level::L1 || method != PoolingMethod::Vlad {
                        descriptor_dim
                    } else {
                        pooled_dim(l)
                    };
                    (BlockSource::Level(l), len)
                })
                .collect();
            layout_from_lengths(&parts)
        }
        ScaleKind::MultiScale => {
            let len = match method {
                // the level is a placeholder; the union has one model
                PoolingMethod::Vlad => pooled_dim(Level::L1),
                _ => descriptor_dim,
            };
            layout_from_lengths(&[(BlockSource::MultiScale, len)])
        }
    }
}

/// Fitted models of one VLAD-pooled level (or of the multi-scale union).
#[derive(Clone, Debug, PartialEq)]
pub struct LevelModel {
    pub patch_pca: PcaModel,
    pub codebook: Codebook,
    pub pooled_pca: PcaModel,
}

/// Every level's patch descriptors for one image, in grid order.
#[derive(Clone, Debug, Default)]
pub struct ImagePatches {
    levels: [Vec<Descriptor>; 3],
}

impl ImagePatches {
    pub fn new(levels: [Vec<Descriptor>; 3]) -> Self {
        ImagePatches { levels }
    }

    pub fn level(&self, level: Level) -> &[Descriptor] {
        &self.levels[level.index()]
    }

    pub fn level_mut(&mut self, level: Level) -> &mut Vec<Descriptor> {
        &mut self.levels[level.index()]
    }

    /// Concatenation of the given levels' patches in level order.
    pub fn union(&self, levels: &[Level]) -> Vec<&Descriptor> {
        levels.iter().flat_map(|&l| self.level(l)).collect()
    }
}

/// Queries `source` for every grid patch of the requested levels.
pub fn extract_patches(
    source: &dyn DescriptorSource,
    image: ImageRef<'_>,
    grid: &GridConfig,
    levels: &[Level],
) -> Result<ImagePatches> {
    let mut out = ImagePatches::default();
    for &level in levels {
        let specs = grid.grid(level)?;
        let descs = specs
            .iter()
            .map(|spec| {
                let d = source.descriptor_for(image, spec)?;
                if d.dim() != source.dim() {
                    return Err(MopError::Numerical(format!(
                        "descriptor source returned length {} for {spec:?}, expected {}",
                        d.dim(),
                        source.dim()
                    )));
                }
                Ok(d)
            })
            .collect::<Result<Vec<_>>>()?;
        *out.level_mut(level) = descs;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MopPipelineModel {
    config: PipelineConfig,
    descriptor_dim: usize,
    /// Free-form description of the descriptor source, part of the fingerprint.
    source_tag: String,
    levels: BTreeMap<Level, LevelModel>,
    multiscale: Option<LevelModel>,
}

/// Fits the per-level models from training images' patch descriptors.
///
/// Per level: patch PCA on all training patches of that level, a k-means
/// codebook on the reduced patches, then a pooled PCA on each training
/// image's normalized VLAD vector. The multi-scale strategy fits one model
/// on the union of the selected levels. The codebook of level `L` uses seed
/// `seed + L.index()`.
pub fn fit_pipeline(
    training: &[ImagePatches],
    descriptor_dim: usize,
    source_tag: &str,
    cfg: &PipelineConfig,
) -> Result<MopPipelineModel> {
    cfg.validate()?;
    let mut levels = BTreeMap::new();
    for level in cfg.vlad_levels() {
        let per_image: Vec<Vec<&Descriptor>> =
            training.iter().map(|t| t.level(level).iter().collect()).collect();
        let model = fit_level_model(&per_image, cfg, level.index() as u64, level.name())?;
        levels.insert(level, model);
    }
    let multiscale = if cfg.strategy.kind() == ScaleKind::MultiScale {
        let per_image: Vec<Vec<&Descriptor>> = training
            .iter()
            .map(|t| t.union(cfg.strategy.levels()))
            .collect();
        Some(fit_level_model(&per_image, cfg, 0, "multi-scale")?)
    } else {
        None
    };
    Ok(MopPipelineModel {
        config: cfg.clone(),
        descriptor_dim,
        source_tag: source_tag.to_string(),
        levels,
        multiscale,
    })
}

fn fit_level_model(
    per_image: &[Vec<&Descriptor>],
    cfg: &PipelineConfig,
    seed_offset: u64,
    stage: &str,
) -> Result<LevelModel> {
    let stage_err = |what: &str, e: MopError| match e {
        MopError::InvalidArgument(m) => MopError::InvalidArgument(format!("{stage} {what}: {m}")),
        MopError::Numerical(m) => MopError::Numerical(format!("{stage} {what}: {m}")),
        other => other,
    };
    let all: Vec<&[f64]> = per_image
        .iter()
        .flat_map(|v| v.iter().map(|d| d.values()))
        .collect();
    let patch_pca = pca_fit(&all, cfg.patch_dim).map_err(|e| stage_err("patch PCA", e))?;
    let reduced = all
        .par_iter()
        .map(|d| patch_pca.transform(d))
        .collect::<Result<Vec<_>>>()?;
    let fit = kmeans_fit(&reduced, &cfg.kmeans_config(seed_offset))
        .map_err(|e| stage_err("k-means", e))?;
    info!(
        "{stage}: patch PCA {} -> {}, codebook k = {} after {} iterations (inertia {:.6e})",
        patch_pca.input_dim(),
        patch_pca.output_dim(),
        fit.codebook.k(),
        fit.iterations(),
        fit.inertia()
    );
    let codebook = fit.codebook;
    let pooled = per_image
        .par_iter()
        .map(|patches| vlad_pool_unreduced(&cfg.vlad, &patch_pca, &codebook, patches))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| stage_err("VLAD", e))?;
    let pooled_pca = pca_fit(&pooled, cfg.pooled_dim).map_err(|e| stage_err("pooled PCA", e))?;
    info!(
        "{stage}: pooled PCA {} -> {}",
        pooled_pca.input_dim(),
        pooled_pca.output_dim()
    );
    Ok(LevelModel { patch_pca, codebook, pooled_pca })
}

impl MopPipelineModel {
    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn descriptor_dim(&self) -> usize {
        self.descriptor_dim
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn level_model(&self, level: Level) -> Option<&LevelModel> {
        self.levels.get(&level)
    }

    pub fn multiscale_model(&self) -> Option<&LevelModel> {
        self.multiscale.as_ref()
    }

    /// Replaces the fitted model used for one level (or the multi-scale
    /// union when `level` is `None`).
    pub fn set_level_model(&mut self, level: Option<Level>, model: LevelModel) {
        match level {
            Some(l) => {
                self.levels.insert(l, model);
            }
            None => self.multiscale = Some(model),
        }
    }

    /// SHA-256 over the configuration, descriptor dimension and source tag.
    pub fn fingerprint(&self) -> String {
        fingerprint_of(&self.config, self.descriptor_dim, &self.source_tag)
    }

    /// Layout produced by `encode_image` with this model.
    pub fn layout(&self, strategy: &ScaleStrategy, method: PoolingMethod) -> Result<Vec<Block>> {
        let mut missing = None;
        let blocks = layout(strategy, method, self.descriptor_dim, |l| {
            let m = match strategy.kind() {
                ScaleKind::Concatenation => self.levels.get(&l),
                ScaleKind::MultiScale => self.multiscale.as_ref(),
            };
            match m {
                Some(m) => m.pooled_pca.output_dim(),
                None => {
                    missing = Some(l);
                    0
                }
            }
        });
        if method == PoolingMethod::Vlad {
            if let Some(l) = missing {
                return Err(MopError::Mismatch(format!(
                    "no fitted VLAD model for {} under {} strategy",
                    l,
                    strategy.kind_label()
                )));
            }
        }
        Ok(blocks)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = ModelMeta {
            format: MODEL_FORMAT.into(),
            fingerprint: self.fingerprint(),
            descriptor_dim: self.descriptor_dim,
            source_tag: self.source_tag.clone(),
            config: self.config.clone(),
        };
        let mut sections = vec![Section::Meta {
            slot: 0,
            json: serde_json::to_string(&meta)?,
        }];
        let mut push = |base: u32, m: &LevelModel| {
            sections.push(Section::Pca { slot: base, model: m.patch_pca.clone() });
            sections.push(Section::Codebook { slot: base + 1, book: m.codebook.clone() });
            sections.push(Section::Pca { slot: base + 2, model: m.pooled_pca.clone() });
        };
        for (level, m) in &self.levels {
            push(slot_base(Some(*level)), m);
        }
        if let Some(m) = &self.multiscale {
            push(slot_base(None), m);
        }
        write_sections(BufWriter::new(File::create(path)?), &sections)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)
            .map_err(|e| MopError::NotFound(format!("cannot open model {}: {e}", path.display())))?;
        let sections = read_sections(BufReader::new(file))?;
        let mut meta: Option<ModelMeta> = None;
        let mut pcas = BTreeMap::new();
        let mut books = BTreeMap::new();
        for s in sections {
            match s {
                Section::Meta { json, .. } => meta = Some(serde_json::from_str(&json)?),
                Section::Pca { slot, model } => {
                    pcas.insert(slot, model);
                }
                Section::Codebook { slot, book } => {
                    books.insert(slot, book);
                }
            }
        }
        let meta = meta.ok_or_else(|| MopError::format("model file has no metadata section"))?;
        if meta.format != MODEL_FORMAT {
            return Err(MopError::format(format!("unexpected model format {:?}", meta.format)));
        }
        let mut take = |base: u32| -> Option<Result<LevelModel>> {
            let patch_pca = pcas.remove(&base)?;
            Some(
                match (books.remove(&(base + 1)), pcas.remove(&(base + 2))) {
                    (Some(codebook), Some(pooled_pca)) => Ok(LevelModel { patch_pca, codebook, pooled_pca }),
                    _ => Err(MopError::format(format!("incomplete level model at slot {base}"))),
                },
            )
        };
        let mut levels = BTreeMap::new();
        for level in Level::ALL {
            if let Some(m) = take(slot_base(Some(level))) {
                levels.insert(level, m?);
            }
        }
        let multiscale = take(slot_base(None)).transpose()?;
        let model = MopPipelineModel {
            config: meta.config,
            descriptor_dim: meta.descriptor_dim,
            source_tag: meta.source_tag,
            levels,
            multiscale,
        };
        if model.fingerprint() != meta.fingerprint {
            return Err(MopError::format("model fingerprint does not match its contents"));
        }
        Ok(model)
    }
}

const MODEL_FORMAT: &str = "mop-pipeline-v1";

fn slot_base(level: Option<Level>) -> u32 {
    match level {
        Some(l) => 16 * (l.index() as u32 + 1),
        None => 128,
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelMeta {
    format: String,
    fingerprint: String,
    descriptor_dim: usize,
    source_tag: String,
    config: PipelineConfig,
}

pub fn fingerprint_of(cfg: &PipelineConfig, descriptor_dim: usize, source_tag: &str) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    h.update(b"\n");
    h.update(descriptor_dim.to_le_bytes());
    h.update(source_tag.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Encodes one image into its final descriptor.
///
/// Concatenation pools each selected level separately; the level-1 block is
/// the raw global descriptor. Multi-scale pools the union of the selected
/// levels' patches into a single block. Every block is L2-normalized; an
/// all-zero block stays zero.
pub fn encode_image(
    model: &MopPipelineModel,
    strategy: &ScaleStrategy,
    method: PoolingMethod,
    source: &dyn DescriptorSource,
    image: ImageRef<'_>,
) -> Result<MopDescriptor> {
    if source.dim() != model.descriptor_dim {
        return Err(MopError::Mismatch(format!(
            "descriptor source has dim {}, model was fitted on {}",
            source.dim(),
            model.descriptor_dim
        )));
    }
    let patches = extract_patches(source, image, &model.config.grid, strategy.levels())?;
    encode_patches(model, strategy, method, &patches)
}

/// [`encode_image`] on descriptors that were already extracted.
pub fn encode_patches(
    model: &MopPipelineModel,
    strategy: &ScaleStrategy,
    method: PoolingMethod,
    patches: &ImagePatches,
) -> Result<MopDescriptor> {
    let mut layout = model.layout(strategy, method)?;
    let vlad = &model.config.vlad;
    let mut values = Vec::with_capacity(layout.iter().map(|b| b.length).sum());
    match strategy.kind() {
        ScaleKind::Concatenation => {
            for &level in strategy.levels() {
                let descs = patches.level(level);
                let block = if level == Level::L1 {
                    let global = descs.first().ok_or_else(|| {
                        MopError::invalid("level-1 block needs the global descriptor")
                    })?;
                    global.values().to_vec()
                } else {
                    pool_level(method, descs, model.levels.get(&level), vlad)?
                };
                values.extend(l2_normalize(block));
            }
        }
        ScaleKind::MultiScale => {
            let union = patches.union(strategy.levels());
            let pooled = match method {
                PoolingMethod::Average => average_pool(&union)?,
                PoolingMethod::Max => max_pool(&union)?,
                PoolingMethod::Vlad => pool_level(method, &union, model.multiscale.as_ref(), vlad)?,
            };
            values.extend(l2_normalize(pooled));
        }
    }
    if values.len() != layout.iter().map(|b| b.length).sum::<usize>() {
        return Err(MopError::Mismatch(format!(
            "encoded length {} does not match the model layout",
            values.len()
        )));
    }
    for b in &mut layout {
        b.zero = values[b.offset..b.offset + b.length].iter().all(|&v| v == 0.0);
    }
    Ok(MopDescriptor { values, layout })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::{ToyEmbedder, ToyEmbedderConfig};
    use crate::imaging::ImageTensor;

    fn full_size_defaults() -> PipelineConfig {
        PipelineConfig::default()
    }

    #[test]
    fn full_size_dimensions() {
        let cfg = full_size_defaults();
        assert_eq!(cfg.vlad_dim(), 50_000);
        let layout = cfg.nominal_layout(PoolingMethod::Vlad, 4096);
        assert_eq!(layout.iter().map(|b| b.length).sum::<usize>(), 12_288);
        let l1 = PipelineConfig {
            strategy: ScaleStrategy::concatenation(&[Level::L1]).unwrap(),
            ..full_size_defaults()
        };
        assert_eq!(l1.nominal_layout(PoolingMethod::Vlad, 4096)[0].length, 4096);
        let ms = PipelineConfig {
            strategy: ScaleStrategy::multi_scale(&Level::ALL).unwrap(),
            ..full_size_defaults()
        };
        assert_eq!(ms.nominal_layout(PoolingMethod::Vlad, 4096).len(), 1);
        assert_eq!(ms.nominal_layout(PoolingMethod::Average, 4096)[0].length, 4096);
        assert_eq!(cfg.nominal_layout(PoolingMethod::Max, 4096).iter().map(|b| b.length).sum::<usize>(), 3 * 4096);
    }

    fn toy_images(n: usize) -> Vec<ImageTensor> {
        (0..n)
            .map(|i| {
                ImageTensor::from_fn(64, 64, 1, |x, y, _| {
                    ((x * (i % 5 + 1) + y * (i % 3 + 2) + (x * y) % (i + 7)) % 256) as u8
                })
                .unwrap()
            })
            .collect()
    }

    fn small_config(strategy: ScaleStrategy) -> PipelineConfig {
        PipelineConfig {
            grid: GridConfig { frame: 64, level_sides: vec![64, 32, 16], stride: 8 },
            vlad: VladConfig { r: 2, sigma: 1.0, power_alpha: 0.5 },
            patch_dim: 6,
            codebook_size: 4,
            pooled_dim: 5,
            seed: 3,
            strategy,
            ..PipelineConfig::default()
        }
    }

    fn fit_small(strategy: ScaleStrategy) -> (MopPipelineModel, ToyEmbedder, Vec<ImageTensor>) {
        let emb = ToyEmbedder::new(ToyEmbedderConfig { thumb_side: 8, out_dim: 12, projection_seed: 1 }).unwrap();
        let imgs = toy_images(12);
        let cfg = small_config(strategy);
        let patches: Vec<_> = imgs
            .iter()
            .enumerate()
            .map(|(i, img)| {
                let id = format!("img{i}");
                extract_patches(&emb, ImageRef::new(&id, img), &cfg.grid, &Level::ALL).unwrap()
            })
            .collect();
        let model = fit_pipeline(&patches, emb.dim(), "toy", &cfg).unwrap();
        (model, emb, imgs)
    }

    #[test]
    fn full_encoding_layout_and_norms() {
        let (model, emb, imgs) = fit_small(ScaleStrategy::full());
        let d = encode_image(&model, &ScaleStrategy::full(), PoolingMethod::Vlad, &emb, ImageRef::new("x", &imgs[0])).unwrap();
        assert_eq!(d.layout.len(), 3);
        assert_eq!(d.len(), 12 + 5 + 5);
        for i in 0..3 {
            let n: f64 = d.block(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        let total: f64 = d.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((total - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn level_one_is_normalized_global() {
        let (model, emb, imgs) = fit_small(ScaleStrategy::full());
        let only = ScaleStrategy::concatenation(&[Level::L1]).unwrap();
        let d = encode_image(&model, &only, PoolingMethod::Vlad, &emb, ImageRef::new("x", &imgs[1])).unwrap();
        let global = l2_normalize(emb.embed(&imgs[1]).unwrap().into_inner());
        assert_eq!(d.values, global);
        let avg = encode_image(&model, &only, PoolingMethod::Average, &emb, ImageRef::new("x", &imgs[1])).unwrap();
        assert_eq!(avg.values, global);
    }

    #[test]
    fn multiscale_single_level_matches_concatenation() {
        let (mut model, emb, imgs) = fit_small(ScaleStrategy::full());
        let l2 = model.level_model(Level::L2).unwrap().clone();
        model.set_level_model(None, l2);
        let img = ImageRef::new("x", &imgs[2]);
        for method in [PoolingMethod::Average, PoolingMethod::Max, PoolingMethod::Vlad] {
            let a = encode_image(&model, &ScaleStrategy::multi_scale(&[Level::L2]).unwrap(), method, &emb, img).unwrap();
            let b = encode_image(&model, &ScaleStrategy::concatenation(&[Level::L2]).unwrap(), method, &emb, img).unwrap();
            let diff = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12, "{method}: {diff}");
        }
    }

    #[test]
    fn multiscale_fit_has_one_block() {
        let s = ScaleStrategy::multi_scale(&Level::ALL).unwrap();
        let (model, emb, imgs) = fit_small(s.clone());
        assert!(model.level_model(Level::L2).is_none());
        let d = encode_image(&model, &s, PoolingMethod::Vlad, &emb, ImageRef::new("x", &imgs[0])).unwrap();
        assert_eq!(d.layout.len(), 1);
        assert_eq!(d.layout[0].source, BlockSource::MultiScale);
        assert!(encode_image(&model, &ScaleStrategy::full(), PoolingMethod::Vlad, &emb, ImageRef::new("x", &imgs[0])).is_err());
    }

    #[test]
    fn codebook_size_error_names_stage() {
        let emb = ToyEmbedder::new(ToyEmbedderConfig { thumb_side: 8, out_dim: 12, projection_seed: 1 }).unwrap();
        let imgs = toy_images(3);
        let mut cfg = small_config(ScaleStrategy::concatenation(&[Level::L2]).unwrap());
        cfg.grid = GridConfig { frame: 64, level_sides: vec![64, 32, 16], stride: 32 };
        cfg.codebook_size = 100;
        let patches: Vec<_> = imgs
            .iter()
            .map(|img| extract_patches(&emb, ImageRef::new("a", img), &cfg.grid, &Level::ALL).unwrap())
            .collect();
        // 3 images x 4 patches = 12 < 100
        match fit_pipeline(&patches, 12, "toy", &cfg) {
            Err(MopError::InvalidArgument(m)) => assert!(m.contains("level2") && m.contains("codebook: N < k"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn persisted_model_round_trips() {
        let (model, _, _) = fit_small(ScaleStrategy::full());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mopm");
        model.save(&p).unwrap();
        let back = MopPipelineModel::load(&p).unwrap();
        assert_eq!(back, model);
        let p2 = dir.path().join("m2.mopm");
        back.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
        // refit yields identical bytes
        let (again, _, _) = fit_small(ScaleStrategy::full());
        let p3 = dir.path().join("m3.mopm");
        again.save(&p3).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p3).unwrap());
    }

    #[test]
    fn full_rank_patch_pca_preserves_distances() {
        // D = 6 inputs and patch_dim = 6: projection onto the full basis
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| (0..6).map(|j| ((i * 7 + j * 3) % 11) as f64 + (j as f64) * 0.1 * i as f64).collect())
            .collect();
        let pca = pca_fit(&rows, 6).unwrap();
        let a = pca.transform(&rows[3]).unwrap();
        let b = pca.transform(&rows[17]).unwrap();
        let d_in: f64 = rows[3].iter().zip(&rows[17]).map(|(x, y)| (x - y).powi(2)).sum();
        let d_out: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
        assert!((d_in - d_out).abs() < 1e-9);
    }
}
