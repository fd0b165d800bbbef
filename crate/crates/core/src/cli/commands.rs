use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{RunConfig, SourceConfig};
use crate::descriptors::{ActivationStore, DescriptorSource, ImageRef, ToyEmbedder};
use crate::error::{MopError, Result};
use crate::eval::report::{
    load_labels, load_relevance, write_accuracy_csv, write_invariance_csv, write_query_ap_csv,
    write_retrieval_csv, AccuracyRow, RetrievalRow,
};
use crate::eval::{best_window, invariance_sweep, retrieve, svm_train, Compressor, SvmModel};
use crate::format::FeatureMatrix;
use crate::imaging::{read_pnm, resize_bilinear, write_pnm, ImageTensor};
use crate::patchgrid::Level;
use crate::pooling::{encode_patches, extract_patches, fingerprint_of, fit_pipeline, FeatureSet, MopPipelineModel};
use crate::synth::{generate, SynthConfig};

pub const MODEL_FILE: &str = "model.mopm";
pub const FEATURES_FILE: &str = "features.mopd";

/// A descriptor source together with the images it serves.
enum Loaded {
    Toy {
        embedder: ToyEmbedder,
        ids: Vec<String>,
        images: Vec<ImageTensor>,
    },
    Store {
        store: ActivationStore,
        ids: Vec<String>,
    },
}

impl Loaded {
    fn source(&self) -> &dyn DescriptorSource {
        match self {
            Loaded::Toy { embedder, .. } => embedder,
            Loaded::Store { store, .. } => store,
        }
    }

    fn ids(&self) -> &[String] {
        match self {
            Loaded::Toy { ids, .. } | Loaded::Store { ids, .. } => ids,
        }
    }

    fn image_ref(&self, i: usize) -> ImageRef<'_> {
        match self {
            Loaded::Toy { ids, images, .. } => ImageRef::new(&ids[i], &images[i]),
            Loaded::Store { ids, .. } => ImageRef::id_only(&ids[i]),
        }
    }

    fn images(&self, what: &str) -> Result<(&ToyEmbedder, &[ImageTensor])> {
        match self {
            Loaded::Toy { embedder, images, .. } => Ok((embedder, images)),
            Loaded::Store { .. } => Err(MopError::invalid(format!(
                "{what} needs pixels; configure a toy source with an images directory"
            ))),
        }
    }
}

fn source_tag(source: &SourceConfig) -> String {
    match source {
        SourceConfig::Toy { embedder, .. } => format!(
            "toy:{}",
            serde_json::to_string(embedder).expect("embedder config serializes")
        ),
        SourceConfig::Store { .. } => "store".into(),
    }
}

fn source_dim(cfg: &RunConfig) -> Result<usize> {
    match &cfg.source {
        SourceConfig::Toy { embedder, .. } => Ok(embedder.out_dim),
        SourceConfig::Store { matrix, .. } => Ok(FeatureMatrix::load(matrix)?.dim()),
    }
}

fn expected_fingerprint(cfg: &RunConfig) -> Result<String> {
    Ok(fingerprint_of(&cfg.pipeline, source_dim(cfg)?, &source_tag(&cfg.source)))
}

/// Images in file-name order; the id is the file stem.
pub fn load_image_dir(dir: &Path, frame: usize) -> Result<(Vec<String>, Vec<ImageTensor>)> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| MopError::NotFound(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("pgm" | "ppm" | "pnm")
            )
        })
        .collect();
    paths.sort();
    let ids = paths
        .iter()
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    let images = paths
        .par_iter()
        .map(|p| {
            let file = fs::File::open(p)
                .map_err(|e| MopError::NotFound(format!("cannot open {}: {e}", p.display())))?;
            let img = read_pnm(std::io::BufReader::new(file))?;
            if img.width() == frame && img.height() == frame {
                Ok(img)
            } else {
                resize_bilinear(&img, frame, frame)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ids, images))
}

fn load_source(cfg: &RunConfig) -> Result<Loaded> {
    match &cfg.source {
        SourceConfig::Toy { images_dir, embedder } => {
            let (ids, images) = load_image_dir(images_dir, cfg.pipeline.grid.frame)?;
            Ok(Loaded::Toy {
                embedder: ToyEmbedder::new(embedder.clone())?,
                ids,
                images,
            })
        }
        SourceConfig::Store { matrix, manifest } => {
            let store = ActivationStore::load(matrix, manifest)?;
            let ids = store.image_ids();
            Ok(Loaded::Store { store, ids })
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Train,
    Test,
}

/// Train/test membership per id. Without a split file every id is in both.
struct Split(Option<BTreeMap<String, String>>);

impl Split {
    fn load(cfg: &RunConfig) -> Result<Self> {
        let Some(path) = &cfg.split else {
            return Ok(Split(None));
        };
        let text = fs::read_to_string(path)
            .map_err(|e| MopError::NotFound(format!("cannot read split file {}: {e}", path.display())))?;
        let map: BTreeMap<String, String> = serde_json::from_str(&text)?;
        if let Some((id, v)) = map.iter().find(|(_, v)| *v != "train" && *v != "test") {
            return Err(MopError::invalid(format!(
                "split entry {id:?} is {v:?}, expected \"train\" or \"test\""
            )));
        }
        Ok(Split(Some(map)))
    }

    fn select(&self, ids: &[String], role: Role) -> Vec<usize> {
        let want = if role == Role::Train { "train" } else { "test" };
        (0..ids.len())
            .filter(|&i| match &self.0 {
                None => true,
                Some(m) => m.get(&ids[i]).map(String::as_str) == Some(want),
            })
            .collect()
    }
}

fn labels_for(cfg: &RunConfig, ids: &[String]) -> Result<Vec<String>> {
    let path = cfg
        .labels
        .as_ref()
        .ok_or_else(|| MopError::invalid("this command needs a labels file (config key \"labels\")"))?;
    let labels = load_labels(path)?;
    let missing: Vec<&String> = ids.iter().filter(|id| !labels.contains_key(*id)).collect();
    if !missing.is_empty() {
        return Err(MopError::invalid(format!(
            "{} of {} images have no label (first: {:?})",
            missing.len(),
            ids.len(),
            missing[0]
        )));
    }
    Ok(ids.iter().map(|id| labels[id].clone()).collect())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| MopError::InvalidArgument(format!("cannot create {}: {e}", dir.display())))
}

fn load_model(cfg: &RunConfig) -> Result<MopPipelineModel> {
    let path = cfg.out_dir.join(MODEL_FILE);
    let model = MopPipelineModel::load(&path)?;
    let expected = expected_fingerprint(cfg)?;
    if model.fingerprint() != expected {
        return Err(MopError::Mismatch(format!(
            "model {} was fitted with a different configuration (fingerprint {} vs {})",
            path.display(),
            &model.fingerprint()[..12],
            &expected[..12]
        )));
    }
    Ok(model)
}

#[derive(Serialize)]
struct FitReport {
    fingerprint: String,
    images: usize,
    descriptor_dim: usize,
    pipeline_seed: u64,
    blocks: Vec<FitBlock>,
}

#[derive(Serialize)]
struct FitBlock {
    block: String,
    patch_dim: usize,
    codebook_size: usize,
    pooled_dim: usize,
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let loaded = load_source(cfg)?;
    let split = Split::load(cfg)?;
    let train = split.select(loaded.ids(), Role::Train);
    if train.is_empty() {
        return Err(MopError::invalid("no training images"));
    }
    let levels = cfg.pipeline.strategy.levels();
    let patches = train
        .par_iter()
        .map(|&i| extract_patches(loaded.source(), loaded.image_ref(i), &cfg.pipeline.grid, levels))
        .collect::<Result<Vec<_>>>()?;
    let model = fit_pipeline(&patches, loaded.source().dim(), &source_tag(&cfg.source), &cfg.pipeline)?;
    ensure_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join(MODEL_FILE);
    model.save(&path)?;

    let mut blocks: Vec<FitBlock> = Level::ALL
        .iter()
        .filter_map(|&l| model.level_model(l).map(|m| (l.name().to_string(), m)))
        .chain(model.multiscale_model().map(|m| ("multi-scale".to_string(), m)))
        .map(|(block, m)| FitBlock {
            block,
            patch_dim: m.patch_pca.output_dim(),
            codebook_size: m.codebook.k(),
            pooled_dim: m.pooled_pca.output_dim(),
        })
        .collect();
    blocks.sort_by(|a, b| a.block.cmp(&b.block));
    let report = FitReport {
        fingerprint: model.fingerprint(),
        images: train.len(),
        descriptor_dim: model.descriptor_dim(),
        pipeline_seed: cfg.pipeline.seed,
        blocks,
    };
    write_json(&cfg.out_dir.join("fit_report.json"), &report)?;
    for b in &report.blocks {
        info!(
            "{}: patch PCA {}, k = {}, pooled PCA {}",
            b.block, b.patch_dim, b.codebook_size, b.pooled_dim
        );
    }
    println!(
        "fit: {} training images, model {} (fingerprint {})",
        train.len(),
        path.display(),
        &report.fingerprint[..12]
    );
    Ok(())
}

pub fn cmd_encode(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let loaded = load_source(cfg)?;
    let ids = loaded.ids();
    if ids.is_empty() {
        return Err(MopError::invalid("no images to encode"));
    }
    let strategy = &cfg.pipeline.strategy;
    let descriptors = (0..ids.len())
        .into_par_iter()
        .map(|i| {
            let p = extract_patches(loaded.source(), loaded.image_ref(i), &cfg.pipeline.grid, strategy.levels())?;
            encode_patches(&model, strategy, cfg.method, &p)
        })
        .collect::<Result<Vec<_>>>()?;
    let set = FeatureSet::from_descriptors(
        ids.to_vec(),
        &descriptors,
        model.layout(strategy, cfg.method)?,
        model.fingerprint(),
        cfg.method,
        strategy.clone(),
    )?;
    ensure_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join(FEATURES_FILE);
    set.save(&path)?;
    println!(
        "encode: {} rows of dim {} -> {}",
        set.len(),
        set.matrix.dim(),
        path.display()
    );
    Ok(())
}

fn load_features(cfg: &RunConfig) -> Result<FeatureSet> {
    FeatureSet::load_expecting(&cfg.out_dir.join(FEATURES_FILE), &expected_fingerprint(cfg)?)
}

fn subset(rows: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| rows[i].clone()).collect()
}

fn train_classifier(cfg: &RunConfig, rows: &[Vec<f64>], labels: &[String], train: &[usize]) -> Result<SvmModel> {
    if train.is_empty() {
        return Err(MopError::invalid("no training images in the split"));
    }
    let y: Vec<&str> = train.iter().map(|&i| labels[i].as_str()).collect();
    svm_train(&subset(rows, train), &y, &cfg.sgd)
}

pub fn cmd_classify(cfg: &RunConfig) -> Result<()> {
    let set = load_features(cfg)?;
    let ids = set.ids().to_vec();
    let labels = labels_for(cfg, &ids)?;
    let split = Split::load(cfg)?;
    let (train, test) = (split.select(&ids, Role::Train), split.select(&ids, Role::Test));
    if test.is_empty() {
        return Err(MopError::invalid("no test images in the split"));
    }
    let rows = set.rows_f64();
    let svm = train_classifier(cfg, &rows, &labels, &train)?;
    let test_labels: Vec<&str> = test.iter().map(|&i| labels[i].as_str()).collect();
    let accuracy = svm.accuracy(&subset(&rows, &test), &test_labels)?;
    ensure_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("svm.json"), &svm)?;
    let row = AccuracyRow {
        method: set.sidecar.method.name().into(),
        strategy: set.sidecar.strategy.kind_label().into(),
        levels: set.sidecar.strategy.levels_label(),
        dim: set.matrix.dim(),
        accuracy,
    };
    write_accuracy_csv(fs::File::create(cfg.out_dir.join("accuracy.csv"))?, std::slice::from_ref(&row))?;
    println!(
        "classify: accuracy {:.4} on {} test images ({}, {}, {}, dim {})",
        accuracy,
        test.len(),
        row.method,
        row.strategy,
        row.levels,
        row.dim
    );
    Ok(())
}

pub fn cmd_retrieve(cfg: &RunConfig) -> Result<()> {
    let set = load_features(cfg)?;
    let path = cfg
        .relevance
        .as_ref()
        .ok_or_else(|| MopError::invalid("retrieve needs a relevance file (config key \"relevance\")"))?;
    let relevance = load_relevance(path)?;
    let ids = set.ids().to_vec();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut rows = set.rows_f64();
    if let Some(c) = &cfg.compression {
        let comp = Compressor::fit(&rows, c.dim, c.whiten)?;
        rows = comp.apply_all(&rows)?;
    }
    let mut query_ids = Vec::new();
    let mut queries = Vec::new();
    for q in relevance.keys() {
        let i = *index
            .get(q.as_str())
            .ok_or_else(|| MopError::invalid(format!("query {q:?} has no encoded features")))?;
        query_ids.push(q.clone());
        queries.push(rows[i].clone());
    }
    let result = retrieve(&ids, &rows, &query_ids, &queries, &relevance)?;
    ensure_dir(&cfg.out_dir)?;
    let dim = rows[0].len();
    let row = RetrievalRow {
        method: set.sidecar.method.name().into(),
        strategy: set.sidecar.strategy.kind_label().into(),
        levels: set.sidecar.strategy.levels_label(),
        dim,
        map: result.mean_average_precision,
    };
    write_retrieval_csv(fs::File::create(cfg.out_dir.join("retrieval.csv"))?, &[row])?;
    write_query_ap_csv(fs::File::create(cfg.out_dir.join("retrieval_ap.csv"))?, &result)?;
    println!(
        "retrieve: mAP {:.4} over {} queries (dim {dim})",
        result.mean_average_precision,
        query_ids.len()
    );
    Ok(())
}

/// Encodes the training images, trains the classifier and returns what the
/// image-level studies need.
fn image_study(cfg: &RunConfig, what: &str) -> Result<(MopPipelineModel, Loaded, SvmModel, Vec<String>, Split)> {
    let model = load_model(cfg)?;
    let loaded = load_source(cfg)?;
    loaded.images(what)?;
    let ids = loaded.ids().to_vec();
    let labels = labels_for(cfg, &ids)?;
    let split = Split::load(cfg)?;
    let train = split.select(&ids, Role::Train);
    let strategy = &cfg.pipeline.strategy;
    let rows = train
        .par_iter()
        .map(|&i| {
            let p = extract_patches(loaded.source(), loaded.image_ref(i), &cfg.pipeline.grid, strategy.levels())?;
            Ok(encode_patches(&model, strategy, cfg.method, &p)?.values)
        })
        .collect::<Result<Vec<_>>>()?;
    let y: Vec<&str> = train.iter().map(|&i| labels[i].as_str()).collect();
    let svm = svm_train(&rows, &y, &cfg.sgd)?;
    Ok((model, loaded, svm, labels, split))
}

fn featurizer<'a>(
    cfg: &'a RunConfig,
    model: &'a MopPipelineModel,
    embedder: &'a ToyEmbedder,
) -> impl Fn(&ImageTensor) -> Result<Vec<f64>> + Sync + 'a {
    move |img: &ImageTensor| {
        let strategy = &cfg.pipeline.strategy;
        let p = extract_patches(embedder, ImageRef::new("", img), &cfg.pipeline.grid, strategy.levels())?;
        Ok(encode_patches(model, strategy, cfg.method, &p)?.values)
    }
}

pub fn cmd_invariance(cfg: &RunConfig) -> Result<()> {
    let (model, loaded, svm, labels, split) = image_study(cfg, "invariance")?;
    let (embedder, images) = loaded.images("invariance")?;
    let test = split.select(loaded.ids(), Role::Test);
    if test.is_empty() {
        return Err(MopError::invalid("no test images in the split"));
    }
    let test_images: Vec<ImageTensor> = test.iter().map(|&i| images[i].clone()).collect();
    let test_labels: Vec<&str> = test.iter().map(|&i| labels[i].as_str()).collect();
    let table = invariance_sweep(&svm, &test_images, &test_labels, &cfg.sweep, featurizer(cfg, &model, embedder))?;
    ensure_dir(&cfg.out_dir)?;
    write_invariance_csv(fs::File::create(cfg.out_dir.join("invariance.csv"))?, &table)?;
    let mean = if table.rows.is_empty() {
        table.baseline
    } else {
        table.rows.iter().map(|r| r.accuracy).sum::<f64>() / table.rows.len() as f64
    };
    println!(
        "invariance: baseline accuracy {:.4}, mean over {} cells {:.4}",
        table.baseline,
        table.rows.len(),
        mean
    );
    Ok(())
}

#[derive(Serialize)]
struct WindowRow<'a> {
    image_id: &'a str,
    class: &'a str,
    x: usize,
    y: usize,
    side: usize,
    score: f64,
}

pub fn cmd_windows(cfg: &RunConfig, only: &[String]) -> Result<()> {
    let (model, loaded, svm, labels, split) = image_study(cfg, "window search")?;
    let (embedder, images) = loaded.images("window search")?;
    let ids = loaded.ids();
    let chosen: Vec<usize> = if only.is_empty() {
        split.select(ids, Role::Test)
    } else {
        only.iter()
            .map(|id| {
                ids.iter()
                    .position(|x| x == id)
                    .ok_or_else(|| MopError::invalid(format!("unknown image {id:?}")))
            })
            .collect::<Result<_>>()?
    };
    let featurize = featurizer(cfg, &model, embedder);
    let mut hits = Vec::with_capacity(chosen.len());
    for &i in &chosen {
        let target = svm.class_index(&labels[i]).ok_or_else(|| {
            MopError::invalid(format!("class {:?} of {} was not seen in training", labels[i], ids[i]))
        })?;
        hits.push(best_window(&svm, &images[i], &cfg.windows.sides, cfg.windows.stride, target, &featurize)?);
    }
    ensure_dir(&cfg.out_dir)?;
    let mut w = csv::Writer::from_path(cfg.out_dir.join("windows.csv"))?;
    for (&i, h) in chosen.iter().zip(&hits) {
        w.serialize(WindowRow {
            image_id: &ids[i],
            class: &labels[i],
            x: h.window.x,
            y: h.window.y,
            side: h.window.side,
            score: h.score,
        })?;
    }
    w.flush()?;
    let per_image = hits.first().map_or(0, |h| h.windows_scored);
    println!("windows: {} images, {per_image} windows each", chosen.len());
    Ok(())
}

pub struct SynthArgs {
    pub classes: usize,
    pub per_class: usize,
    pub train_per_class: usize,
    pub seed: u64,
}

/// Writes a synthetic dataset with labels, split and a starter config.
pub fn cmd_synth(out: &Path, args: &SynthArgs) -> Result<()> {
    if args.train_per_class >= args.per_class {
        return Err(MopError::invalid(format!(
            "--train-per-class {} leaves no test images out of {}",
            args.train_per_class, args.per_class
        )));
    }
    let synth = SynthConfig {
        classes: args.classes,
        per_class: args.per_class,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let data = generate(&synth)?;
    let images_dir = out.join("images");
    ensure_dir(&images_dir)?;
    let mut labels = BTreeMap::new();
    let mut split = BTreeMap::new();
    for (n, d) in data.iter().enumerate() {
        let file = fs::File::create(images_dir.join(format!("{}.pgm", d.id)))?;
        write_pnm(&d.image, std::io::BufWriter::new(file))?;
        labels.insert(d.id.clone(), d.class.clone());
        let role = if n % args.per_class < args.train_per_class { "train" } else { "test" };
        split.insert(d.id.clone(), role.to_string());
    }
    write_json(&out.join("labels.json"), &labels)?;
    write_json(&out.join("split.json"), &split)?;
    let mut cfg: RunConfig = serde_json::from_str(r#"{"source": {"toy": {"images_dir": "images"}}}"#)?;
    cfg.pipeline.patch_dim = 32;
    cfg.pipeline.codebook_size = 16;
    cfg.pipeline.pooled_dim = 32;
    cfg.pipeline.seed = args.seed;
    cfg.sgd.seed = args.seed;
    cfg.labels = Some("labels.json".into());
    cfg.split = Some("split.json".into());
    cfg.out_dir = "run".into();
    fs::write(out.join("config.json"), cfg.to_json())?;
    println!("synth: {} images in {}", data.len(), images_dir.display());
    Ok(())
}
