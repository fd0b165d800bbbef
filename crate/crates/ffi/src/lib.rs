//! C ABI over `mop-core`.
//!
//! Every function returns a [`MopStatus`]. On failure the message is kept
//! per thread and read with [`mop_last_error_message`]. Objects are opaque
//! handles created by `*_new`, `*_fit` or `*_load` and released with the
//! matching `*_free`. Functions that fill a caller buffer take its capacity
//! and always report the required length through `out_len`; a short buffer
//! yields `MOP_STATUS_BUFFER_TOO_SMALL` with nothing written.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use mop_core::descriptors::{ActivationStore, DescriptorSource, ImageRef, ToyEmbedder, ToyEmbedderConfig};
use mop_core::encoding::{kmeans_fit, normalize_chain, pca_fit, vlad_encode, Codebook, KMeansConfig, PcaModel, VladConfig};
use mop_core::eval::{average_precision_from_hits, mean_average_precision};
use mop_core::imaging::ImageTensor;
use mop_core::patchgrid::{per_axis, sliding_windows};
use mop_core::pooling::{encode_patches, extract_patches, MopPipelineModel, PoolingMethod};
use mop_core::MopError;

/// Result of every call. Values 2 to 4 match the `mop` exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MopStatus {
    Ok = 0,
    InvalidArgument = 2,
    Mismatch = 3,
    Numerical = 4,
    NotFound = 5,
    Format = 6,
    Io = 7,
    NullPointer = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Pooling method codes accepted where a `method` argument is taken.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MopPoolingMethod {
    Average = 0,
    Max = 1,
    Vlad = 2,
}

pub struct MopPca(PcaModel);
pub struct MopCodebook(Codebook);
pub struct MopPipeline(MopPipelineModel);
pub struct MopStore(ActivationStore);
pub struct MopToyEmbedder(ToyEmbedder);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &MopError) -> MopStatus {
    match e {
        MopError::InvalidArgument(_) => MopStatus::InvalidArgument,
        MopError::NotFound(_) => MopStatus::NotFound,
        MopError::Format(_) | MopError::Json(_) | MopError::Csv(_) => MopStatus::Format,
        MopError::Mismatch(_) => MopStatus::Mismatch,
        MopError::Numerical(_) => MopStatus::Numerical,
        MopError::Io(_) => MopStatus::Io,
    }
}

enum Fail {
    Core(MopError),
    Null(&'static str),
    Short { needed: usize },
}

impl From<MopError> for Fail {
    fn from(e: MopError) -> Self {
        Fail::Core(e)
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail::Core(MopError::InvalidArgument(msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MopStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MopStatus::Ok
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            MopStatus::NullPointer
        }
        Ok(Err(Fail::Short { needed })) => {
            set_error(&format!("output buffer too small: {needed} values needed"));
            MopStatus::BufferTooSmall
        }
        Err(_) => {
            set_error("internal panic");
            MopStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn path(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn store_out<T>(out: *mut *mut T, value: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out(values: &[f64], out: *mut f64, capacity: usize, out_len: *mut usize) -> Result<(), Fail> {
    if out_len.is_null() {
        return Err(Fail::Null("out_len"));
    }
    *out_len = values.len();
    if capacity < values.len() {
        return Err(Fail::Short { needed: values.len() });
    }
    if values.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn set<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    *out = value;
    Ok(())
}

fn rows(data: &[f64], n: usize, d: usize) -> Result<Vec<&[f64]>, Fail> {
    if d == 0 || n.checked_mul(d) != Some(data.len()) {
        return Err(invalid(format!("{} values do not form {n} rows of {d}", data.len())));
    }
    Ok(data.chunks_exact(d).collect())
}

fn method(code: i32) -> Result<PoolingMethod, Fail> {
    match code {
        0 => Ok(PoolingMethod::Average),
        1 => Ok(PoolingMethod::Max),
        2 => Ok(PoolingMethod::Vlad),
        _ => Err(invalid(format!("unknown pooling method code {code}"))),
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mop_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mop_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------- geometry

/// Number of patches of side `side` on a `frame` grid with `stride`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mop_grid_count(frame: usize, side: usize, stride: usize, out: *mut usize) -> MopStatus {
    guard(|| {
        if side == 0 || side > frame || stride == 0 {
            return Err(invalid(format!("side {side} / stride {stride} invalid for frame {frame}")));
        }
        let n = per_axis(frame, side, stride);
        set(out, n * n, "out")
    })
}

/// Number of sliding windows over all `sides`.
///
/// # Safety
/// `sides` must point to `n_sides` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn mop_sliding_window_count(
    frame: usize,
    sides: *const usize,
    n_sides: usize,
    stride: usize,
    out: *mut usize,
) -> MopStatus {
    guard(|| {
        let sides = input(sides, n_sides, "sides")?;
        set(out, sliding_windows(frame, sides, stride)?.len(), "out")
    })
}

// ---------------------------------------------------------------- PCA

/// Fits PCA on `n` row-major samples of dimension `d`.
///
/// # Safety
/// `samples` must point to `n * d` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn mop_pca_fit(
    samples: *const f64,
    n: usize,
    d: usize,
    d_out: usize,
    out: *mut *mut MopPca,
) -> MopStatus {
    guard(|| {
        let data = input(samples, n.saturating_mul(d), "samples")?;
        let model = pca_fit(&rows(data, n, d)?, d_out)?;
        store_out(out, MopPca(model), "out")
    })
}

/// # Safety
/// `pca` must come from `mop_pca_fit` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mop_pca_free(pca: *mut MopPca) {
    if !pca.is_null() {
        drop(Box::from_raw(pca));
    }
}

/// # Safety
/// Pointer arguments must be valid.
#[no_mangle]
pub unsafe extern "C" fn mop_pca_dims(pca: *const MopPca, input_dim: *mut usize, output_dim: *mut usize) -> MopStatus {
    guard(|| {
        let pca = handle(pca, "pca")?;
        set(input_dim, pca.0.input_dim(), "input_dim")?;
        set(output_dim, pca.0.output_dim(), "output_dim")
    })
}

/// Enables or disables whitening with the given epsilon.
///
/// # Safety
/// `pca` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mop_pca_set_whitening(pca: *mut MopPca, whiten: bool, epsilon: f64) -> MopStatus {
    guard(|| {
        let pca = pca.as_mut().ok_or(Fail::Null("pca"))?;
        if !(epsilon >= 0.0) {
            return Err(invalid("epsilon must be >= 0"));
        }
        pca.0 = pca.0.clone().with_whitening(whiten).with_epsilon(epsilon);
        Ok(())
    })
}

/// Projects one vector.
///
/// # Safety
/// `v` must point to `len` values, `out` to `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn mop_pca_transform(
    pca: *const MopPca,
    v: *const f64,
    len: usize,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> MopStatus {
    guard(|| {
        let pca = handle(pca, "pca")?;
        let y = pca.0.transform(input(v, len, "v")?)?;
        copy_out(&y, out, capacity, out_len)
    })
}

// ---------------------------------------------------------------- codebooks

/// k-means++ seeded Lloyd iterations on `n` row-major samples.
///
/// # Safety
/// `samples` must point to `n * d` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn mop_kmeans_fit(
    samples: *const f64,
    n: usize,
    d: usize,
    k: usize,
    seed: u64,
    max_iters: usize,
    out: *mut *mut MopCodebook,
) -> MopStatus {
    guard(|| {
        let data = input(samples, n.saturating_mul(d), "samples")?;
        let cfg = KMeansConfig { max_iters, ..KMeansConfig::new(k, seed) };
        let fit = kmeans_fit(&rows(data, n, d)?, &cfg)?;
        store_out(out, MopCodebook(fit.codebook), "out")
    })
}

/// Wraps `k` row-major centers of dimension `d`.
///
/// # Safety
/// `centers` must point to `k * d` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn mop_codebook_new(
    centers: *const f64,
    k: usize,
    d: usize,
    out: *mut *mut MopCodebook,
) -> MopStatus {
    guard(|| {
        let data = input(centers, k.saturating_mul(d), "centers")?;
        store_out(out, MopCodebook(Codebook::new(k, d, data.to_vec())?), "out")
    })
}

/// # Safety
/// `book` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mop_codebook_free(book: *mut MopCodebook) {
    if !book.is_null() {
        drop(Box::from_raw(book));
    }
}

/// Copies the centers out, row-major.
///
/// # Safety
/// Pointer arguments must be valid; `out` holds `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn mop_codebook_centers(
    book: *const MopCodebook,
    k: *mut usize,
    d: *mut usize,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> MopStatus {
    guard(|| {
        let book = handle(book, "book")?;
        set(k, book.0.k(), "k")?;
        set(d, book.0.dim(), "d")?;
        copy_out(book.0.centers(), out, capacity, out_len)
    })
}

/// Unnormalized soft-assignment VLAD of `n` patches against `book`.
///
/// # Safety
/// `patches` must point to `n * book.dim` values, `out` to `capacity`.
#[no_mangle]
pub unsafe extern "C" fn mop_vlad_encode(
    book: *const MopCodebook,
    r: usize,
    sigma: f64,
    patches: *const f64,
    n: usize,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> MopStatus {
    guard(|| {
        let book = handle(book, "book")?;
        let d = book.0.dim();
        let data = input(patches, n.saturating_mul(d), "patches")?;
        let cfg = VladConfig { r, sigma, ..VladConfig::default() };
        let v = vlad_encode(&cfg, &book.0, &rows(data, n, d)?)?;
        copy_out(&v, out, capacity, out_len)
    })
}

/// Signed power `alpha` then L2 normalization, in place.
///
/// # Safety
/// `v` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn mop_normalize(v: *mut f64, len: usize, alpha: f64) -> MopStatus {
    guard(|| {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(invalid(format!("alpha must be in (0, 1], got {alpha}")));
        }
        if len == 0 {
            return Ok(());
        }
        if v.is_null() {
            return Err(Fail::Null("v"));
        }
        let s = slice::from_raw_parts_mut(v, len);
        let out = normalize_chain(s, alpha);
        s.copy_from_slice(&out);
        Ok(())
    })
}

// ---------------------------------------------------------------- metrics

/// Average precision of a ranking given per-rank hit flags (nonzero =
/// relevant) and the size of the relevant set.
///
/// # Safety
/// `hits` must point to `n` bytes and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn mop_average_precision(
    hits: *const u8,
    n: usize,
    n_relevant: usize,
    out: *mut f64,
) -> MopStatus {
    guard(|| {
        let flags: Vec<bool> = input(hits, n, "hits")?.iter().map(|&h| h != 0).collect();
        set(out, average_precision_from_hits(&flags, n_relevant)?, "out")
    })
}

/// Mean of `n` average precisions.
///
/// # Safety
/// `aps` must point to `n` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn mop_mean_average_precision(aps: *const f64, n: usize, out: *mut f64) -> MopStatus {
    guard(|| set(out, mean_average_precision(input(aps, n, "aps")?)?, "out"))
}

// ---------------------------------------------------------------- pipeline

/// Loads a fitted pipeline model written by `mop fit`.
///
/// # Safety
/// `model_path` must be a NUL-terminated string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mop_pipeline_load(model_path: *const c_char, out: *mut *mut MopPipeline) -> MopStatus {
    guard(|| {
        let p = path(model_path, "model_path")?;
        store_out(out, MopPipeline(MopPipelineModel::load(&p)?), "out")
    })
}

/// # Safety
/// `pipeline` must come from `mop_pipeline_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mop_pipeline_free(pipeline: *mut MopPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Hex fingerprint as a NUL-terminated string; `capacity` must be at least
/// 65 bytes.
///
/// # Safety
/// `out` must point to `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mop_pipeline_fingerprint(
    pipeline: *const MopPipeline,
    out: *mut c_char,
    capacity: usize,
) -> MopStatus {
    guard(|| {
        let fp = handle(pipeline, "pipeline")?.0.fingerprint();
        if capacity < fp.len() + 1 {
            return Err(Fail::Short { needed: fp.len() + 1 });
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        ptr::copy_nonoverlapping(fp.as_ptr().cast(), out, fp.len());
        *out.add(fp.len()) = 0;
        Ok(())
    })
}

/// Descriptor length the model expects and the encoded length for `method`
/// under the model's configured strategy.
///
/// # Safety
/// Pointer arguments must be valid.
#[no_mangle]
pub unsafe extern "C" fn mop_pipeline_dims(
    pipeline: *const MopPipeline,
    method_code: i32,
    descriptor_dim: *mut usize,
    encoded_dim: *mut usize,
) -> MopStatus {
    guard(|| {
        let m = &handle(pipeline, "pipeline")?.0;
        let layout = m.layout(&m.config().strategy, method(method_code)?)?;
        set(descriptor_dim, m.descriptor_dim(), "descriptor_dim")?;
        set(encoded_dim, layout.iter().map(|b| b.length).sum(), "encoded_dim")
    })
}

fn encode_with(
    m: &MopPipelineModel,
    source: &dyn DescriptorSource,
    image: ImageRef<'_>,
    method_code: i32,
) -> Result<Vec<f64>, Fail> {
    if source.dim() != m.descriptor_dim() {
        return Err(Fail::Core(MopError::Mismatch(format!(
            "descriptor source has dim {}, model expects {}",
            source.dim(),
            m.descriptor_dim()
        ))));
    }
    let strategy = &m.config().strategy;
    let patches = extract_patches(source, image, &m.config().grid, strategy.levels())?;
    Ok(encode_patches(m, strategy, method(method_code)?, &patches)?.values)
}

/// Loads an activation store (MOPD matrix plus JSON manifest).
///
/// # Safety
/// Paths must be NUL-terminated strings and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mop_store_load(
    matrix_path: *const c_char,
    manifest_path: *const c_char,
    out: *mut *mut MopStore,
) -> MopStatus {
    guard(|| {
        let m = path(matrix_path, "matrix_path")?;
        let f = path(manifest_path, "manifest_path")?;
        store_out(out, MopStore(ActivationStore::load(&m, &f)?), "out")
    })
}

/// # Safety
/// `store` must come from `mop_store_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mop_store_free(store: *mut MopStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Encodes one stored image.
///
/// # Safety
/// `image_id` must be NUL-terminated; `out` holds `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn mop_pipeline_encode_stored(
    pipeline: *const MopPipeline,
    store: *const MopStore,
    image_id: *const c_char,
    method_code: i32,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> MopStatus {
    guard(|| {
        let m = &handle(pipeline, "pipeline")?.0;
        let store = &handle(store, "store")?.0;
        if image_id.is_null() {
            return Err(Fail::Null("image_id"));
        }
        let id = CStr::from_ptr(image_id)
            .to_str()
            .map_err(|_| invalid("image_id is not valid UTF-8"))?;
        let v = encode_with(m, store, ImageRef::id_only(id), method_code)?;
        copy_out(&v, out, capacity, out_len)
    })
}

/// Creates the random-projection toy embedder.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mop_toy_embedder_new(
    thumb_side: usize,
    out_dim: usize,
    projection_seed: u64,
    out: *mut *mut MopToyEmbedder,
) -> MopStatus {
    guard(|| {
        let e = ToyEmbedder::new(ToyEmbedderConfig { thumb_side, out_dim, projection_seed })?;
        store_out(out, MopToyEmbedder(e), "out")
    })
}

/// # Safety
/// `embedder` must come from `mop_toy_embedder_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mop_toy_embedder_free(embedder: *mut MopToyEmbedder) {
    if !embedder.is_null() {
        drop(Box::from_raw(embedder));
    }
}

/// Encodes an 8-bit interleaved image already in the model's normalized
/// frame (`width == height == frame`) using the toy embedder.
///
/// # Safety
/// `pixels` must point to `width * height * channels` bytes and `out` to
/// `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn mop_pipeline_encode_pixels(
    pipeline: *const MopPipeline,
    embedder: *const MopToyEmbedder,
    pixels: *const u8,
    width: usize,
    height: usize,
    channels: usize,
    method_code: i32,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> MopStatus {
    guard(|| {
        let m = &handle(pipeline, "pipeline")?.0;
        let e = &handle(embedder, "embedder")?.0;
        let n = width.saturating_mul(height).saturating_mul(channels);
        let img = ImageTensor::new(width, height, channels, input(pixels, n, "pixels")?.to_vec())?;
        let v = encode_with(m, e, ImageRef::new("", &img), method_code)?;
        copy_out(&v, out, capacity, out_len)
    })
}
