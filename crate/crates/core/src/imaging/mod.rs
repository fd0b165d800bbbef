//! 8-bit raster images, bilinear resampling and the geometric transforms
//! used by the invariance study.
//!
//! Sampling convention: destination pixel `d` maps to source coordinate
//! `(d + 0.5) * in / out - 0.5`, clamped to the valid range. Interpolated
//! values are rounded half-up to the nearest byte.

mod pnm;

pub use pnm::{read_pnm, write_pnm};

use crate::error::{MopError, Result};

/// Side of the normalized frame every image is resampled to before patch
/// extraction.
pub const NORMALIZED_SIDE: usize = 256;

/// Fraction of the frame kept by a translation crop.
pub const TRANSLATION_CROP_FRACTION: f64 = 0.7;

/// Largest translation offset (pixels of the normalized frame) accepted.
pub const MAX_TRANSLATION: f64 = 40.0;

/// Largest absolute rotation angle in degrees.
pub const MAX_ROTATION_DEG: f64 = 20.0;

/// Row-major interleaved 8-bit raster with one (gray) or three (RGB) channels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ImageTensor {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ImageTensor {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(MopError::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(MopError::invalid(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(MopError::invalid(format!(
                "sample buffer has {} bytes, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        Ok(ImageTensor {
            width,
            height,
            channels,
            data,
        })
    }

    /// Image with every sample set to `value`.
    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds an image by evaluating `f(x, y, channel)` for every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Luma in `[0, 1]` per pixel, row-major. RGB uses 0.299/0.587/0.114.
    pub fn to_gray_unit(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for px in self.data.chunks_exact(self.channels) {
            let v = if self.channels == 1 {
                px[0] as f64
            } else {
                0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64
            };
            out.push(v / 255.0);
        }
        out
    }

    /// Bilinear sample at a fractional source coordinate, clamped to the
    /// image bounds. Returns the unrounded value.
    fn sample(&self, sx: f64, sy: f64, c: usize) -> f64 {
        let sx = sx.clamp(0.0, (self.width - 1) as f64);
        let sy = sy.clamp(0.0, (self.height - 1) as f64);
        let x0 = sx.floor() as usize;
        let y0 = sy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = sx - x0 as f64;
        let fy = sy - y0 as f64;
        let top = self.get(x0, y0, c) as f64 * (1.0 - fx) + self.get(x1, y0, c) as f64 * fx;
        let bottom = self.get(x0, y1, c) as f64 * (1.0 - fx) + self.get(x1, y1, c) as f64 * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

#[inline]
fn round_to_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

#[inline]
fn source_coord(dst: usize, in_len: usize, out_len: usize) -> f64 {
    ((dst as f64 + 0.5) * in_len as f64) / out_len as f64 - 0.5
}

pub fn resize_bilinear(img: &ImageTensor, out_w: usize, out_h: usize) -> Result<ImageTensor> {
    if out_w == 0 || out_h == 0 {
        return Err(MopError::invalid(format!(
            "resize target must be positive, got {out_w}x{out_h}"
        )));
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let xs: Vec<f64> = (0..out_w)
        .map(|x| source_coord(x, img.width, out_w))
        .collect();
    let ys: Vec<f64> = (0..out_h)
        .map(|y| source_coord(y, img.height, out_h))
        .collect();
    ImageTensor::from_fn(out_w, out_h, img.channels, |x, y, c| {
        round_to_u8(img.sample(xs[x], ys[y], c))
    })
}

/// Exact sub-rectangle copy.
pub fn crop(img: &ImageTensor, x: usize, y: usize, w: usize, h: usize) -> Result<ImageTensor> {
    if w == 0 || h == 0 || x + w > img.width || y + h > img.height {
        return Err(MopError::invalid(format!(
            "crop rectangle ({x}, {y}, {w}x{h}) outside {}x{} image",
            img.width, img.height
        )));
    }
    let ch = img.channels;
    let mut data = Vec::with_capacity(w * h * ch);
    for row in y..y + h {
        let start = (row * img.width + x) * ch;
        data.extend_from_slice(&img.data[start..start + w * ch]);
    }
    ImageTensor::new(w, h, ch, data)
}

/// Horizontal mirror.
pub fn flip_horizontal(img: &ImageTensor) -> ImageTensor {
    let ch = img.channels;
    let mut data = Vec::with_capacity(img.data.len());
    for row in img.data.chunks_exact(img.width * ch) {
        for px in row.chunks_exact(ch).rev() {
            data.extend_from_slice(px);
        }
    }
    ImageTensor {
        data,
        ..img.clone()
    }
}

/// Rotates about the image center by `degrees` with bilinear sampling.
/// Positive angles turn the content counter-clockwise on screen. Samples
/// falling outside the source are clamped to the nearest edge.
pub fn rotate(img: &ImageTensor, degrees: f64) -> ImageTensor {
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(img.data.len());
    for y in 0..img.height {
        let dy = y as f64 - cy;
        for x in 0..img.width {
            let dx = x as f64 - cx;
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            for c in 0..img.channels {
                data.push(round_to_u8(img.sample(sx, sy, c)));
            }
        }
    }
    ImageTensor {
        data,
        ..img.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Scale,
    TranslateH,
    TranslateV,
    Flip,
    Rotate,
}

impl TransformKind {
    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Scale => "scale",
            TransformKind::TranslateH => "translate_h",
            TransformKind::TranslateV => "translate_v",
            TransformKind::Flip => "flip",
            TransformKind::Rotate => "rotate",
        }
    }
}

/// One test-time transformation. The parameter is the scale ratio ρ for
/// `Scale`, a pixel offset in the normalized frame for translations, and
/// degrees for `Rotate`; it is ignored for `Flip`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub parameter: f64,
}

impl TransformSpec {
    pub fn new(kind: TransformKind, parameter: f64) -> Result<Self> {
        let spec = TransformSpec { kind, parameter };
        spec.validate()?;
        Ok(spec)
    }

    pub fn flip() -> Self {
        TransformSpec {
            kind: TransformKind::Flip,
            parameter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.parameter;
        if !p.is_finite() {
            return Err(MopError::invalid("transform parameter must be finite"));
        }
        match self.kind {
            TransformKind::Scale if p < 1.0 => Err(MopError::invalid(format!(
                "scale ratio must be >= 1, got {p}"
            ))),
            TransformKind::TranslateH | TransformKind::TranslateV if p.abs() > MAX_TRANSLATION => {
                Err(MopError::invalid(format!(
                    "translation {p} exceeds the +/-{MAX_TRANSLATION} pixel bound"
                )))
            }
            TransformKind::Rotate if p.abs() > MAX_ROTATION_DEG => Err(MopError::invalid(format!(
                "rotation {p} exceeds the +/-{MAX_ROTATION_DEG} degree bound"
            ))),
            _ => Ok(()),
        }
    }

    /// True when `apply_transform` returns its input unchanged.
    pub fn is_identity(&self) -> bool {
        match self.kind {
            TransformKind::Scale => self.parameter == 1.0,
            TransformKind::Rotate => self.parameter == 0.0,
            // A zero translation still takes the 0.7 center crop.
            TransformKind::TranslateH | TransformKind::TranslateV | TransformKind::Flip => false,
        }
    }
}

/// Side of the crop used by translation transforms in a frame of side `n`.
pub fn translation_crop_side(n: usize) -> usize {
    (TRANSLATION_CROP_FRACTION * n as f64 + 0.5).floor() as usize
}

/// Side of the largest axis-aligned square inscribed in a frame of side `n`
/// rotated by `degrees`.
pub fn rotation_crop_side(n: usize, degrees: f64) -> usize {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let side = (n as f64 / (sin.abs() + cos.abs())).floor() as usize;
    side.clamp(1, n)
}

fn center_crop_resized(img: &ImageTensor, side: usize) -> Result<ImageTensor> {
    let n = img.width;
    let origin = (n - side) / 2;
    let cropped = crop(img, origin, origin, side, side)?;
    resize_bilinear(&cropped, n, n)
}

/// Applies one invariance-study transform to a square normalized frame and
/// returns an image of the same size.
///
/// Translation crops are 0.7 of the frame. Their origin starts at the
/// centered position plus the offset and is clamped to the frame, so the
/// outermost offsets saturate by a pixel or two at the border.
pub fn apply_transform(img: &ImageTensor, t: &TransformSpec) -> Result<ImageTensor> {
    if img.width != img.height {
        return Err(MopError::invalid(format!(
            "transforms expect a square normalized frame, got {}x{}",
            img.width, img.height
        )));
    }
    t.validate()?;
    let n = img.width;
    match t.kind {
        TransformKind::Scale => {
            let side = ((n as f64 / t.parameter).round() as usize).clamp(1, n);
            center_crop_resized(img, side)
        }
        TransformKind::TranslateH | TransformKind::TranslateV => {
            let side = translation_crop_side(n);
            let slack = (n - side) as i64;
            let centered = slack / 2;
            let shifted = (centered + t.parameter.round() as i64).clamp(0, slack) as usize;
            let (x, y) = if t.kind == TransformKind::TranslateH {
                (shifted, centered as usize)
            } else {
                (centered as usize, shifted)
            };
            let cropped = crop(img, x, y, side, side)?;
            resize_bilinear(&cropped, n, n)
        }
        TransformKind::Flip => Ok(flip_horizontal(img)),
        TransformKind::Rotate => {
            if t.parameter == 0.0 {
                return Ok(img.clone());
            }
            let rotated = rotate(img, t.parameter);
            center_crop_resized(&rotated, rotation_crop_side(n, t.parameter))
        }
    }
}

/// Center and four corner crops followed by their horizontal flips:
/// `[center, top-left, top-right, bottom-left, bottom-right, flip(center), ...]`.
pub fn ten_crop(img: &ImageTensor, crop_side: usize) -> Result<Vec<ImageTensor>> {
    if crop_side == 0 || crop_side > img.width || crop_side > img.height {
        return Err(MopError::invalid(format!(
            "ten-crop side {crop_side} does not fit a {}x{} image",
            img.width, img.height
        )));
    }
    let crops = ten_crop_origins(img.width, img.height, crop_side)
        .into_iter()
        .map(|(x, y)| crop(img, x, y, crop_side, crop_side))
        .collect::<Result<Vec<_>>>()?;
    let flipped: Vec<_> = crops.iter().map(flip_horizontal).collect();
    Ok(crops.into_iter().chain(flipped).collect())
}

/// Origins of the five unflipped ten-crop windows, in output order.
pub fn ten_crop_origins(width: usize, height: usize, side: usize) -> [(usize, usize); 5] {
    let (mx, my) = (width - side, height - side);
    [(mx / 2, my / 2), (0, 0), (mx, 0), (0, my), (mx, my)]
}
