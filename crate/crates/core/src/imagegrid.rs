//! Raster and scalar-field containers plus their on-disk formats.
//!
//! Images are read from binary PGM (`P5`) and PPM (`P6`) files with
//! `maxval` 255. Intermediate real-valued fields use a small raw format:
//!
//! ```text
//! b"F64F" | width: u32 LE | height: u32 LE | width*height f64 LE, row-major
//! ```
//!
//! Label maps are written as PGM with the region index stored in each byte.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const FIELD_MAGIC: &[u8; 4] = b"F64F";

/// Luma weights used for RGB to gray conversion.
pub const LUMA_WEIGHTS: [f64; 3] = [0.2989, 0.5870, 0.1140];

/// An `L`-channel 2D image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("image needs at least one channel".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "image data has {} values, expected {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("image contains non-finite values".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Interleave single-channel fields into one image.
    pub fn from_channels(fields: &[ScalarField]) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::InvalidArgument("no channels given".into()))?;
        let (w, h) = first.dims();
        if fields.iter().any(|f| f.dims() != (w, h)) {
            return Err(Error::Dimension("channel fields differ in size".into()));
        }
        let l = fields.len();
        let mut data = vec![0.0; w * h * l];
        for (j, f) in fields.iter().enumerate() {
            for (p, &v) in f.data().iter().enumerate() {
                data[p * l + j] = v;
            }
        }
        Self::new(w, h, l, data)
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

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Value of channel `c` at flat pixel index `p`.
    #[inline]
    pub fn at(&self, p: usize, c: usize) -> f64 {
        self.data[p * self.channels + c]
    }

    pub fn channel(&self, c: usize) -> ScalarField {
        let data = (0..self.pixel_count()).map(|p| self.at(p, c)).collect();
        ScalarField {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A real-valued field on the pixel grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "field data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("field contains non-finite values".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Build a field by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Wraps data that the caller guarantees has the right length.
    pub(crate) fn from_vec_unchecked(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }
}

/// Region index per pixel, each in `1..=phases`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    phases: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, phases: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Dimension(format!(
                "label map has {} entries, expected {}x{}",
                labels.len(),
                width,
                height
            )));
        }
        if phases == 0 || phases > u8::MAX as usize {
            return Err(Error::InvalidArgument(format!("unsupported phase count {phases}")));
        }
        if let Some(p) = labels.iter().position(|&l| l == 0 || l as usize > phases) {
            return Err(Error::InvalidArgument(format!(
                "label {} at pixel {} outside 1..={}",
                labels[p], p, phases
            )));
        }
        Ok(Self {
            width,
            height,
            phases,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Relabel with `perm[old - 1] = new`.
    pub fn relabel(&self, perm: &[usize]) -> Result<LabelMap> {
        if perm.len() != self.phases {
            return Err(Error::Dimension("permutation length differs from phase count".into()));
        }
        let labels = self.labels.iter().map(|&l| perm[l as usize - 1] as u8).collect();
        LabelMap::new(self.width, self.height, self.phases, labels)
    }
}

/// Map a pixel `(row, col)` onto `[-1, 1]^2`, returned as `(x1, x2)`.
///
/// `x1` follows the column index, `x2` the row index.
pub fn to_domain_coords(row: usize, col: usize, width: usize, height: usize) -> Result<(f64, f64)> {
    if width < 2 || height < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot normalize coordinates on a {width}x{height} grid"
        )));
    }
    if row >= height || col >= width {
        return Err(Error::InvalidArgument(format!(
            "pixel ({row}, {col}) outside {width}x{height} grid"
        )));
    }
    let x1 = -1.0 + 2.0 * col as f64 / (width - 1) as f64;
    let x2 = -1.0 + 2.0 * row as f64 / (height - 1) as f64;
    Ok((x1, x2))
}

pub fn to_gray(img: &RasterImage) -> Result<RasterImage> {
    if img.channels() != 3 {
        return Err(Error::InvalidArgument(format!(
            "gray conversion needs 3 channels, got {}",
            img.channels()
        )));
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|px| LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2])
        .collect();
    RasterImage::new(img.width(), img.height(), 1, data)
}

// ---------------------------------------------------------------------------
// PNM

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn read_number(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::parse(start, format!("{what} out of range")))
    }
}

/// Decode a binary PGM/PPM byte buffer.
pub fn decode_pnm(bytes: &[u8]) -> Result<RasterImage> {
    if bytes.len() < 2 {
        return Err(Error::parse(0, "missing magic number"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(Error::parse(0, "expected magic P5 or P6")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.read_number("width")?;
    let height = cur.read_number("height")?;
    cur.skip_whitespace_and_comments();
    let maxval_at = cur.pos;
    let maxval = cur.read_number("maxval")?;
    if maxval != 255 {
        return Err(Error::parse(maxval_at, format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::parse(2, "zero image dimension"));
    }
    match bytes.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::parse(cur.pos, "expected single whitespace before payload")),
    }
    let need = width * height * channels;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated payload: {} of {} bytes", payload.len(), need),
        ));
    }
    let data = payload[..need].iter().map(|&b| b as f64).collect();
    RasterImage::new(width, height, channels, data)
}

/// Encode 1- or 3-channel images; values are rounded and clamped to `[0, 255]`.
pub fn encode_pnm(img: &RasterImage) -> Result<Vec<u8>> {
    let magic = match img.channels() {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::InvalidArgument(format!(
                "PNM output supports 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8));
    Ok(out)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}

pub fn save_image(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(img)?).map_err(|e| Error::io(path, e))
}

pub fn save_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P5\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
    out.extend_from_slice(labels.labels());
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Load a label map written as PGM.
///
/// A value of 0 is read as the background region `phases`, so plain binary
/// masks (0/1) load as two-region maps. When `phases` is `None` it is taken
/// from the largest label present.
pub fn load_labels(path: impl AsRef<Path>, phases: Option<usize>) -> Result<LabelMap> {
    let img = load_image(path)?;
    if img.channels() != 1 {
        return Err(Error::InvalidArgument("label map must be single-channel PGM".into()));
    }
    let raw: Vec<u8> = img.data().iter().map(|&v| v as u8).collect();
    let max = raw.iter().copied().max().unwrap_or(0).max(1) as usize;
    let phases = phases.unwrap_or(if raw.contains(&0) { max.max(2) } else { max });
    let labels = raw
        .into_iter()
        .map(|l| if l == 0 { phases as u8 } else { l })
        .collect();
    LabelMap::new(img.width(), img.height(), phases, labels)
}

// ---------------------------------------------------------------------------
// F64F

pub fn encode_field(field: &ScalarField) -> Result<Vec<u8>> {
    let w = u32::try_from(field.width())
        .map_err(|_| Error::InvalidArgument("field width exceeds u32".into()))?;
    let h = u32::try_from(field.height())
        .map_err(|_| Error::InvalidArgument("field height exceeds u32".into()))?;
    let mut out = Vec::with_capacity(12 + 8 * field.len());
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    for v in field.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_field(bytes: &[u8]) -> Result<ScalarField> {
    if bytes.len() < 12 {
        return Err(Error::parse(bytes.len(), "truncated F64F header"));
    }
    if &bytes[..4] != FIELD_MAGIC {
        return Err(Error::parse(0, "magic mismatch, expected F64F"));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let need = 12 + 8 * w * h;
    if bytes.len() < need {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated F64F payload: expected {need} bytes"),
        ));
    }
    let data = bytes[12..need]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ScalarField::new(w, h, data)
}

pub fn save_field(field: &ScalarField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_field(field)?).map_err(|e| Error::io(path, e))
}

pub fn load_field(path: impl AsRef<Path>) -> Result<ScalarField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_field(&bytes)
}
