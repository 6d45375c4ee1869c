//! 8-bit PGM I/O, mini-MIAS annotation parsing and ROI cropping.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImgError {
    #[error("not a PGM stream (expected magic P5 or P2)")]
    BadMagic,
    #[error("PGM data truncated: {0}")]
    TruncatedData(String),
    #[error("PGM maxval {0} is not supported (only 8-bit rasters, maxval <= 255)")]
    MaxvalUnsupported(u32),
    #[error("malformed PGM header: {0}")]
    BadHeader(String),
    #[error("sample {value} at index {index} exceeds maxval {maxval}")]
    SampleOutOfRange { index: usize, value: u32, maxval: u32 },
    #[error("image dimensions must be at least 1x1 and match the pixel count")]
    BadDimensions,
    #[error("mias index line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("ROI center ({x}, {y}) lies outside the {width}x{height} image")]
    CenterOutOfBounds { x: i64, y: i64, width: usize, height: usize },
    #[error("invalid ROI: {0}")]
    InvalidRoi(String),
}

/// Axis-aligned pixel rectangle, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Row-major 8-bit single-channel raster.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GrayImage").field("width", &self.width).field("height", &self.height).finish_non_exhaustive()
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImgError> {
        if width == 0 || height == 0 || width.checked_mul(height) != Some(pixels.len()) {
            return Err(ImgError::BadDimensions);
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self, ImgError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self, ImgError> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, u8> {
        self.pixels.chunks_exact(self.width)
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' && self.bytes[self.pos] != b'\r' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn next_uint(&mut self, what: &str) -> Result<u32, ImgError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return if self.pos >= self.bytes.len() {
                Err(ImgError::TruncatedData(format!("missing {what}")))
            } else {
                Err(ImgError::BadHeader(format!("expected decimal {what}")))
            };
        }
        // the slice is all ASCII digits
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or_default();
        text.parse::<u32>().map_err(|_| ImgError::BadHeader(format!("{what} out of range")))
    }
}

/// Decodes a binary (P5) or ASCII (P2) 8-bit PGM stream.
///
/// Samples are returned exactly as stored; a maxval below 255 is not
/// rescaled.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, ImgError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(ImgError::BadMagic);
    }
    let binary = match bytes[1] {
        b'5' => true,
        b'2' => false,
        _ => return Err(ImgError::BadMagic),
    };
    let mut rd = HeaderReader { bytes, pos: 2 };
    let width = rd.next_uint("width")? as usize;
    let height = rd.next_uint("height")? as usize;
    let maxval = rd.next_uint("maxval")?;
    if maxval > 255 {
        return Err(ImgError::MaxvalUnsupported(maxval));
    }
    if maxval == 0 {
        return Err(ImgError::BadHeader("maxval must be positive".into()));
    }
    if width == 0 || height == 0 {
        return Err(ImgError::BadDimensions);
    }
    let count = width.checked_mul(height).ok_or_else(|| ImgError::BadHeader("dimensions overflow".into()))?;

    let pixels = if binary {
        // exactly one whitespace byte separates maxval from the raster
        match bytes.get(rd.pos) {
            Some(b) if b.is_ascii_whitespace() => rd.pos += 1,
            Some(_) => return Err(ImgError::BadHeader("missing whitespace after maxval".into())),
            None => return Err(ImgError::TruncatedData("no raster after header".into())),
        }
        let data = &bytes[rd.pos..];
        if data.len() < count {
            return Err(ImgError::TruncatedData(format!("expected {count} raster bytes, found {}", data.len())));
        }
        data[..count].to_vec()
    } else {
        let mut pixels = Vec::with_capacity(count);
        for index in 0..count {
            let value = rd.next_uint("sample")?;
            if value > maxval {
                return Err(ImgError::SampleOutOfRange { index, value, maxval });
            }
            pixels.push(value as u8);
        }
        pixels
    };
    if let Some((index, &v)) = pixels.iter().enumerate().find(|(_, &v)| u32::from(v) > maxval) {
        return Err(ImgError::SampleOutOfRange { index, value: v.into(), maxval });
    }
    GrayImage::new(width, height, pixels)
}

/// Encodes as canonical binary PGM: `P5\n<w> <h>\n255\n` followed by the raster.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + img.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&img.pixels);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tissue {
    /// Fatty
    F,
    /// Fatty-glandular
    G,
    /// Dense-glandular
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Abnormality {
    Calc,
    Circ,
    Spic,
    Misc,
    Arch,
    Asym,
    Norm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Severity {
    /// Benign
    B,
    /// Malignant
    M,
}

impl FromStr for Tissue {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "F" => Ok(Tissue::F),
            "G" => Ok(Tissue::G),
            "D" => Ok(Tissue::D),
            _ => Err(format!("unknown tissue class {s:?}")),
        }
    }
}

impl fmt::Display for Tissue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tissue::F => "F",
            Tissue::G => "G",
            Tissue::D => "D",
        })
    }
}

impl FromStr for Abnormality {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "CALC" => Abnormality::Calc,
            "CIRC" => Abnormality::Circ,
            "SPIC" => Abnormality::Spic,
            "MISC" => Abnormality::Misc,
            "ARCH" => Abnormality::Arch,
            "ASYM" => Abnormality::Asym,
            "NORM" => Abnormality::Norm,
            _ => return Err(format!("unknown abnormality class {s:?}")),
        })
    }
}

impl FromStr for Severity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "B" => Ok(Severity::B),
            "M" => Ok(Severity::M),
            _ => Err(format!("unknown severity {s:?}")),
        }
    }
}

/// Abnormality geometry in the info file's own frame (bottom-left origin).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiasGeometry {
    pub center_x: u32,
    pub center_y: u32,
    pub radius: u32,
}

/// One line of the mini-MIAS info file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiasRecord {
    pub ref_id: String,
    pub tissue: Tissue,
    pub abnormality: Abnormality,
    pub severity: Option<Severity>,
    pub geometry: Option<MiasGeometry>,
}

fn parse_mias_line(line: &str) -> Result<MiasRecord, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 3 {
        return Err(format!("expected at least 3 fields, found {}", fields.len()));
    }
    let ref_id = fields[0].to_string();
    let tissue: Tissue = fields[1].parse()?;
    let abnormality: Abnormality = fields[2].parse()?;
    let rest = &fields[3..];

    if abnormality == Abnormality::Norm {
        if !rest.is_empty() {
            return Err("NORM record carries extra fields".into());
        }
        return Ok(MiasRecord { ref_id, tissue, abnormality, severity: None, geometry: None });
    }

    let severity = match rest.first() {
        Some(s) => Some(s.parse::<Severity>()?),
        None => None,
    };
    let geometry = match rest.get(1..).unwrap_or(&[]) {
        [] => None,
        // free-text annotation notes in place of coordinates
        [note, ..] if note.starts_with('*') => None,
        [x, y, r] => {
            let num = |s: &str, what: &str| {
                s.parse::<u32>().map_err(|_| format!("{what} {s:?} is not a non-negative integer"))
            };
            let radius = num(r, "radius")?;
            if radius == 0 {
                return Err("radius must be positive".into());
            }
            Some(MiasGeometry { center_x: num(x, "x")?, center_y: num(y, "y")?, radius })
        }
        other => return Err(format!("expected x y radius, found {} fields", other.len())),
    };
    Ok(MiasRecord { ref_id, tissue, abnormality, severity, geometry })
}

/// Parses the mini-MIAS info file. Blank lines and `#` comments are skipped;
/// any malformed line fails the whole parse.
pub fn parse_mias_index(text: &str) -> Result<Vec<MiasRecord>, ImgError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
        .map(|(i, l)| parse_mias_line(l).map_err(|reason| ImgError::MalformedLine { line: i + 1, reason }))
        .collect()
}

/// Square crop request in image coordinates (top-left origin).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub center_x: i64,
    pub center_y: i64,
    pub radius: f64,
    pub margin_factor: f64,
}

pub const DEFAULT_MARGIN_FACTOR: f64 = 1.5;

impl RoiSpec {
    /// Converts an info-file annotation (bottom-left origin) to image
    /// coordinates: `y' = height - 1 - y`.
    pub fn from_mias(geometry: &MiasGeometry, image_height: usize, margin_factor: f64) -> Self {
        Self {
            center_x: i64::from(geometry.center_x),
            center_y: image_height as i64 - 1 - i64::from(geometry.center_y),
            radius: f64::from(geometry.radius),
            margin_factor,
        }
    }

    /// Half side of the crop before clamping.
    pub fn half_side(&self) -> i64 {
        (self.radius * self.margin_factor).round() as i64
    }
}

/// A crop together with its placement in the source image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roi {
    pub image: GrayImage,
    pub offset_x: usize,
    pub offset_y: usize,
}

/// Crops `[c - h, c + h)` on both axes, `h = round(radius * margin_factor)`,
/// clamped to the image.
pub fn extract_roi(img: &GrayImage, roi: &RoiSpec) -> Result<Roi, ImgError> {
    if !(roi.radius > 0.0) || !roi.radius.is_finite() {
        return Err(ImgError::InvalidRoi(format!("radius {} must be positive", roi.radius)));
    }
    if !(roi.margin_factor >= 1.0) || !roi.margin_factor.is_finite() {
        return Err(ImgError::InvalidRoi(format!("margin_factor {} must be >= 1", roi.margin_factor)));
    }
    let (w, h) = (img.width as i64, img.height as i64);
    if roi.center_x < 0 || roi.center_y < 0 || roi.center_x >= w || roi.center_y >= h {
        return Err(ImgError::CenterOutOfBounds {
            x: roi.center_x,
            y: roi.center_y,
            width: img.width,
            height: img.height,
        });
    }
    let half = roi.half_side().max(1);
    let x0 = (roi.center_x - half).clamp(0, w) as usize;
    let x1 = (roi.center_x + half).clamp(0, w) as usize;
    let y0 = (roi.center_y - half).clamp(0, h) as usize;
    let y1 = (roi.center_y + half).clamp(0, h) as usize;
    let mut pixels = Vec::with_capacity((x1 - x0) * (y1 - y0));
    for row in img.rows().skip(y0).take(y1 - y0) {
        pixels.extend_from_slice(&row[x0..x1]);
    }
    Ok(Roi { image: GrayImage::new(x1 - x0, y1 - y0, pixels)?, offset_x: x0, offset_y: y0 })
}
