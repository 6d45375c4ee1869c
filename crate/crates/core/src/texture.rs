//! Gray-level co-occurrence matrices and per-pixel Haralick texture maps.
//!
//! A texture map replaces every pixel with a descriptor of the GLCM built
//! over the `window_side × window_side` neighbourhood centred on it. The
//! image is reflect-padded (`dcb|abcd|cba`) by `window_side / 2` so the map
//! has the source dimensions.
//!
//! Two kernels produce the map. [`texture_map_naive`] rebuilds the GLCM of
//! every window from scratch. [`texture_map_sliding`] keeps the pair counts
//! of the current window and, when the window moves one column right,
//! removes the pairs whose first pixel sits in the leaving column and adds
//! those of the entering column. Both kernels evaluate descriptors from the
//! same integer counts through the same routine, so their outputs agree bit
//! for bit.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgio::GrayImage;
pub use crate::imgio::Rect;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextureError {
    #[error("quantization levels must lie in 2..=256, got {0}")]
    LevelsOutOfRange(usize),
    #[error("co-occurrence offset must not be (0, 0)")]
    ZeroOffset,
    #[error("GLCM region is empty")]
    EmptyRegion,
    #[error("GLCM region exceeds the {width}x{height} image")]
    RegionOutOfBounds { width: usize, height: usize },
    #[error("window side must be odd and at least 3, got {0}")]
    InvalidWindow(usize),
    #[error("a {width}x{height} image is too small to reflect-pad for a window of side {window_side}")]
    WindowTooLarge { window_side: usize, width: usize, height: usize },
    #[error("texture maps differ in size")]
    DimensionMismatch,
    #[error("malformed texture raster: {0}")]
    BadRaster(String),
}

/// Image whose samples are gray-level indices in `0..levels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedImage {
    width: usize,
    height: usize,
    levels: usize,
    values: Vec<u8>,
}

impl QuantizedImage {
    pub fn new(width: usize, height: usize, levels: usize, values: Vec<u8>) -> Result<Self, TextureError> {
        if !(2..=256).contains(&levels) {
            return Err(TextureError::LevelsOutOfRange(levels));
        }
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(TextureError::EmptyRegion);
        }
        if let Some(&v) = values.iter().find(|&&v| usize::from(v) >= levels) {
            return Err(TextureError::BadRaster(format!("value {v} not below {levels} levels")));
        }
        Ok(Self { width, height, levels, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    /// Reflect-pads by `pad` on every side without repeating the edge sample.
    /// Requires both dimensions ≥ 2.
    fn reflect_padded(&self, pad: usize) -> QuantizedImage {
        let pw = self.width + 2 * pad;
        let ph = self.height + 2 * pad;
        let mut values = Vec::with_capacity(pw * ph);
        for py in 0..ph {
            let sy = reflect_index(py as isize - pad as isize, self.height);
            let row = &self.values[sy * self.width..(sy + 1) * self.width];
            values.extend((0..pw).map(|px| row[reflect_index(px as isize - pad as isize, self.width)]));
        }
        QuantizedImage { width: pw, height: ph, levels: self.levels, values }
    }
}

/// Folds an out-of-range index back into `0..n` by mirror reflection about
/// the first and last samples. Any offset is valid; `n` must be ≥ 2.
fn reflect_index(i: isize, n: usize) -> usize {
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Maps intensity `v` to `floor(v * levels / 256)`.
pub fn quantize(img: &GrayImage, levels: usize) -> Result<QuantizedImage, TextureError> {
    if !(2..=256).contains(&levels) {
        return Err(TextureError::LevelsOutOfRange(levels));
    }
    let values = img.pixels().iter().map(|&v| (usize::from(v) * levels / 256) as u8).collect();
    Ok(QuantizedImage { width: img.width(), height: img.height(), levels, values })
}

/// Pixel displacement between the two members of a co-occurring pair.
/// `y` grows downward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Offset {
    dx: i32,
    dy: i32,
}

impl Offset {
    pub fn new(dx: i32, dy: i32) -> Result<Self, TextureError> {
        if dx == 0 && dy == 0 {
            return Err(TextureError::ZeroOffset);
        }
        Ok(Self { dx, dy })
    }

    pub fn dx(self) -> i32 {
        self.dx
    }

    pub fn dy(self) -> i32 {
        self.dy
    }
}

/// The four canonical GLCM directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Deg0,
    Deg45,
    Deg90,
    Deg135,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Deg0, Direction::Deg45, Direction::Deg90, Direction::Deg135];

    /// (d,0), (d,−d), (0,−d), (−d,−d) for 0°, 45°, 90°, 135°.
    pub fn offset(self, distance: u32) -> Result<Offset, TextureError> {
        let d = i32::try_from(distance).map_err(|_| TextureError::ZeroOffset)?;
        match self {
            Direction::Deg0 => Offset::new(d, 0),
            Direction::Deg45 => Offset::new(d, -d),
            Direction::Deg90 => Offset::new(0, -d),
            Direction::Deg135 => Offset::new(-d, -d),
        }
    }

    pub fn degrees(self) -> u32 {
        match self {
            Direction::Deg0 => 0,
            Direction::Deg45 => 45,
            Direction::Deg90 => 90,
            Direction::Deg135 => 135,
        }
    }
}

/// Normalized co-occurrence matrix for a single offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Glcm {
    levels: usize,
    counts: Vec<u32>,
    pair_count: u64,
    p: Vec<f64>,
}

impl Glcm {
    /// Builds from a row-major `levels × levels` count matrix.
    pub fn from_counts(levels: usize, counts: Vec<u32>) -> Result<Self, TextureError> {
        if !(2..=256).contains(&levels) {
            return Err(TextureError::LevelsOutOfRange(levels));
        }
        if counts.len() != levels * levels {
            return Err(TextureError::DimensionMismatch);
        }
        let pair_count: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        let p = counts.iter().map(|&c| probability(c, pair_count)).collect();
        Ok(Self { levels, counts, pair_count, p })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn pair_count(&self) -> u64 {
        self.pair_count
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Row-major probabilities `p(i, j)`.
    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.levels + j]
    }

    /// `C + Cᵀ`, i.e. each pair also counted in reverse order.
    pub fn symmetrized(&self) -> Glcm {
        let l = self.levels;
        let counts = (0..l * l).map(|k| self.counts[k] + self.counts[(k % l) * l + k / l]).collect();
        // cannot fail: levels and length are unchanged
        Glcm::from_counts(l, counts).expect("symmetrized GLCM keeps its shape")
    }
}

#[inline]
fn probability(count: u32, pair_count: u64) -> f64 {
    if pair_count == 0 {
        0.0
    } else {
        f64::from(count) / pair_count as f64
    }
}

/// Tallies ordered pairs `(q[x,y], q[x+dx,y+dy])` with both ends inside `region`.
pub fn glcm_window(q: &QuantizedImage, region: Rect, offset: Offset) -> Result<Glcm, TextureError> {
    if region.width == 0 || region.height == 0 {
        return Err(TextureError::EmptyRegion);
    }
    if region.x + region.width > q.width || region.y + region.height > q.height {
        return Err(TextureError::RegionOutOfBounds { width: q.width, height: q.height });
    }
    let l = q.levels;
    let mut counts = vec![0u32; l * l];
    if let Some((xs, ys)) = pair_starts(region, offset) {
        for y in ys {
            let y2 = (y as isize + offset.dy as isize) as usize;
            for x in xs.clone() {
                let x2 = (x as isize + offset.dx as isize) as usize;
                let i = usize::from(q.get(x, y));
                let j = usize::from(q.get(x2, y2));
                counts[i * l + j] += 1;
            }
        }
    }
    Glcm::from_counts(l, counts)
}

type Span = std::ops::Range<usize>;

/// Column and row ranges of first-pair members whose partner stays inside
/// `region`, or `None` when the offset does not fit.
fn pair_starts(region: Rect, offset: Offset) -> Option<(Span, Span)> {
    let (adx, ady) = (offset.dx.unsigned_abs() as usize, offset.dy.unsigned_abs() as usize);
    if adx >= region.width || ady >= region.height {
        return None;
    }
    let x0 = region.x + if offset.dx < 0 { adx } else { 0 };
    let y0 = region.y + if offset.dy < 0 { ady } else { 0 };
    Some((x0..x0 + region.width - adx, y0..y0 + region.height - ady))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Descriptor {
    /// Σ (i−j)² p(i,j)
    Contrast,
    /// −Σ p log₂ p
    Entropy,
    /// Angular second moment, Σ p²
    Asm,
    /// Inverse differential moment, Σ p / (1 + (i−j)²)
    Idm,
}

impl Descriptor {
    pub const ALL: [Descriptor; 4] = [Descriptor::Contrast, Descriptor::Entropy, Descriptor::Asm, Descriptor::Idm];
}

impl FromStr for Descriptor {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "contrast" => Ok(Descriptor::Contrast),
            "entropy" => Ok(Descriptor::Entropy),
            "asm" => Ok(Descriptor::Asm),
            "idm" => Ok(Descriptor::Idm),
            _ => Err(format!("unknown descriptor {s:?} (contrast, entropy, asm, idm)")),
        }
    }
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Descriptor::Contrast => "contrast",
            Descriptor::Entropy => "entropy",
            Descriptor::Asm => "asm",
            Descriptor::Idm => "idm",
        })
    }
}

/// Descriptor of the distribution `count / pair_count`, accumulated in
/// row-major order over non-empty cells. Every kernel funnels through here.
fn evaluate_counts(kind: Descriptor, levels: usize, counts: &[u32], pair_count: u64) -> f64 {
    if pair_count == 0 {
        return 0.0;
    }
    let mut acc = 0.0f64;
    for (k, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let p = probability(c, pair_count);
        let d = (k / levels).abs_diff(k % levels);
        let d2 = (d * d) as f64;
        match kind {
            Descriptor::Contrast => acc += d2 * p,
            Descriptor::Entropy => acc -= p * p.log2(),
            Descriptor::Asm => acc += p * p,
            Descriptor::Idm => acc += p / (1.0 + d2),
        }
    }
    acc
}

/// Haralick contrast, Σ (i−j)² p(i,j).
pub fn contrast(g: &Glcm) -> f64 {
    descriptor(g, Descriptor::Contrast)
}

pub fn descriptor(g: &Glcm, kind: Descriptor) -> f64 {
    evaluate_counts(kind, g.levels, &g.counts, g.pair_count)
}

/// Real-valued raster with the dimensions of its source image.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

const RASTER_MAGIC: &[u8; 4] = b"TXM1";

/// Min/max used to stretch a map onto 0..=255.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub min: f64,
    pub max: f64,
}

impl Scaling {
    pub fn to_sidecar(&self) -> String {
        format!("min {}\nmax {}\n", self.min, self.max)
    }
}

impl TextureMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, TextureError> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(TextureError::DimensionMismatch);
        }
        Ok(Self { width, height, values })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![0.0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// `TXM1`, width and height as u32, then the samples as f64, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.values.len());
        out.extend_from_slice(RASTER_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TextureError> {
        if bytes.len() < 12 || &bytes[..4] != RASTER_MAGIC {
            return Err(TextureError::BadRaster("missing TXM1 header".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let (width, height) = (word(4), word(8));
        let body = &bytes[12..];
        if body.len() != width * height * 8 {
            return Err(TextureError::BadRaster(format!(
                "expected {} sample bytes, found {}",
                width * height * 8,
                body.len()
            )));
        }
        let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::new(width, height, values)
    }

    /// Min-max stretch to 8 bits; a constant map becomes all zeros.
    pub fn to_normalized_gray(&self) -> (GrayImage, Scaling) {
        let (min, max) = self.min_max();
        let span = max - min;
        let pixels = self
            .values
            .iter()
            .map(|&v| if span > 0.0 { ((v - min) / span * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 })
            .collect();
        let img = GrayImage::new(self.width, self.height, pixels).expect("map dimensions are valid");
        (img, Scaling { min, max })
    }
}

/// Settings shared by both map kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapSpec {
    pub kind: Descriptor,
    pub window_side: usize,
    pub offset: Offset,
    /// Count every pair in both orders.
    pub symmetric: bool,
}

impl MapSpec {
    pub fn new(kind: Descriptor, window_side: usize, offset: Offset) -> Self {
        Self { kind, window_side, offset, symmetric: false }
    }

    fn validate(&self, q: &QuantizedImage) -> Result<usize, TextureError> {
        if self.window_side < 3 || self.window_side.is_multiple_of(2) {
            return Err(TextureError::InvalidWindow(self.window_side));
        }
        if q.width < 2 || q.height < 2 {
            return Err(TextureError::WindowTooLarge {
                window_side: self.window_side,
                width: q.width,
                height: q.height,
            });
        }
        Ok(self.window_side / 2)
    }
}

/// Reference kernel: one GLCM built from scratch per output pixel.
pub fn texture_map_naive(q: &QuantizedImage, spec: &MapSpec) -> Result<TextureMap, TextureError> {
    let pad = spec.validate(q)?;
    let padded = q.reflect_padded(pad);
    let w = spec.window_side;
    let mut values = Vec::with_capacity(q.width * q.height);
    for y in 0..q.height {
        for x in 0..q.width {
            let region = Rect { x, y, width: w, height: w };
            let mut g = glcm_window(&padded, region, spec.offset)?;
            if spec.symmetric {
                g = g.symmetrized();
            }
            values.push(descriptor(&g, spec.kind));
        }
    }
    TextureMap::new(q.width, q.height, values)
}

/// Incremental kernel; output is identical to [`texture_map_naive`].
///
/// Rows are independent and computed in parallel, each seeding its own
/// window counts at column 0.
pub fn texture_map_sliding(q: &QuantizedImage, spec: &MapSpec) -> Result<TextureMap, TextureError> {
    let pad = spec.validate(q)?;
    let padded = q.reflect_padded(pad);
    let mut map = TextureMap::zeros(q.width, q.height);
    let w = spec.window_side;
    let first = Rect { x: 0, y: 0, width: w, height: w };
    let Some((xs, ys)) = pair_starts(first, spec.offset) else {
        // no pair fits in a window: every GLCM is empty
        return Ok(map);
    };
    let l = q.levels;
    let (dx, dy) = (spec.offset.dx as isize, spec.offset.dy as isize);
    let pw = padded.width;
    let data = &padded.values;
    let pairs_per_window = (xs.len() * ys.len()) as u64 * if spec.symmetric { 2 } else { 1 };

    map.values.par_chunks_mut(q.width).enumerate().for_each(|(row, out)| {
        let mut counts = vec![0u32; l * l];
        let rows = ys.start + row..ys.end + row;
        let update_column = |counts: &mut [u32], col: usize, add: bool| {
            for y in rows.clone() {
                let a = usize::from(data[y * pw + col]);
                let b = usize::from(data[(y as isize + dy) as usize * pw + (col as isize + dx) as usize]);
                if add {
                    counts[a * l + b] += 1;
                    if spec.symmetric {
                        counts[b * l + a] += 1;
                    }
                } else {
                    counts[a * l + b] -= 1;
                    if spec.symmetric {
                        counts[b * l + a] -= 1;
                    }
                }
            }
        };
        for col in xs.clone() {
            update_column(&mut counts, col, true);
        }
        out[0] = evaluate_counts(spec.kind, l, &counts, pairs_per_window);
        for x in 1..out.len() {
            update_column(&mut counts, xs.start + x - 1, false);
            update_column(&mut counts, xs.end + x - 1, true);
            out[x] = evaluate_counts(spec.kind, l, &counts, pairs_per_window);
        }
    });
    Ok(map)
}

/// Elementwise sum of the four directional maps.
pub fn directional_sum(maps: &[TextureMap; 4]) -> Result<TextureMap, TextureError> {
    let (w, h) = (maps[0].width, maps[0].height);
    if maps.iter().any(|m| m.width != w || m.height != h) {
        return Err(TextureError::DimensionMismatch);
    }
    let values =
        (0..w * h).map(|k| maps[0].values[k] + maps[1].values[k] + maps[2].values[k] + maps[3].values[k]).collect();
    TextureMap::new(w, h, values)
}

/// One sliding-kernel map per direction, in [`Direction::ALL`] order.
pub fn directional_maps(
    q: &QuantizedImage,
    kind: Descriptor,
    window_side: usize,
    distance: u32,
    symmetric: bool,
) -> Result<[TextureMap; 4], TextureError> {
    let mut maps = Vec::with_capacity(4);
    for dir in Direction::ALL {
        let spec = MapSpec { kind, window_side, offset: dir.offset(distance)?, symmetric };
        maps.push(texture_map_sliding(q, &spec)?);
    }
    Ok(maps.try_into().expect("four directions"))
}
