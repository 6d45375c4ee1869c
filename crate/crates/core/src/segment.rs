//! From a texture map to a mass mask and its outline.

use std::collections::VecDeque;
use std::fmt::Write as _;

use thiserror::Error;

use crate::imgio::GrayImage;
use crate::texture::TextureMap;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("map is constant; no threshold separates it")]
    DegenerateMap,
    #[error("percentile must lie in [0, 100], got {0}")]
    InvalidPercentile(f64),
    #[error("threshold must be finite, got {0}")]
    InvalidThreshold(f64),
    #[error("mask dimensions do not match")]
    DimensionMismatch,
}

#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "BinaryMask {}x{}", self.width, self.height)?;
        for row in self.bits.chunks(self.width) {
            let line: String = row.iter().map(|&b| if b { '#' } else { '.' }).collect();
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, SegmentError> {
        if bits.len() != width * height {
            return Err(SegmentError::DimensionMismatch);
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Out-of-range coordinates read as unset.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.get(x as usize, y as usize)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.contains(&true)
    }

    pub fn complement(&self) -> Self {
        Self { width: self.width, height: self.height, bits: self.bits.iter().map(|b| !b).collect() }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// 0/255 raster.
    pub fn to_gray(&self) -> GrayImage {
        let px = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        GrayImage::new(self.width, self.height, px).expect("mask dimensions are valid")
    }

    /// Non-zero pixels are set.
    pub fn from_gray(img: &GrayImage) -> Self {
        Self { width: img.width(), height: img.height(), bits: img.pixels().iter().map(|&v| v != 0).collect() }
    }

    /// Places this mask at `(offset_x, offset_y)` inside an otherwise empty
    /// `width × height` mask.
    pub fn embed(&self, width: usize, height: usize, offset_x: usize, offset_y: usize) -> Result<Self, SegmentError> {
        if offset_x + self.width > width || offset_y + self.height > height {
            return Err(SegmentError::DimensionMismatch);
        }
        let mut out = Self::empty(width, height);
        for y in 0..self.height {
            let dst = (offset_y + y) * width + offset_x;
            out.bits[dst..dst + self.width].copy_from_slice(&self.bits[y * self.width..(y + 1) * self.width]);
        }
        Ok(out)
    }

    /// Set pixels with an unset 4-neighbour or on the raster edge.
    pub fn is_boundary(&self, x: usize, y: usize) -> bool {
        if !self.get(x, y) {
            return false;
        }
        let (x, y) = (x as i64, y as i64);
        [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)].iter().any(|&(nx, ny)| !self.get_signed(nx, ny))
    }
}

/// Otsu's threshold over a 256-bin histogram of the min-max normalized map.
///
/// Returns a value in map units: the lower edge of the first foreground bin,
/// so `binarize(map, t)` reproduces the split. Ties go to the lower threshold.
pub fn otsu_threshold(map: &TextureMap) -> Result<f64, SegmentError> {
    let (min, max) = map.min_max();
    let span = max - min;
    if !(span > 0.0) || !span.is_finite() {
        return Err(SegmentError::DegenerateMap);
    }
    let mut hist = [0u64; 256];
    for &v in map.values() {
        hist[histogram_bin(v, min, span)] += 1;
    }
    let total = map.values().len() as f64;
    let weighted_total: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();

    let mut best = (f64::NEG_INFINITY, 0usize);
    let (mut w0, mut sum0) = (0.0, 0.0);
    for (k, &c) in hist.iter().enumerate().take(255) {
        w0 += c as f64;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let diff = sum0 / w0 - (weighted_total - sum0) / w1;
        let between = w0 * w1 * diff * diff;
        if between > best.0 {
            best = (between, k);
        }
    }
    Ok(min + (best.1 + 1) as f64 / 256.0 * span)
}

#[inline]
fn histogram_bin(v: f64, min: f64, span: f64) -> usize {
    (((v - min) / span * 256.0).floor() as usize).min(255)
}

/// Value at the given percentile (nearest rank on the sorted samples).
pub fn percentile_threshold(map: &TextureMap, percentile: f64) -> Result<f64, SegmentError> {
    if !(0.0..=100.0).contains(&percentile) {
        return Err(SegmentError::InvalidPercentile(percentile));
    }
    let mut sorted = map.values().to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Bit set where `value >= t`.
pub fn binarize(map: &TextureMap, t: f64) -> BinaryMask {
    BinaryMask { width: map.width(), height: map.height(), bits: map.values().iter().map(|&v| v >= t).collect() }
}

fn disk_offsets(radius: usize) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let disk = disk_offsets(radius);
    BinaryMask::from_fn(mask.width, mask.height, |x, y| {
        disk.iter().any(|&(dx, dy)| mask.get_signed(x as i64 + dx, y as i64 + dy))
    })
}

/// Pixels outside the raster count as set, so erosion never eats in from
/// the border.
pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let disk = disk_offsets(radius);
    let (w, h) = (mask.width as i64, mask.height as i64);
    BinaryMask::from_fn(mask.width, mask.height, |x, y| {
        disk.iter().all(|&(dx, dy)| {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            nx < 0 || ny < 0 || nx >= w || ny >= h || mask.get(nx as usize, ny as usize)
        })
    })
}

/// Morphological closing with a disk.
pub fn close(mask: &BinaryMask, radius: usize) -> BinaryMask {
    erode(&dilate(mask, radius), radius)
}

/// Sets every background pixel that cannot reach the raster border through
/// 4-connected background.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if (x == 0 || y == 0 || x == w - 1 || y == h - 1) && !mask.get(x, y) {
                outside[y * w + x] = true;
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        let mut visit = |nx: usize, ny: usize| {
            let k = ny * w + nx;
            if !mask.bits[k] && !outside[k] {
                outside[k] = true;
                queue.push_back((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y);
        }
        if x + 1 < w {
            visit(x + 1, y);
        }
        if y > 0 {
            visit(x, y - 1);
        }
        if y + 1 < h {
            visit(x, y + 1);
        }
    }
    BinaryMask { width: w, height: h, bits: outside.iter().map(|o| !o).collect() }
}

/// 8-connected component labels (0 = background, 1.. in raster order of
/// each component's first pixel) and the component count.
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, u32) {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(k) = stack.pop() {
            let (x, y) = ((k % w) as i64, (k / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if mask.get_signed(nx, ny) {
                        let n = ny as usize * w + nx as usize;
                        if labels[n] == 0 {
                            labels[n] = next;
                            stack.push(n);
                        }
                    }
                }
            }
        }
    }
    (labels, next)
}

/// Closing, optional hole filling, then the single 8-connected component
/// whose centroid lies nearest `center` (ties: first in raster order).
pub fn refine_mask(mask: &BinaryMask, center: (f64, f64), close_radius: usize, fill: bool) -> BinaryMask {
    if mask.is_empty() {
        return mask.clone();
    }
    let mut m = close(mask, close_radius);
    if fill {
        m = fill_holes(&m);
    }
    let (labels, n) = label_components(&m);
    if n == 0 {
        return BinaryMask::empty(m.width, m.height);
    }
    let mut sums = vec![(0.0f64, 0.0f64, 0u64); n as usize + 1];
    for (k, &l) in labels.iter().enumerate() {
        if l > 0 {
            let s = &mut sums[l as usize];
            s.0 += (k % m.width) as f64;
            s.1 += (k / m.width) as f64;
            s.2 += 1;
        }
    }
    let mut best = (f64::INFINITY, 0u32);
    for (l, &(sx, sy, c)) in sums.iter().enumerate().skip(1) {
        let (cx, cy) = (sx / c as f64, sy / c as f64);
        let d2 = (cx - center.0).powi(2) + (cy - center.1).powi(2);
        if d2 < best.0 {
            best = (d2, l as u32);
        }
    }
    BinaryMask { width: m.width, height: m.height, bits: labels.iter().map(|&l| l == best.1).collect() }
}

/// Closed outline of one component as pixel vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contour {
    pub points: Vec<(usize, usize)>,
}

/// Neighbour directions in clockwise order (y down), starting west.
const MOORE: [(i64, i64); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn moore_index(d: (i64, i64)) -> usize {
    MOORE.iter().position(|&m| m == d).expect("8-neighbour delta")
}

/// Moore-neighbour tracing from `start` (topmost-leftmost pixel of the
/// component, entered from the west). Stops when the walk is about to
/// repeat its first move; Jacob's rule alone loops on one-pixel-wide spurs
/// that re-enter the start from another side.
fn moore_trace(inside: impl Fn(i64, i64) -> bool, start: (i64, i64), max_steps: usize) -> Vec<(i64, i64)> {
    let mut points = vec![start];
    let (mut cur, mut back_dir) = (start, 0usize);
    for _ in 0..max_steps {
        let step = (1..=8).map(|i| (back_dir + i) % 8).find(|&d| inside(cur.0 + MOORE[d].0, cur.1 + MOORE[d].1));
        let Some(d) = step else {
            break;
        };
        let next = (cur.0 + MOORE[d].0, cur.1 + MOORE[d].1);
        if cur == start && points.len() > 1 && next == points[1] {
            points.pop();
            break;
        }
        let prev = MOORE[(d + 7) % 8];
        let back = (cur.0 + prev.0, cur.1 + prev.1);
        cur = next;
        back_dir = moore_index((back.0 - cur.0, back.1 - cur.1));
        points.push(cur);
    }
    points
}

/// Outer boundary of every 8-connected component, clockwise from its
/// topmost-leftmost pixel; contours are ordered by that start pixel.
///
/// Components too thin to give three traced vertices are outlined by the
/// pixel corners of their bounding box instead; a lone pixel becomes its
/// four-corner square.
pub fn trace_contour(mask: &BinaryMask) -> Vec<Contour> {
    let (labels, n) = label_components(mask);
    let w = mask.width;
    let mut firsts = vec![None; n as usize + 1];
    let mut sizes = vec![0usize; n as usize + 1];
    let mut boxes = vec![(usize::MAX, usize::MAX, 0usize, 0usize); n as usize + 1];
    for (k, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let (x, y) = (k % w, k / w);
        let l = l as usize;
        firsts[l].get_or_insert((x, y));
        sizes[l] += 1;
        let b = &mut boxes[l];
        *b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
    }
    (1..=n as usize)
        .map(|l| {
            let (sx, sy) = firsts[l].expect("labels are contiguous");
            let inside = |x: i64, y: i64| mask.get_signed(x, y) && labels[y as usize * w + x as usize] == l as u32;
            let traced = moore_trace(inside, (sx as i64, sy as i64), 4 * sizes[l] + 8);
            let points = if traced.len() >= 3 {
                traced.into_iter().map(|(x, y)| (x as usize, y as usize)).collect()
            } else {
                corner_outline(boxes[l])
            };
            Contour { points }
        })
        .collect()
}

/// Clockwise unit-step walk around the pixel corners of a bounding box.
fn corner_outline((x0, y0, x1, y1): (usize, usize, usize, usize)) -> Vec<(usize, usize)> {
    let (x1, y1) = (x1 + 1, y1 + 1);
    let mut pts = Vec::new();
    pts.extend((x0..x1).map(|x| (x, y0)));
    pts.extend((y0..y1).map(|y| (x1, y)));
    pts.extend((x0 + 1..=x1).rev().map(|x| (x, y1)));
    pts.extend((y0 + 1..=y1).rev().map(|y| (x0, y)));
    pts
}

/// One polygon per line: `x0,y0 x1,y1 ...`.
pub fn contours_to_text(contours: &[Contour]) -> String {
    let mut out = String::new();
    for c in contours {
        let line: Vec<String> = c.points.iter().map(|(x, y)| format!("{x},{y}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

/// Copy of `img` with the mask boundary burned in at 255.
pub fn overlay_boundary(img: &GrayImage, mask: &BinaryMask) -> Result<GrayImage, SegmentError> {
    if img.width() != mask.width || img.height() != mask.height {
        return Err(SegmentError::DimensionMismatch);
    }
    let mut out = img.clone();
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.is_boundary(x, y) {
                out.set(x, y, 255);
            }
        }
    }
    Ok(out)
}
