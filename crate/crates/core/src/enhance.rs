//! Whole-image enhancement: speckle-reducing anisotropic diffusion (SRAD)
//! followed by contrast-limited adaptive histogram equalization (CLAHE).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgio::{GrayImage, Rect};

#[derive(Debug, Error, PartialEq)]
pub enum EnhanceError {
    #[error("SRAD time step must lie in (0, 0.25], got {0}")]
    InvalidTimeStep(f64),
    #[error("invalid enhancement parameter: {0}")]
    InvalidParameter(String),
    #[error("homogeneous region {region:?} exceeds the {width}x{height} image")]
    RegionOutOfBounds { region: Rect, width: usize, height: usize },
    #[error("{tiles_x}x{tiles_y} CLAHE tiles do not fit a {width}x{height} image")]
    TilesTooMany { tiles_x: usize, tiles_y: usize, width: usize, height: usize },
}

/// Offset added to normalized intensities so coefficient-of-variation terms
/// never divide by zero.
const SRAD_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SradParams {
    pub iterations: u32,
    pub time_step: f64,
    /// Decay rate of the speckle scale, `q0(t) = q0(0)·exp(−ρt)`.
    pub q0_decay_rho: f64,
    /// Region assumed speckle-only; sets `q0(0)` to its std/mean. Without
    /// it `q0(0) = 1`.
    #[serde(default)]
    pub homogeneous_region: Option<Rect>,
}

impl Default for SradParams {
    fn default() -> Self {
        Self { iterations: 100, time_step: 0.05, q0_decay_rho: 0.05, homogeneous_region: None }
    }
}

impl SradParams {
    pub fn validate(&self) -> Result<(), EnhanceError> {
        if !(self.time_step > 0.0 && self.time_step <= 0.25) {
            return Err(EnhanceError::InvalidTimeStep(self.time_step));
        }
        if !(self.q0_decay_rho >= 0.0 && self.q0_decay_rho.is_finite()) {
            return Err(EnhanceError::InvalidParameter(format!(
                "q0_decay_rho must be finite and >= 0, got {}",
                self.q0_decay_rho
            )));
        }
        Ok(())
    }
}

/// Mean and population standard deviation over `region`.
fn region_stats(values: &[f64], width: usize, region: Rect) -> (f64, f64) {
    let n = (region.width * region.height) as f64;
    let rows = || (region.y..region.y + region.height).map(|y| &values[y * width + region.x..][..region.width]);
    let mean = rows().flatten().sum::<f64>() / n;
    let var = rows().flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Diffusion coefficient for squared instantaneous variation `q2` against
/// speckle scale `q0_2`, clamped to [0, 1].
#[inline]
fn diffusion_coefficient(q2: f64, q0_2: f64) -> f64 {
    if !q2.is_finite() {
        return 0.0;
    }
    if q0_2 <= f64::MIN_POSITIVE {
        return if q2 <= q0_2 { 1.0 } else { 0.0 };
    }
    let c = 1.0 / (1.0 + (q2 - q0_2) / (q0_2 * (1.0 + q0_2)));
    if c.is_nan() {
        0.0
    } else {
        c.clamp(0.0, 1.0)
    }
}

/// Speckle-reducing anisotropic diffusion on the 4-neighbour lattice.
///
/// Explicit scheme `I ← I + (Δt/4)·div(c(q)∇I)` with replicated (mirror)
/// borders, on intensities `v/255 + 1e-6`; re-quantized by round-half-up.
pub fn srad(img: &GrayImage, params: &SradParams) -> Result<GrayImage, EnhanceError> {
    params.validate()?;
    let (w, h) = (img.width(), img.height());
    if let Some(r) = params.homogeneous_region {
        if r.width == 0 || r.height == 0 || r.x + r.width > w || r.y + r.height > h {
            return Err(EnhanceError::RegionOutOfBounds { region: r, width: w, height: h });
        }
    }
    if params.iterations == 0 {
        return Ok(img.clone());
    }

    let mut cur: Vec<f64> = img.pixels().iter().map(|&v| f64::from(v) / 255.0 + SRAD_EPSILON).collect();
    let mut next = vec![0.0; w * h];
    let mut coeff = vec![0.0; w * h];
    let q0_initial = match params.homogeneous_region {
        Some(r) => {
            let (mean, std) = region_stats(&cur, w, r);
            std / mean
        }
        None => 1.0,
    };
    let quarter_step = params.time_step / 4.0;

    for n in 0..params.iterations {
        let t = f64::from(n) * params.time_step;
        let q0 = q0_initial * (-params.q0_decay_rho * t).exp();
        let q0_2 = q0 * q0;
        let src = &cur;

        coeff.par_chunks_mut(w).enumerate().for_each(|(y, out)| {
            let up = y.saturating_sub(1);
            let down = (y + 1).min(h - 1);
            for x in 0..w {
                let i = src[y * w + x];
                let d_n = src[up * w + x] - i;
                let d_s = src[down * w + x] - i;
                let d_w = src[y * w + x.saturating_sub(1)] - i;
                let d_e = src[y * w + (x + 1).min(w - 1)] - i;
                let grad2 = (d_n * d_n + d_s * d_s + d_w * d_w + d_e * d_e) / (i * i);
                let lap = (d_n + d_s + d_w + d_e) / i;
                let num = 0.5 * grad2 - lap * lap / 16.0;
                let den = 1.0 + 0.25 * lap;
                let q2 = num / (den * den);
                out[x] = diffusion_coefficient(q2, q0_2);
            }
        });

        let c = &coeff;
        next.par_chunks_mut(w).enumerate().for_each(|(y, out)| {
            let up = y.saturating_sub(1);
            let down = (y + 1).min(h - 1);
            for x in 0..w {
                let k = y * w + x;
                let i = src[k];
                let right = y * w + (x + 1).min(w - 1);
                let below = down * w + x;
                let div = c[below] * (src[below] - i)
                    + c[k] * (src[up * w + x] - i)
                    + c[right] * (src[right] - i)
                    + c[k] * (src[y * w + x.saturating_sub(1)] - i);
                out[x] = i + quarter_step * div;
            }
        });
        std::mem::swap(&mut cur, &mut next);
    }

    let pixels = cur.iter().map(|&v| ((v - SRAD_EPSILON) * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8).collect();
    Ok(GrayImage::new(w, h, pixels).expect("dimensions preserved"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaheParams {
    /// Clip height as a multiple of the uniform bin height.
    pub clip_limit: f64,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub bins: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self { clip_limit: 2.0, tiles_x: 8, tiles_y: 8, bins: 256 }
    }
}

impl ClaheParams {
    pub fn validate(&self) -> Result<(), EnhanceError> {
        if !(self.clip_limit > 0.0 && self.clip_limit.is_finite()) {
            return Err(EnhanceError::InvalidParameter(format!(
                "clip_limit must be positive, got {}",
                self.clip_limit
            )));
        }
        if self.tiles_x == 0 || self.tiles_y == 0 {
            return Err(EnhanceError::InvalidParameter("tile counts must be at least 1".into()));
        }
        if !(2..=256).contains(&self.bins) {
            return Err(EnhanceError::InvalidParameter(format!("bins must lie in 2..=256, got {}", self.bins)));
        }
        Ok(())
    }
}

/// Splits `0..len` into `parts` contiguous spans; earlier spans take the
/// shorter share.
fn tile_bounds(len: usize, parts: usize) -> Vec<(usize, usize)> {
    (0..parts).map(|i| (i * len / parts, (i + 1) * len / parts)).collect()
}

/// Per-value output intensity for one tile.
fn tile_mapping(img: &GrayImage, xs: (usize, usize), ys: (usize, usize), params: &ClaheParams) -> [f64; 256] {
    let bins = params.bins;
    let bin_of = |v: u8| usize::from(v) * bins / 256;
    let mut hist = vec![0u64; bins];
    let mut seen = [false; 256];
    for row in img.rows().skip(ys.0).take(ys.1 - ys.0) {
        for &v in &row[xs.0..xs.1] {
            hist[bin_of(v)] += 1;
            seen[usize::from(v)] = true;
        }
    }

    let mut mapping = [0.0; 256];
    if seen.iter().filter(|&&s| s).count() == 1 {
        // a single-valued tile leaves its value where it is
        for (v, m) in mapping.iter_mut().enumerate() {
            *m = v as f64;
        }
        return mapping;
    }

    let area = ((xs.1 - xs.0) * (ys.1 - ys.0)) as f64;
    let clip = ((params.clip_limit * area / bins as f64).floor() as u64).max(1);
    let mut excess = 0u64;
    for h in hist.iter_mut() {
        if *h > clip {
            excess += *h - clip;
            *h = clip;
        }
    }
    let share = excess / bins as u64;
    for h in hist.iter_mut() {
        *h += share;
    }

    let total: u64 = hist.iter().sum();
    let mut lut = vec![0.0; bins];
    let mut cdf = 0u64;
    for (b, &h) in hist.iter().enumerate() {
        cdf += h;
        lut[b] = cdf as f64 * 255.0 / total as f64;
    }
    for (v, m) in mapping.iter_mut().enumerate() {
        *m = lut[bin_of(v as u8)];
    }
    mapping
}

/// For each coordinate: the two neighbouring tile indices and the weight of
/// the second, interpolating between tile centres.
fn interpolation_axis(len: usize, bounds: &[(usize, usize)]) -> Vec<(usize, usize, f64)> {
    let centers: Vec<f64> = bounds.iter().map(|&(a, b)| (a + b - 1) as f64 / 2.0).collect();
    let last = centers.len() - 1;
    (0..len)
        .map(|p| {
            let p = p as f64;
            if p <= centers[0] {
                (0, 0, 0.0)
            } else if p >= centers[last] {
                (last, last, 0.0)
            } else {
                let i = centers.iter().rposition(|&c| c <= p).unwrap_or(0);
                (i, i + 1, (p - centers[i]) / (centers[i + 1] - centers[i]))
            }
        })
        .collect()
}

/// Contrast-limited adaptive histogram equalization with bilinear blending
/// of the four surrounding tile mappings.
pub fn clahe(img: &GrayImage, params: &ClaheParams) -> Result<GrayImage, EnhanceError> {
    params.validate()?;
    let (w, h) = (img.width(), img.height());
    if params.tiles_x > w || params.tiles_y > h {
        return Err(EnhanceError::TilesTooMany {
            tiles_x: params.tiles_x,
            tiles_y: params.tiles_y,
            width: w,
            height: h,
        });
    }
    let bx = tile_bounds(w, params.tiles_x);
    let by = tile_bounds(h, params.tiles_y);
    let maps: Vec<[f64; 256]> = by
        .iter()
        .flat_map(|&ys| bx.iter().map(move |&xs| (xs, ys)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(xs, ys)| tile_mapping(img, xs, ys, params))
        .collect();
    let ax = interpolation_axis(w, &bx);
    let ay = interpolation_axis(h, &by);
    let tx = params.tiles_x;

    let mut pixels = vec![0u8; w * h];
    pixels.par_chunks_mut(w).enumerate().for_each(|(y, out)| {
        let (t0, t1, wy) = ay[y];
        let src = &img.pixels()[y * w..(y + 1) * w];
        for x in 0..w {
            let (s0, s1, wx) = ax[x];
            let v = usize::from(src[x]);
            let top = (1.0 - wx) * maps[t0 * tx + s0][v] + wx * maps[t0 * tx + s1][v];
            let bottom = (1.0 - wx) * maps[t1 * tx + s0][v] + wx * maps[t1 * tx + s1][v];
            out[x] = ((1.0 - wy) * top + wy * bottom).round().clamp(0.0, 255.0) as u8;
        }
    });
    Ok(GrayImage::new(w, h, pixels).expect("dimensions preserved"))
}

/// SRAD then CLAHE.
pub fn enhance(
    img: &GrayImage,
    srad_params: &SradParams,
    clahe_params: &ClaheParams,
) -> Result<GrayImage, EnhanceError> {
    clahe(&srad(img, srad_params)?, clahe_params)
}
