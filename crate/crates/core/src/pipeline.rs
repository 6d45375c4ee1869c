//! End-to-end flow: enhance the whole image, crop the ROI, compute the four
//! directional contrast maps and their sum, segment, and evaluate.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enhance::{self, ClaheParams, EnhanceError, SradParams};
use crate::evalmetrics::{self, EvalError, EvalReport, RocCurve};
use crate::imgio::{self, Abnormality, GrayImage, ImgError, MiasRecord, RoiSpec, Tissue};
use crate::segment::{self, BinaryMask, Contour, SegmentError};
use crate::texture::{self, Descriptor, Direction, MapSpec, Offset, TextureError, TextureMap};

/// Dataset-root fallback when no directory is given on the command line.
pub const MIAS_DIR_ENV: &str = "TEXTUREDGE_MIAS_DIR";

/// Index file names tried, in order, inside a dataset directory.
pub const INDEX_CANDIDATES: [&str; 4] = ["Info.txt", "info.txt", "Info", "mias_info.txt"];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("decoding {path}: {source}")]
    Decode { path: PathBuf, source: ImgError },
    #[error("reading index: {0}")]
    Index(ImgError),
    #[error("enhancement: {0}")]
    Enhance(#[from] EnhanceError),
    #[error("ROI extraction: {0}")]
    Roi(ImgError),
    #[error("texture: {0}")]
    Texture(#[from] TextureError),
    #[error("segmentation: {0}")]
    Segment(#[from] SegmentError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("{0} has no annotated abnormality to evaluate against")]
    NoGroundTruth(String),
    #[error("{0} has no annotated abnormality to centre a ROI on")]
    NoRoi(String),
    #[error("no image for {id} (looked for {path})")]
    MissingImage { id: String, path: PathBuf },
    #[error("no index record for {0}")]
    MissingRecord(String),
    #[error("no index file found in {0}")]
    MissingIndex(PathBuf),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("serializing output: {0}")]
    Serialize(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl PipelineError {
    /// Whether the failure comes from bad parameters rather than bad data.
    pub fn is_usage(&self) -> bool {
        matches!(self, PipelineError::Config(_))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlcmConfig {
    pub levels: usize,
    pub window_side: usize,
    pub distance: u32,
    pub symmetric: bool,
}

impl Default for GlcmConfig {
    fn default() -> Self {
        Self { levels: 8, window_side: 7, distance: 1, symmetric: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMethod {
    Otsu,
    Fixed(f64),
    Percentile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    pub threshold_method: ThresholdMethod,
    pub close_radius: usize,
    pub fill_holes: bool,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { threshold_method: ThresholdMethod::Otsu, close_radius: 3, fill_holes: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiConfig {
    pub margin_factor: f64,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self { margin_factor: imgio::DEFAULT_MARGIN_FACTOR }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub use_circle_proxy: bool,
    /// Score over the whole image instead of the ROI crop.
    #[serde(default)]
    pub full_image: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { use_circle_proxy: true, full_image: false }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub srad: SradParams,
    pub clahe: ClaheParams,
    pub glcm: GlcmConfig,
    pub segment: SegmentConfig,
    pub roi: RoiConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_json(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.srad.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.clahe.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let g = &self.glcm;
        if !(2..=256).contains(&g.levels) {
            return bad(format!("glcm.levels must lie in 2..=256, got {}", g.levels));
        }
        if g.window_side < 3 || g.window_side.is_multiple_of(2) {
            return bad(format!("glcm.window_side must be odd and >= 3, got {}", g.window_side));
        }
        if g.distance == 0 || g.distance > i32::MAX as u32 {
            return bad(format!("glcm.distance must be >= 1, got {}", g.distance));
        }
        match self.segment.threshold_method {
            ThresholdMethod::Fixed(t) if !t.is_finite() => return bad(format!("fixed threshold {t} is not finite")),
            ThresholdMethod::Percentile(p) if !(0.0..=100.0).contains(&p) => {
                return bad(format!("percentile {p} outside [0, 100]"))
            }
            _ => {}
        }
        if !(self.roi.margin_factor >= 1.0 && self.roi.margin_factor.is_finite()) {
            return bad(format!("roi.margin_factor must be >= 1, got {}", self.roi.margin_factor));
        }
        Ok(())
    }
}

/// Crop placement and annotation geometry in ROI coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiPlacement {
    pub offset_x: usize,
    pub offset_y: usize,
    pub width: usize,
    pub height: usize,
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
}

/// Everything one image produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub ref_id: String,
    pub tissue: Tissue,
    pub enhanced: GrayImage,
    pub roi: GrayImage,
    pub placement: RoiPlacement,
    /// 0°, 45°, 90°, 135°.
    pub direction_maps: [TextureMap; 4],
    pub sum_map: TextureMap,
    pub threshold: f64,
    pub mask: BinaryMask,
    pub contours: Vec<Contour>,
    pub truth: Option<BinaryMask>,
    pub roc: Option<RocCurve>,
    pub report: Option<EvalReport>,
}

/// Per-image summary written as `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct ImageReport<'a> {
    pub ref_id: &'a str,
    pub tissue: Tissue,
    pub roi: RoiPlacement,
    pub threshold: f64,
    pub mask_pixels: usize,
    pub contours: usize,
    pub eval: Option<&'a EvalReport>,
}

fn threshold_for(map: &TextureMap, method: ThresholdMethod) -> Result<f64, SegmentError> {
    match method {
        ThresholdMethod::Otsu => segment::otsu_threshold(map),
        ThresholdMethod::Fixed(t) if t.is_finite() => Ok(t),
        ThresholdMethod::Fixed(t) => Err(SegmentError::InvalidThreshold(t)),
        ThresholdMethod::Percentile(p) => segment::percentile_threshold(map, p),
    }
}

/// Runs every stage on an already-decoded image.
pub fn process(
    image: &GrayImage,
    record: &MiasRecord,
    config: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    let evaluate = config.eval.use_circle_proxy;
    let geometry = match record.geometry {
        Some(g) if record.abnormality != Abnormality::Norm => g,
        _ if evaluate => return Err(PipelineError::NoGroundTruth(record.ref_id.clone())),
        _ => return Err(PipelineError::NoRoi(record.ref_id.clone())),
    };

    let enhanced = enhance::enhance(image, &config.srad, &config.clahe)?;
    let spec = RoiSpec::from_mias(&geometry, image.height(), config.roi.margin_factor);
    let roi = imgio::extract_roi(&enhanced, &spec).map_err(PipelineError::Roi)?;
    let placement = RoiPlacement {
        offset_x: roi.offset_x,
        offset_y: roi.offset_y,
        width: roi.image.width(),
        height: roi.image.height(),
        center_x: (spec.center_x - roi.offset_x as i64) as f64,
        center_y: (spec.center_y - roi.offset_y as i64) as f64,
        radius: spec.radius,
    };

    let g = &config.glcm;
    let q = texture::quantize(&roi.image, g.levels)?;
    let direction_maps = texture::directional_maps(&q, Descriptor::Contrast, g.window_side, g.distance, g.symmetric)?;
    let sum_map = texture::directional_sum(&direction_maps)?;

    let threshold = threshold_for(&sum_map, config.segment.threshold_method)?;
    let raw = segment::binarize(&sum_map, threshold);
    let s = &config.segment;
    let mask = segment::refine_mask(&raw, (placement.center_x, placement.center_y), s.close_radius, s.fill_holes);
    let contours = segment::trace_contour(&mask);

    let (truth, roc, report) = if evaluate {
        let (t, r, rep) = evaluate_against_circle(&sum_map, &mask, &placement, image, config.eval.full_image)?;
        (Some(t), Some(r), Some(rep))
    } else {
        (None, None, None)
    };

    Ok(PipelineOutput {
        ref_id: record.ref_id.clone(),
        tissue: record.tissue,
        enhanced,
        roi: roi.image,
        placement,
        direction_maps,
        sum_map,
        threshold,
        mask,
        contours,
        truth,
        roc,
        report,
    })
}

/// Scores the mask against the annotation disk. Returns the ROI-sized truth
/// mask, the ROC of the sum map and the report.
fn evaluate_against_circle(
    sum_map: &TextureMap,
    mask: &BinaryMask,
    at: &RoiPlacement,
    image: &GrayImage,
    full_image: bool,
) -> Result<(BinaryMask, RocCurve, EvalReport), PipelineError> {
    let (cx, cy) = (at.center_x as i64, at.center_y as i64);
    let truth = evalmetrics::circle_mask(at.width, at.height, cx, cy, at.radius);
    let (counts, roc) = if full_image {
        let (w, h) = (image.width(), image.height());
        let full_truth = evalmetrics::circle_mask(w, h, cx + at.offset_x as i64, cy + at.offset_y as i64, at.radius);
        let full_pred = mask.embed(w, h, at.offset_x, at.offset_y)?;
        // pixels outside the crop were never scored: rank them lowest
        let floor = sum_map.min_max().0;
        let mut scores = vec![floor; w * h];
        for y in 0..at.height {
            let row = (at.offset_y + y) * w + at.offset_x;
            scores[row..row + at.width].copy_from_slice(&sum_map.values()[y * at.width..(y + 1) * at.width]);
        }
        let scores = TextureMap::new(w, h, scores)?;
        (evalmetrics::confusion(&full_pred, &full_truth)?, evalmetrics::roc_az(&scores, &full_truth, None)?)
    } else {
        (evalmetrics::confusion(mask, &truth)?, evalmetrics::roc_az(sum_map, &truth, None)?)
    };
    let mut report = evalmetrics::metrics(&counts);
    report.az = Some(roc.az);
    Ok((truth, roc, report))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// `<stem>.pgm` (min-max normalized) plus its `<stem>.scale.txt` sidecar.
pub fn write_map(dir: &Path, stem: &str, map: &TextureMap) -> Result<(), PipelineError> {
    let (img, scale) = map.to_normalized_gray();
    write(&dir.join(format!("{stem}.pgm")), imgio::encode_pgm(&img))?;
    write(&dir.join(format!("{stem}.scale.txt")), scale.to_sidecar())
}

impl PipelineOutput {
    /// Writes every artifact under `out_dir/<ref_id>/`; returns that directory.
    pub fn write_artifacts(&self, out_dir: &Path, config: &PipelineConfig) -> Result<PathBuf, PipelineError> {
        let dir = out_dir.join(&self.ref_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write(&dir.join("enhanced.pgm"), imgio::encode_pgm(&self.enhanced))?;
        write(&dir.join("roi.pgm"), imgio::encode_pgm(&self.roi))?;
        for (dir_kind, map) in Direction::ALL.iter().zip(&self.direction_maps) {
            write_map(&dir, &format!("contrast_{}", dir_kind.degrees()), map)?;
        }
        write_map(&dir, "contrast_sum", &self.sum_map)?;
        write(&dir.join("contrast_sum.f64"), self.sum_map.to_bytes())?;
        write(&dir.join("mask.pgm"), imgio::encode_pgm(&self.mask.to_gray()))?;
        write(&dir.join("contours.txt"), segment::contours_to_text(&self.contours))?;
        let overlay = segment::overlay_boundary(&self.roi, &self.mask)?;
        write(&dir.join("overlay.pgm"), imgio::encode_pgm(&overlay))?;
        if let Some(truth) = &self.truth {
            write(&dir.join("truth.pgm"), imgio::encode_pgm(&truth.to_gray()))?;
        }
        if let Some(roc) = &self.roc {
            write(&dir.join("roc.csv"), roc.to_csv())?;
        }
        let summary = ImageReport {
            ref_id: &self.ref_id,
            tissue: self.tissue,
            roi: self.placement,
            threshold: self.threshold,
            mask_pixels: self.mask.count(),
            contours: self.contours.len(),
            eval: self.report.as_ref(),
        };
        let json = serde_json::to_string_pretty(&summary).map_err(|e| PipelineError::Serialize(e.to_string()))?;
        write(&dir.join("report.json"), json + "\n")?;
        write(&dir.join("config.json"), config.to_json() + "\n")?;
        Ok(dir)
    }
}

pub fn read_image(path: &Path) -> Result<GrayImage, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    imgio::decode_pgm(&bytes).map_err(|source| PipelineError::Decode { path: path.to_path_buf(), source })
}

/// Decodes `image_path`, runs every stage and writes the artifacts.
pub fn run_pipeline(
    image_path: &Path,
    record: &MiasRecord,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<PipelineOutput, PipelineError> {
    let image = read_image(image_path)?;
    let output = process(&image, record, config)?;
    output.write_artifacts(out_dir, config)?;
    Ok(output)
}

/// A mini-MIAS style directory: `<id>.pgm` rasters plus an info file.
#[derive(Debug, Clone)]
pub struct MiasDataset {
    pub root: PathBuf,
    pub records: Vec<MiasRecord>,
}

impl MiasDataset {
    /// Opens `root`, reading `index` or the first of [`INDEX_CANDIDATES`].
    pub fn open(root: &Path, index: Option<&Path>) -> Result<Self, PipelineError> {
        let index_path = match index {
            Some(p) => p.to_path_buf(),
            None => INDEX_CANDIDATES
                .iter()
                .map(|n| root.join(n))
                .find(|p| p.is_file())
                .ok_or_else(|| PipelineError::MissingIndex(root.to_path_buf()))?,
        };
        let text = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
        let records = imgio::parse_mias_index(&text).map_err(PipelineError::Index)?;
        Ok(Self { root: root.to_path_buf(), records })
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.pgm"))
    }

    /// First record for `id` carrying geometry, else its first record.
    /// Images annotated with several abnormalities list one line each.
    pub fn record(&self, id: &str) -> Option<&MiasRecord> {
        let mut matching = self.records.iter().filter(|r| r.ref_id == id);
        let first = matching.clone().next()?;
        Some(matching.find(|r| r.geometry.is_some()).unwrap_or(first))
    }
}

/// One CSV / JSON-lines row of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub ref_id: String,
    pub tissue: Tissue,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f_measure: f64,
    pub az: Option<f64>,
}

impl ReportRow {
    pub fn new(ref_id: &str, tissue: Tissue, r: &EvalReport) -> Self {
        Self {
            ref_id: ref_id.to_string(),
            tissue,
            tp: r.counts.tp,
            fp: r.counts.fp,
            fn_: r.counts.fn_,
            tn: r.counts.tn,
            dice: r.dice,
            precision: r.precision,
            recall: r.recall,
            specificity: r.specificity,
            f_measure: r.f_measure,
            az: r.az,
        }
    }
}

/// Per-tissue means over an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueAggregate {
    pub tissue: Tissue,
    pub images: usize,
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f_measure: f64,
    pub az: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    /// Sorted by `ref_id`.
    pub rows: Vec<ReportRow>,
    /// Sorted by tissue letter.
    pub aggregates: Vec<TissueAggregate>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl ExperimentReport {
    pub fn from_rows(mut rows: Vec<ReportRow>) -> Self {
        rows.sort_by(|a, b| a.ref_id.cmp(&b.ref_id));
        let mut groups: BTreeMap<String, Vec<&ReportRow>> = BTreeMap::new();
        for r in &rows {
            groups.entry(r.tissue.to_string()).or_default().push(r);
        }
        let aggregates = groups
            .values()
            .map(|g| {
                let m = |f: fn(&ReportRow) -> f64| mean(g.iter().map(|r| f(r))).unwrap_or(0.0);
                TissueAggregate {
                    tissue: g[0].tissue,
                    images: g.len(),
                    dice: m(|r| r.dice),
                    precision: m(|r| r.precision),
                    recall: m(|r| r.recall),
                    specificity: m(|r| r.specificity),
                    f_measure: m(|r| r.f_measure),
                    az: mean(g.iter().filter_map(|r| r.az)),
                }
            })
            .collect();
        Self { rows, aggregates }
    }

    pub fn rows_csv(&self) -> Result<String, PipelineError> {
        to_csv(&self.rows, &REPORT_COLUMNS)
    }

    pub fn aggregates_csv(&self) -> Result<String, PipelineError> {
        to_csv(&self.aggregates, &AGGREGATE_COLUMNS)
    }

    pub fn rows_jsonl(&self) -> Result<String, PipelineError> {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).map_err(|e| PipelineError::Serialize(e.to_string()))?);
            out.push('\n');
        }
        Ok(out)
    }

    /// `experiment.csv`, `experiment.jsonl` and `tissue_means.csv`.
    pub fn write(&self, out_dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        write(&out_dir.join("experiment.csv"), self.rows_csv()?)?;
        write(&out_dir.join("experiment.jsonl"), self.rows_jsonl()?)?;
        write(&out_dir.join("tissue_means.csv"), self.aggregates_csv()?)
    }
}

pub const REPORT_COLUMNS: [&str; 12] =
    ["ref_id", "tissue", "tp", "fp", "fn", "tn", "dice", "precision", "recall", "specificity", "f_measure", "az"];
const AGGREGATE_COLUMNS: [&str; 8] =
    ["tissue", "images", "dice", "precision", "recall", "specificity", "f_measure", "az"];
const BENCH_COLUMNS: [&str; 6] = ["size", "window_side", "levels", "naive_ms", "sliding_ms", "equal"];

/// Header-only output when `rows` is empty.
fn to_csv<T: Serialize>(rows: &[T], columns: &[&str]) -> Result<String, PipelineError> {
    let ser = |e: csv::Error| PipelineError::Serialize(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(columns).map_err(ser)?;
    }
    for r in rows {
        w.serialize(r).map_err(ser)?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Serialize(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| PipelineError::Serialize(e.to_string()))
}

/// Runs the pipeline for each id (in parallel) and writes per-image
/// artifacts plus the batch tables under `out_dir`. Every id is resolved
/// before any image is processed.
pub fn run_experiment(
    dataset: &MiasDataset,
    ids: &[String],
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<ExperimentReport, PipelineError> {
    config.validate()?;
    let mut jobs = Vec::with_capacity(ids.len());
    for id in ids {
        let record = dataset.record(id).ok_or_else(|| PipelineError::MissingRecord(id.clone()))?;
        let path = dataset.image_path(id);
        if !path.is_file() {
            return Err(PipelineError::MissingImage { id: id.clone(), path });
        }
        jobs.push((record, path));
    }
    let rows = jobs
        .par_iter()
        .map(|(record, path)| {
            let out = run_pipeline(path, record, config, out_dir)?;
            Ok(out.report.map(|r| ReportRow::new(&out.ref_id, out.tissue, &r)))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let report = ExperimentReport::from_rows(rows.into_iter().flatten().collect());
    report.write(out_dir)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub size: usize,
    pub window_side: usize,
    pub levels: usize,
    pub naive_ms: f64,
    pub sliding_ms: f64,
    pub equal: bool,
}

fn median_ms<T>(runs: usize, mut f: impl FnMut() -> T) -> (f64, T) {
    let mut times = Vec::with_capacity(runs);
    let mut last = None;
    for _ in 0..runs {
        let start = Instant::now();
        last = Some(f());
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    (times[times.len() / 2], last.expect("at least one run"))
}

pub const BENCH_RUNS: usize = 5;

/// Median-of-five timings of both contrast kernels (0° offset, one thread)
/// on seeded random images, with an exact-equality verdict per row.
pub fn bench(sizes: &[usize], window_sides: &[usize], levels: &[usize]) -> Result<Vec<BenchRow>, PipelineError> {
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| PipelineError::Invariant(e.to_string()))?;
    let offset = Offset::new(1, 0)?;
    let mut rows = Vec::new();
    for &size in sizes {
        for &window_side in window_sides {
            for &lv in levels {
                let mut rng = ChaCha8Rng::seed_from_u64((size * 1_000_003 + window_side * 1009 + lv) as u64);
                let img = GrayImage::from_fn(size, size, |_, _| rng.gen())
                    .map_err(|e| PipelineError::Config(format!("bench size {size}: {e}")))?;
                let q = texture::quantize(&img, lv)?;
                let spec = MapSpec::new(Descriptor::Contrast, window_side, offset);
                let (naive_ms, naive) =
                    pool.install(|| median_ms(BENCH_RUNS, || texture::texture_map_naive(&q, &spec)));
                let (sliding_ms, sliding) =
                    pool.install(|| median_ms(BENCH_RUNS, || texture::texture_map_sliding(&q, &spec)));
                let equal = naive? == sliding?;
                rows.push(BenchRow { size, window_side, levels: lv, naive_ms, sliding_ms, equal });
            }
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> Result<String, PipelineError> {
    to_csv(rows, &BENCH_COLUMNS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::{MiasGeometry, Severity};

    #[test]
    fn empty_tables_keep_serialized_headers() {
        let header = |csv: String| csv.lines().next().unwrap().to_string();
        let row = ReportRow::new("a", Tissue::F, &crate::evalmetrics::metrics(&Default::default()));
        let report = ExperimentReport::from_rows(vec![row]);
        let empty = ExperimentReport::default();
        assert_eq!(header(report.rows_csv().unwrap()), header(empty.rows_csv().unwrap()));
        assert_eq!(header(report.aggregates_csv().unwrap()), header(empty.aggregates_csv().unwrap()));
        let b = BenchRow { size: 1, window_side: 3, levels: 2, naive_ms: 0.0, sliding_ms: 0.0, equal: true };
        assert_eq!(header(bench_csv(&[b]).unwrap()), header(bench_csv(&[]).unwrap()));
    }

    #[test]
    fn defaults_match_documented_values() {
        let c = PipelineConfig::default();
        assert_eq!(c.srad.iterations, 100);
        assert_eq!(c.srad.time_step, 0.05);
        assert_eq!(c.srad.q0_decay_rho, 0.05);
        assert_eq!((c.clahe.tiles_x, c.clahe.tiles_y, c.clahe.bins, c.clahe.clip_limit), (8, 8, 256, 2.0));
        assert_eq!(c.glcm, GlcmConfig { levels: 8, window_side: 7, distance: 1, symmetric: false });
        assert_eq!(c.segment.threshold_method, ThresholdMethod::Otsu);
        assert_eq!((c.segment.close_radius, c.segment.fill_holes), (3, true));
        assert_eq!(c.roi.margin_factor, 1.5);
        assert!(c.eval.use_circle_proxy);
    }

    #[test]
    fn threshold_method_json_shape() {
        assert_eq!(serde_json::to_string(&ThresholdMethod::Otsu).unwrap(), "\"otsu\"");
        assert_eq!(serde_json::to_string(&ThresholdMethod::Fixed(0.5)).unwrap(), "{\"fixed\":0.5}");
        assert_eq!(
            serde_json::from_str::<ThresholdMethod>("{\"percentile\": 90}").unwrap(),
            ThresholdMethod::Percentile(90.0)
        );
    }

    #[test]
    fn config_rejects_unknown_and_invalid_fields() {
        let mut v: serde_json::Value = serde_json::from_str(&PipelineConfig::default().to_json()).unwrap();
        v["glcm"]["window_side"] = 4.into();
        assert!(PipelineConfig::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&PipelineConfig::default().to_json()).unwrap();
        v["glcm"]["bogus"] = 1.into();
        assert!(matches!(PipelineConfig::from_json(&v.to_string()), Err(PipelineError::Config(_))));
    }

    fn synthetic(width: usize, height: usize, cx: usize, cy: usize, r: usize) -> GrayImage {
        GrayImage::from_fn(width, height, |x, y| {
            let d2 = (x as i64 - cx as i64).pow(2) + (y as i64 - cy as i64).pow(2);
            let base = if d2 <= (r * r) as i64 { 190 } else { 70 };
            base + ((x * 7 + y * 13) % 11) as u8
        })
        .unwrap()
    }

    fn record(id: &str, g: Option<MiasGeometry>) -> MiasRecord {
        MiasRecord {
            ref_id: id.into(),
            tissue: Tissue::F,
            abnormality: if g.is_some() { Abnormality::Circ } else { Abnormality::Norm },
            severity: g.map(|_| Severity::B),
            geometry: g,
        }
    }

    #[test]
    fn norm_record_has_no_ground_truth() {
        let img = synthetic(32, 32, 16, 16, 5);
        let err = process(&img, &record("mdb003", None), &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, PipelineError::NoGroundTruth(id) if id == "mdb003"));
        let mut cfg = PipelineConfig::default();
        cfg.eval.use_circle_proxy = false;
        assert!(matches!(process(&img, &record("x", None), &cfg), Err(PipelineError::NoRoi(_))));
    }

    #[test]
    fn synthetic_mass_is_found() {
        // info-file y counts from the bottom row
        let img = synthetic(96, 96, 40, 50, 12);
        let g = MiasGeometry { center_x: 40, center_y: 96 - 1 - 50, radius: 12 };
        let out = process(&img, &record("syn001", Some(g)), &PipelineConfig::default()).unwrap();
        let report = out.report.unwrap();
        // contrast answers at the disk edge, so the mask overshoots by about a window
        assert_eq!(report.counts.fn_, 0);
        assert!(report.dice >= 0.5, "dice {}", report.dice);
        assert_eq!(out.sum_map, texture::directional_sum(&out.direction_maps).unwrap());
        assert_eq!(out.placement.center_x, 18.0);
        assert!(!out.contours.is_empty());
    }

    #[test]
    fn full_image_evaluation_counts_every_pixel() {
        let img = synthetic(80, 70, 40, 35, 10);
        let g = MiasGeometry { center_x: 40, center_y: 70 - 1 - 35, radius: 10 };
        let mut cfg = PipelineConfig::default();
        cfg.eval.full_image = true;
        let out = process(&img, &record("syn", Some(g)), &cfg).unwrap();
        assert_eq!(out.report.unwrap().counts.total(), 80 * 70);
    }

    #[test]
    fn aggregates_group_by_tissue() {
        let row = |id: &str, t: Tissue, dice: f64| ReportRow {
            ref_id: id.into(),
            tissue: t,
            tp: 1,
            fp: 0,
            fn_: 0,
            tn: 1,
            dice,
            precision: 1.0,
            recall: 1.0,
            specificity: 1.0,
            f_measure: dice,
            az: Some(0.5),
        };
        let rep = ExperimentReport::from_rows(vec![
            row("mdb019", Tissue::G, 0.7),
            row("mdb004", Tissue::D, 0.9),
            row("mdb005", Tissue::F, 0.6),
            row("mdb010", Tissue::F, 0.8),
        ]);
        let ids: Vec<_> = rep.rows.iter().map(|r| r.ref_id.as_str()).collect();
        assert_eq!(ids, ["mdb004", "mdb005", "mdb010", "mdb019"]);
        let tissues: Vec<_> = rep.aggregates.iter().map(|a| a.tissue).collect();
        assert_eq!(tissues, [Tissue::D, Tissue::F, Tissue::G]);
        assert!((rep.aggregates[1].dice - 0.7).abs() < 1e-12);
        assert_eq!(rep.aggregates[1].images, 2);
        let csv = rep.rows_csv().unwrap();
        assert!(csv.starts_with("ref_id,tissue,tp,fp,fn,tn,dice,precision,recall,specificity,f_measure,az\n"));
        assert_eq!(rep.rows_jsonl().unwrap().lines().count(), 4);
    }

    #[test]
    fn dataset_record_prefers_geometry() {
        let ds = MiasDataset {
            root: PathBuf::from("."),
            records: imgio::parse_mias_index("mdb010 F NORM\nmdb010 F CIRC B 1 2 3\nmdb011 G NORM").unwrap(),
        };
        assert!(ds.record("mdb010").unwrap().geometry.is_some());
        assert!(ds.record("mdb011").unwrap().geometry.is_none());
        assert!(ds.record("mdb012").is_none());
    }

    #[test]
    fn bench_reports_equality() {
        let rows = bench(&[24], &[3, 7], &[8]).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.equal && r.naive_ms >= 0.0 && r.sliding_ms >= 0.0));
        assert!(bench_csv(&rows).unwrap().starts_with("size,window_side,levels,naive_ms,sliding_ms,equal\n"));
    }
}
