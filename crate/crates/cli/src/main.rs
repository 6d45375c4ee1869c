use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use texturedge::evalmetrics;
use texturedge::imgio;
use texturedge::pipeline::{self, MiasDataset, PipelineConfig, PipelineError, ThresholdMethod, MIAS_DIR_ENV};
use texturedge::segment::{self, BinaryMask};
use texturedge::texture::{self, Descriptor, Direction, TextureMap};

#[derive(Parser)]
#[command(name = "texturedge", version, about = "GLCM contrast-map mass segmentation for mammograms")]
struct Cli {
    /// JSON configuration; flags override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print the default configuration as JSON and exit.
    #[arg(long)]
    print_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Speckle reduction followed by CLAHE.
    Enhance {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        over: Overrides,
    },
    /// Per-direction and summed GLCM descriptor maps of an image.
    Texture {
        input: PathBuf,
        out_dir: PathBuf,
        #[arg(long, default_value = "contrast")]
        descriptor: Descriptor,
        #[command(flatten)]
        over: Overrides,
    },
    /// Threshold and refine a map written as `.f64`, then trace the outline.
    Segment {
        map: PathBuf,
        /// Mask output (0/255 PGM).
        output: PathBuf,
        #[arg(long, value_name = "FILE")]
        contours: Option<PathBuf>,
        /// Component selection point, `x,y`; defaults to the map centre.
        #[arg(long, value_parser = parse_point)]
        center: Option<(f64, f64)>,
        #[command(flatten)]
        over: Overrides,
    },
    /// Compare a predicted mask against a reference mask.
    Eval {
        pred: PathBuf,
        truth: PathBuf,
        /// Score map (`.f64`) for the ROC area.
        #[arg(long, value_name = "FILE")]
        scores: Option<PathBuf>,
        /// Write the ROC points here.
        #[arg(long, value_name = "FILE", requires = "scores")]
        roc: Option<PathBuf>,
    },
    /// Every stage for one image of the dataset.
    Pipeline {
        id: String,
        #[command(flatten)]
        data: DataArgs,
        /// Raster to use instead of `<dataset>/<id>.pgm`.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        over: Overrides,
    },
    /// The pipeline over several images plus batch tables.
    Experiment {
        ids: Vec<String>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        over: Overrides,
    },
    /// Time the naive and sliding contrast kernels.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "64,128")]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "3,7,9")]
        windows: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "8")]
        levels: Vec<usize>,
        /// Write the CSV here instead of stdout.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Dataset root; falls back to the TEXTUREDGE_MIAS_DIR variable.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Info file; defaults to the first known name inside the dataset root.
    #[arg(long)]
    index: Option<PathBuf>,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    iterations: Option<u32>,
    #[arg(long)]
    time_step: Option<f64>,
    #[arg(long)]
    clip_limit: Option<f64>,
    /// CLAHE grid, `COLSxROWS` or one number for both.
    #[arg(long, value_parser = parse_tiles)]
    tiles: Option<(usize, usize)>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    distance: Option<u32>,
    #[arg(long)]
    symmetric: bool,
    /// `otsu`, `fixed:T` or `percentile:P`.
    #[arg(long, value_parser = parse_threshold)]
    threshold: Option<ThresholdMethod>,
    #[arg(long)]
    close_radius: Option<usize>,
    #[arg(long)]
    no_fill: bool,
    #[arg(long)]
    margin: Option<f64>,
    /// Skip evaluation against the annotation circle.
    #[arg(long)]
    no_eval: bool,
    /// Evaluate over the whole image instead of the ROI.
    #[arg(long)]
    full_image: bool,
}

impl Overrides {
    fn apply(&self, c: &mut PipelineConfig) {
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(self.iterations => c.srad.iterations);
        set!(self.time_step => c.srad.time_step);
        set!(self.clip_limit => c.clahe.clip_limit);
        if let Some((x, y)) = self.tiles {
            (c.clahe.tiles_x, c.clahe.tiles_y) = (x, y);
        }
        set!(self.levels => c.glcm.levels);
        set!(self.window => c.glcm.window_side);
        set!(self.distance => c.glcm.distance);
        c.glcm.symmetric |= self.symmetric;
        set!(self.threshold => c.segment.threshold_method);
        set!(self.close_radius => c.segment.close_radius);
        c.segment.fill_holes &= !self.no_fill;
        set!(self.margin => c.roi.margin_factor);
        c.eval.use_circle_proxy &= !self.no_eval;
        c.eval.full_image |= self.full_image;
    }
}

fn parse_threshold(s: &str) -> Result<ThresholdMethod, String> {
    let number = |v: &str| v.parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    match s.split_once(':') {
        None if s == "otsu" => Ok(ThresholdMethod::Otsu),
        Some(("fixed", v)) => number(v).map(ThresholdMethod::Fixed),
        Some(("percentile", v)) => number(v).map(ThresholdMethod::Percentile),
        _ => Err(format!("expected otsu, fixed:T or percentile:P, got {s:?}")),
    }
}

fn parse_tiles(s: &str) -> Result<(usize, usize), String> {
    let n = |v: &str| v.parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    match s.split_once('x') {
        Some((a, b)) => Ok((n(a)?, n(b)?)),
        None => n(s).map(|v| (v, v)),
    }
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected x,y, got {s:?}"))?;
    let n = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok((n(a)?, n(b)?))
}

enum Failure {
    Usage(String),
    Data(String),
    Invariant(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Invariant(_) => Failure::Invariant(e.to_string()),
            _ if e.is_usage() => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<(), Failure> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Data(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn load_config(path: Option<&Path>, over: &Overrides) -> Result<PipelineConfig, Failure> {
    let mut config = match path {
        Some(p) => PipelineConfig::load(p).map_err(|e| match e {
            PipelineError::Io { .. } => Failure::Usage(e.to_string()),
            other => other.into(),
        })?,
        None => PipelineConfig::default(),
    };
    over.apply(&mut config);
    config.validate()?;
    Ok(config)
}

fn open_dataset(data: &DataArgs) -> Result<MiasDataset, Failure> {
    let root = data
        .dataset
        .clone()
        .or_else(|| std::env::var_os(MIAS_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| Failure::Usage(format!("no dataset: pass --dataset or set {MIAS_DIR_ENV}")))?;
    Ok(MiasDataset::open(&root, data.index.as_deref())?)
}

fn read_map(path: &Path) -> Result<TextureMap, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    TextureMap::from_bytes(&bytes).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn read_mask(path: &Path) -> Result<BinaryMask, Failure> {
    Ok(BinaryMask::from_gray(&pipeline::read_image(path)?))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::Data(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.print_defaults {
        return emit(&(PipelineConfig::default().to_json() + "\n"));
    }
    let Some(command) = cli.command else {
        return Err(Failure::Usage("no subcommand given; see --help".into()));
    };
    let config_path = cli.config.as_deref();
    match command {
        Command::Enhance { input, output, over } => {
            let config = load_config(config_path, &over)?;
            let img = pipeline::read_image(&input)?;
            let out = texturedge::enhance::enhance(&img, &config.srad, &config.clahe).map_err(PipelineError::from)?;
            write_file(&output, imgio::encode_pgm(&out))
        }
        Command::Texture { input, out_dir, descriptor, over } => {
            let config = load_config(config_path, &over)?;
            let g = &config.glcm;
            let q = texture::quantize(&pipeline::read_image(&input)?, g.levels).map_err(PipelineError::from)?;
            let maps = texture::directional_maps(&q, descriptor, g.window_side, g.distance, g.symmetric)
                .map_err(PipelineError::from)?;
            let sum = texture::directional_sum(&maps).map_err(PipelineError::from)?;
            fs::create_dir_all(&out_dir).map_err(|e| Failure::Data(format!("{}: {e}", out_dir.display())))?;
            for (dir, map) in Direction::ALL.iter().zip(&maps) {
                pipeline::write_map(&out_dir, &format!("{descriptor}_{}", dir.degrees()), map)?;
            }
            pipeline::write_map(&out_dir, &format!("{descriptor}_sum"), &sum)?;
            write_file(&out_dir.join(format!("{descriptor}_sum.f64")), sum.to_bytes())
        }
        Command::Segment { map, output, contours, center, over } => {
            let config = load_config(config_path, &over)?;
            let map = read_map(&map)?;
            let s = &config.segment;
            let t = match s.threshold_method {
                ThresholdMethod::Otsu => segment::otsu_threshold(&map),
                ThresholdMethod::Fixed(t) => Ok(t),
                ThresholdMethod::Percentile(p) => segment::percentile_threshold(&map, p),
            }
            .map_err(PipelineError::from)?;
            let centre = center.unwrap_or((map.width() as f64 / 2.0, map.height() as f64 / 2.0));
            let mask = segment::refine_mask(&segment::binarize(&map, t), centre, s.close_radius, s.fill_holes);
            write_file(&output, imgio::encode_pgm(&mask.to_gray()))?;
            if let Some(path) = contours {
                write_file(&path, segment::contours_to_text(&segment::trace_contour(&mask)))?;
            }
            eprintln!("threshold {t}, {} pixels", mask.count());
            Ok(())
        }
        Command::Eval { pred, truth, scores, roc } => {
            let (pred, truth) = (read_mask(&pred)?, read_mask(&truth)?);
            let counts = evalmetrics::confusion(&pred, &truth).map_err(PipelineError::from)?;
            let mut report = evalmetrics::metrics(&counts);
            if let Some(path) = scores {
                let curve = evalmetrics::roc_az(&read_map(&path)?, &truth, None).map_err(PipelineError::from)?;
                report.az = Some(curve.az);
                if let Some(out) = roc {
                    write_file(&out, curve.to_csv())?;
                }
            }
            emit(&(to_json(&report) + "\n"))
        }
        Command::Pipeline { id, data, image, out, over } => {
            let config = load_config(config_path, &over)?;
            // a standalone raster still takes its annotation from the index
            let ds = open_dataset(&data)?;
            let path = image.unwrap_or_else(|| ds.image_path(&id));
            let record = ds.record(&id).ok_or(PipelineError::MissingRecord(id))?;
            let result = pipeline::run_pipeline(&path, record, &config, &out)?;
            match &result.report {
                Some(r) => emit(&(to_json(r) + "\n")),
                None => {
                    eprintln!("{}: {} mask pixels", result.ref_id, result.mask.count());
                    Ok(())
                }
            }
        }
        Command::Experiment { ids, data, out, over } => {
            let config = load_config(config_path, &over)?;
            let ds = open_dataset(&data)?;
            let report = pipeline::run_experiment(&ds, &ids, &config, &out)?;
            emit(&report.rows_csv()?)
        }
        Command::Bench { sizes, windows, levels, output } => {
            let rows = pipeline::bench(&sizes, &windows, &levels)?;
            let csv = pipeline::bench_csv(&rows)?;
            match output {
                Some(path) => write_file(&path, &csv)?,
                None => emit(&csv)?,
            }
            match rows.iter().find(|r| !r.equal) {
                Some(r) => Err(Failure::Invariant(format!(
                    "kernels disagree at size {} window {} levels {}",
                    r.size, r.window_side, r.levels
                ))),
                None => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Invariant(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
