use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use texturedge::imgio::{self, GrayImage};
use texturedge::pipeline::{PipelineConfig, MIAS_DIR_ENV};

fn texturedge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_texturedge")).args(args).env_remove(MIAS_DIR_ENV).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dataset(dir: &Path) {
    let size = 72usize;
    let (cx, cy, r) = (34i64, 38i64, 10i64);
    let img = GrayImage::from_fn(size, size, |x, y| {
        let (dx, dy) = (x as i64 - cx, y as i64 - (size as i64 - 1 - cy));
        let grain = ((x * 3 + y * 5) % 7) as u8 * 3;
        if dx * dx + dy * dy <= r * r {
            180 + grain
        } else {
            70 + grain
        }
    })
    .unwrap();
    fs::write(dir.join("mdb201.pgm"), imgio::encode_pgm(&img)).unwrap();
    fs::write(dir.join("mdb202.pgm"), imgio::encode_pgm(&GrayImage::filled(size, size, 90).unwrap())).unwrap();
    fs::write(dir.join("Info.txt"), format!("mdb201 F CIRC B {cx} {cy} {r}\nmdb202 G NORM\n")).unwrap();
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&texturedge(&["--help"])), 0);
    assert_eq!(code(&texturedge(&["--version"])), 0);
    assert_eq!(code(&texturedge(&["pipeline", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&texturedge(&["frobnicate"])), 1);
    assert_eq!(code(&texturedge(&[])), 1);
    let out = texturedge(&["segment", "m.f64", "o.pgm", "--threshold", "median"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("otsu"));
    let out = texturedge(&["experiment", "mdb001", "-o", "/nonexistent/out"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains(MIAS_DIR_ENV));
}

#[test]
fn printed_defaults_are_a_loadable_config() {
    let out = texturedge(&["--print-defaults"]);
    assert_eq!(code(&out), 0);
    assert_eq!(PipelineConfig::from_json(&stdout(&out)).unwrap(), PipelineConfig::default());
}

#[test]
fn pipeline_writes_every_artifact_deterministically() {
    let data = tempfile::tempdir().unwrap();
    dataset(data.path());
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for out in [&a, &b] {
        let run = texturedge(&["pipeline", "mdb201", "--dataset", p(data.path()), "-o", p(out.path())]);
        assert_eq!(code(&run), 0, "{}", stderr(&run));
        let report: serde_json::Value = serde_json::from_str(&stdout(&run)).unwrap();
        assert!(report["dice"].as_f64().unwrap() >= 0.5);
    }
    let names = [
        "enhanced.pgm",
        "roi.pgm",
        "contrast_0.pgm",
        "contrast_45.pgm",
        "contrast_90.pgm",
        "contrast_135.pgm",
        "contrast_sum.pgm",
        "contrast_sum.f64",
        "mask.pgm",
        "contours.txt",
        "overlay.pgm",
        "truth.pgm",
        "roc.csv",
        "report.json",
        "config.json",
    ];
    for name in names {
        let (x, y) = (a.path().join("mdb201").join(name), b.path().join("mdb201").join(name));
        assert_eq!(fs::read(&x).unwrap(), fs::read(&y).unwrap(), "{name} differs");
    }
}

#[test]
fn flags_override_config_file() {
    let data = tempfile::tempdir().unwrap();
    dataset(data.path());
    let mut config = PipelineConfig::default();
    config.glcm.levels = 16;
    config.srad.iterations = 20;
    let cfg_path = data.path().join("cfg.json");
    fs::write(&cfg_path, config.to_json()).unwrap();
    let out = tempfile::tempdir().unwrap();
    let run = texturedge(&[
        "--config",
        p(&cfg_path),
        "pipeline",
        "mdb201",
        "--dataset",
        p(data.path()),
        "-o",
        p(out.path()),
        "--levels",
        "4",
        "--threshold",
        "percentile:80",
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let used = PipelineConfig::load(&out.path().join("mdb201").join("config.json")).unwrap();
    assert_eq!(used.glcm.levels, 4);
    assert_eq!(used.srad.iterations, 20);
    assert_eq!(used.segment.threshold_method, texturedge::pipeline::ThresholdMethod::Percentile(80.0));
}

#[test]
fn invalid_parameters_are_usage_errors() {
    let data = tempfile::tempdir().unwrap();
    dataset(data.path());
    let out = tempfile::tempdir().unwrap();
    let run = texturedge(&["pipeline", "mdb201", "--dataset", p(data.path()), "-o", p(out.path()), "--window", "4"]);
    assert_eq!(code(&run), 1);
    let bad = data.path().join("bad.json");
    fs::write(&bad, r#"{"srad": {}}"#).unwrap();
    let run =
        texturedge(&["--config", p(&bad), "pipeline", "mdb201", "--dataset", p(data.path()), "-o", p(out.path())]);
    assert_eq!(code(&run), 1);
}

#[test]
fn data_errors_exit_two() {
    let data = tempfile::tempdir().unwrap();
    dataset(data.path());
    let out = tempfile::tempdir().unwrap();
    let run = texturedge(&["experiment", "mdb201", "mdb777", "--dataset", p(data.path()), "-o", p(out.path())]);
    assert_eq!(code(&run), 2);
    assert!(stderr(&run).contains("mdb777"));
    let run = texturedge(&["pipeline", "mdb202", "--dataset", p(data.path()), "-o", p(out.path())]);
    assert_eq!(code(&run), 2);
    assert!(stderr(&run).contains("mdb202"));
    fs::write(data.path().join("junk.pgm"), b"P7\n").unwrap();
    let run = texturedge(&["enhance", p(&data.path().join("junk.pgm")), p(&out.path().join("x.pgm"))]);
    assert_eq!(code(&run), 2);
}

#[test]
fn experiment_reads_dataset_from_environment() {
    let data = tempfile::tempdir().unwrap();
    dataset(data.path());
    let out = tempfile::tempdir().unwrap();
    let run = Command::new(env!("CARGO_BIN_EXE_texturedge"))
        .args(["experiment", "mdb201", "-o", p(out.path())])
        .env(MIAS_DIR_ENV, data.path())
        .output()
        .unwrap();
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert_eq!(stdout(&run).lines().count(), 2);
    assert!(out.path().join("tissue_means.csv").is_file());

    let empty = Command::new(env!("CARGO_BIN_EXE_texturedge"))
        .args(["experiment", "-o", p(&out.path().join("empty"))])
        .env(MIAS_DIR_ENV, data.path())
        .output()
        .unwrap();
    assert_eq!(code(&empty), 0);
    assert!(stdout(&empty).starts_with("ref_id,tissue,tp,fp,fn,tn"));
}

#[test]
fn stages_chain_through_files() {
    let data = tempfile::tempdir().unwrap();
    dataset(data.path());
    let work = tempfile::tempdir().unwrap();
    let w = |name: &str| work.path().join(name);
    let image = data.path().join("mdb201.pgm");

    let run = texturedge(&["enhance", p(&image), p(&w("enhanced.pgm")), "--iterations", "10"]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let run = texturedge(&["texture", p(&w("enhanced.pgm")), p(&w("maps")), "--descriptor", "entropy"]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert!(w("maps").join("entropy_135.pgm").is_file());
    let run = texturedge(&["texture", p(&w("enhanced.pgm")), p(&w("maps"))]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));

    let sum = w("maps").join("contrast_sum.f64");
    let run = texturedge(&["segment", p(&sum), p(&w("mask.pgm")), "--contours", p(&w("c.txt")), "--center", "34,33"]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert!(!fs::read_to_string(w("c.txt")).unwrap().is_empty());

    let run = texturedge(&["eval", p(&w("mask.pgm")), p(&w("mask.pgm"))]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let report: serde_json::Value = serde_json::from_str(&stdout(&run)).unwrap();
    assert_eq!(report["dice"], 1.0);

    let disk =
        GrayImage::from_fn(72, 72, |x, y| if (x as i64 - 34).pow(2) + (y as i64 - 33).pow(2) <= 100 { 255 } else { 0 });
    fs::write(w("truth.pgm"), imgio::encode_pgm(&disk.unwrap())).unwrap();
    let run =
        texturedge(&["eval", p(&w("mask.pgm")), p(&w("truth.pgm")), "--scores", p(&sum), "--roc", p(&w("roc.csv"))]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let report: serde_json::Value = serde_json::from_str(&stdout(&run)).unwrap();
    assert!(report["az"].as_f64().is_some());
    assert!(fs::read_to_string(w("roc.csv")).unwrap().starts_with("fpr,tpr\n"));
}

#[test]
fn bench_reports_equal_kernels() {
    let out = texturedge(&["bench", "--sizes", "24", "--windows", "3,5", "--levels", "2,8"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")));
}
