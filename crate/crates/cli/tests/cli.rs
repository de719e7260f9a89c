use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_precip-cp");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// xorshift; enough for synthetic rainfall
struct Rng(u64);

impl Rng {
    fn next(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
}

fn days_in(year: i32, month: u32) -> u32 {
    match month {
        2 if (year % 4 == 0 && year % 100 != 0) || year % 400 == 0 => 29,
        2 => 28,
        4 | 6 | 9 | 11 => 30,
        _ => 31,
    }
}

fn write_dly(dir: &Path, id: &str, first_year: i32, years: i32, seed: u64) {
    let mut rng = Rng(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1);
    let mut text = String::new();
    for year in first_year..first_year + years {
        for month in 1..=12u32 {
            text.push_str(&format!("{id:<11}{year:04}{month:02}PRCP"));
            for day in 1..=31 {
                let v = if day > days_in(year, month) {
                    -9999
                } else if rng.next() < 0.3 {
                    (-80.0 * rng.next().max(1e-12).ln()) as i32
                } else {
                    0
                };
                text.push_str(&format!("{v:>5}   "));
            }
            text.push('\n');
        }
    }
    fs::write(dir.join(format!("{id}.dly")), text).unwrap();
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.cfg");
    fs::write(
        &path,
        "# quick settings\npopulation = 30\npatience = 8\nmax_generations = 60\nbootstrap_replicates = 200\nhorizons = 25\n",
    )
    .unwrap();
    path
}

#[test]
fn empty_directory_is_fatal() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    let out = run(&["--out", tmp.path().join("out").to_str().unwrap(), "ingest", data.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("no input files"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_fatal() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "colour = blue\n").unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "report"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("unknown key"));
}

#[test]
fn corrupt_file_gives_partial_failure() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    write_dly(&data, "USC00000001", 1950, 50, 1);
    write_dly(&data, "USC00000002", 1960, 30, 2);
    fs::write(data.join("BROKEN00001.dly"), "not a dly file\n").unwrap();
    let out_dir = tmp.path().join("out");
    let out = run(&["--out", out_dir.to_str().unwrap(), "--seed", "3", "ingest", data.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("BROKEN00001.dly"));

    let errors = fs::read_to_string(out_dir.join("ingest_errors.csv")).unwrap();
    assert!(errors.contains("BROKEN00001.dly"));
    let selection = fs::read_to_string(out_dir.join("selection.csv")).unwrap();
    assert!(selection.starts_with("# config_hash="));
    assert!(selection.contains("# seed=3"));
    let rows: Vec<&str> = selection.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("USC00000001,50,") && rows[0].contains(",true,"));
    assert!(rows[1].starts_with("USC00000002,30,") && rows[1].contains(",false,"));
    let maxima = fs::read_to_string(out_dir.join("maxima/USC00000001.csv")).unwrap();
    assert!(maxima.contains("config_hash=") && maxima.contains("seed=3"));
}

#[test]
fn station_filter_limits_ingest() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    write_dly(&data, "USC00000001", 1950, 50, 1);
    write_dly(&data, "USC00000002", 1950, 50, 2);
    let out_dir = tmp.path().join("out");
    let out = run(&["--out", out_dir.to_str().unwrap(), "--stations", "USC00000002", "ingest", data.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(!out_dir.join("maxima/USC00000001.csv").exists());
    assert!(out_dir.join("maxima/USC00000002.csv").exists());
}

#[test]
fn pipeline_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    write_dly(&data, "USC00000001", 1950, 50, 11);
    write_dly(&data, "USC00000002", 1955, 48, 12);
    let inventory = tmp.path().join("inventory.csv");
    fs::write(&inventory, "station_id,latitude,longitude,elevation\nUSC00000001,40.0,-90.0,200\n").unwrap();
    let cfg = small_config(tmp.path());
    fs::write(&cfg, format!("{}inventory = {}\n", fs::read_to_string(&cfg).unwrap(), inventory.display())).unwrap();
    let out_dir = tmp.path().join("out");
    let base = ["--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--seed", "7"];
    let with = |extra: &[&str]| -> Vec<String> { base.iter().chain(extra).map(|s| s.to_string()).collect() };
    let go = |args: Vec<String>| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        run(&refs)
    };

    let out = go(with(&["ingest", data.to_str().unwrap()]));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = go(with(&["--jobs", "1", "analyze"]));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let a1 = fs::read(out_dir.join("analysis/USC00000001.json")).unwrap();
    let b1 = fs::read(out_dir.join("analysis/USC00000002.json")).unwrap();
    let out = go(with(&["--jobs", "2", "analyze"]));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(a1, fs::read(out_dir.join("analysis/USC00000001.json")).unwrap());
    assert_eq!(b1, fs::read(out_dir.join("analysis/USC00000002.json")).unwrap());

    let v: Value = serde_json::from_slice(&a1).unwrap();
    assert_eq!(v["seed"], json!(7));
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(v["location"]["latitude"], json!(40.0));
    let other: Value = serde_json::from_slice(&b1).unwrap();
    assert!(other["location"].is_null());
    for key in ["fit_with_changepoints", "fit_without_changepoints", "trend_with_changepoints", "comparison", "qq"] {
        assert!(!v[key].is_null(), "{key}");
    }
    assert_eq!(v["fit_without_changepoints"]["c"], json!(0));
    let levels = v["return_levels"].as_array().unwrap().len() + v["return_level_errors"].as_array().unwrap().len();
    assert_eq!(levels, 4);

    for cmd in ["trends", "returns", "report"] {
        let out = go(with(&[cmd]));
        assert_eq!(code(&out), 0, "{cmd}: {}", stderr(&out));
    }
    for file in ["trends.csv", "trends_no_changepoints.csv", "trend_comparison.csv", "changepoint_histogram.csv", "return_levels.csv", "qq/USC00000001.csv"] {
        let text = fs::read_to_string(out_dir.join(file)).unwrap();
        assert!(text.starts_with("# config_hash="), "{file}");
    }
    let trends = fs::read_to_string(out_dir.join("trends.csv")).unwrap();
    assert_eq!(trends.lines().filter(|l| l.starts_with("USC")).count(), 2);
    let report: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["stations_analyzed"], json!(2));
    assert_eq!(report["seed"], json!(7));
}

fn fake_results(dir: &Path, count: usize, value: impl Fn(usize) -> f64) {
    let analysis = dir.join("analysis");
    fs::create_dir_all(&analysis).unwrap();
    for i in 0..count {
        let id = format!("FAKE{i:07}");
        let x = value(i);
        let v = json!({
            "station_id": id,
            "location": {"latitude": 35.0 + (i % 4) as f64, "longitude": -100.0 + (i / 4) as f64 * 1.3, "elevation": null},
            "trend_with_changepoints": {"beta1": [x, x, x, x], "z": [1.0, 1.0, 1.0, 1.0], "multipliers": [1.0, 1.0, 1.0, 1.0], "lta": x},
            "return_levels": [],
        });
        fs::write(analysis.join(format!("{id}.json")), v.to_string()).unwrap();
    }
}

#[test]
fn smooth_requires_ten_stations() {
    let tmp = TempDir::new().unwrap();
    fake_results(tmp.path(), 5, |_| 3.0);
    let out = run(&["--out", tmp.path().to_str().unwrap(), "smooth", "--quantity", "trend"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("at least 10 stations"), "{}", stderr(&out));
}

#[test]
fn constant_field_gives_flat_grid() {
    let tmp = TempDir::new().unwrap();
    fake_results(tmp.path(), 12, |_| 3.25);
    let cfg = tmp.path().join("grid.cfg");
    fs::write(&cfg, "grid_bbox = -101, -95, 34, 39\ngrid_resolution = 1\n").unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap(), "smooth", "--quantity", "long-term"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(tmp.path().join("smooth/long-term.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 7 * 6);
    for row in rows {
        let mean: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!((mean - 3.25).abs() < 1e-9, "{row}");
    }
    let model: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("smooth/long-term.json")).unwrap()).unwrap();
    assert_eq!(model["stations"].as_array().unwrap().len(), 12);
    assert!(model["config_hash"].is_string());
}

#[test]
fn varying_field_gives_four_seasonal_grids() {
    let tmp = TempDir::new().unwrap();
    fake_results(tmp.path(), 16, |i| (i as f64 * 0.7).sin() * 4.0 + i as f64 * 0.1);
    let cfg = tmp.path().join("grid.cfg");
    fs::write(&cfg, "grid_bbox = -101, -95, 34, 39\ngrid_resolution = 0.5\n").unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap(), "smooth", "--quantity", "trend"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for s in ["spring", "summer", "fall", "winter"] {
        assert!(tmp.path().join(format!("smooth/trend_{s}.csv")).exists());
        assert!(tmp.path().join(format!("smooth/trend_{s}.json")).exists());
    }
}
