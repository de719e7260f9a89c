//! Plain-text `key = value` pipeline configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use precip_cp::changepoint::{GaSettings, MutationScale};
use precip_cp::geostat::{smoothness, BoundingBox, CONUS};
use precip_cp::ingest::{Season, SelectionRule, DEFAULT_DAILY_CAP_MM};
use precip_cp::returns::{DEFAULT_REPLICATES, DEFAULT_START_YEAR};
use precip_cp::trend::{DIFFERENCE_THRESHOLD, Z_CRITICAL};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub data_dir: Option<PathBuf>,
    pub inventory: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 uses one per core.
    pub jobs: usize,
    pub daily_cap_mm: f64,
    pub selection: SelectionRule,
    pub ga: GaSettings,
    pub bootstrap_replicates: usize,
    pub confidence: f64,
    pub horizons: Vec<usize>,
    pub return_start: (i32, Season),
    pub nu_trend: [f64; 4],
    pub nu_variability: [f64; 4],
    pub nu_long_term: f64,
    pub nu_return_level: f64,
    pub grid_resolution: f64,
    pub grid_bbox: BoundingBox,
    pub z_critical: f64,
    pub difference_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            inventory: None,
            out_dir: PathBuf::from("output"),
            seed: 0,
            jobs: 0,
            daily_cap_mm: DEFAULT_DAILY_CAP_MM,
            selection: SelectionRule::default(),
            ga: GaSettings::default(),
            bootstrap_replicates: DEFAULT_REPLICATES,
            confidence: 0.95,
            horizons: vec![25, 50],
            return_start: (DEFAULT_START_YEAR, Season::Spring),
            nu_trend: smoothness::TRENDS,
            nu_variability: smoothness::VARIABILITY,
            nu_long_term: smoothness::LONG_TERM,
            nu_return_level: smoothness::RETURN_LEVELS,
            grid_resolution: 0.25,
            grid_bbox: CONUS,
            z_critical: Z_CRITICAL,
            difference_threshold: DIFFERENCE_THRESHOLD,
        }
    }
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| anyhow!("{key}: cannot parse {value:?}"))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| number(key, v)).collect()
}

fn array<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    let v: Vec<f64> = list(key, value)?;
    v.try_into().map_err(|_| anyhow!("{key}: expected {N} comma-separated values"))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
            cfg.set(key.trim(), value.trim()).with_context(|| format!("line {}", i + 1))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "inventory" => self.inventory = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = number(key, value)?,
            "jobs" => self.jobs = number(key, value)?,
            "daily_cap_mm" => self.daily_cap_mm = number(key, value)?,
            "long_min_years" => self.selection.long_min_years = number(key, value)?,
            "long_max_missing" => self.selection.long_max_missing = number(key, value)?,
            "short_min_years" => self.selection.short_min_years = number(key, value)?,
            "short_max_missing" => self.selection.short_max_missing = number(key, value)?,
            "population" => self.ga.population = number(key, value)?,
            "keep_prob" => self.ga.keep_prob = number(key, value)?,
            "shift_probs" => self.ga.shift_probs = array(key, value)?,
            "p_mut" => self.ga.p_mut = number(key, value)?,
            "mutation_scale" => {
                self.ga.mutation = match value {
                    "per-child" => MutationScale::PerChild,
                    "per-index" => MutationScale::PerIndex,
                    _ => bail!("mutation_scale: expected per-child or per-index"),
                }
            }
            "patience" => self.ga.patience = number(key, value)?,
            "max_generations" => self.ga.max_generations = number(key, value)?,
            "min_segment" => self.ga.min_segment = number(key, value)?,
            "initial_rate" => self.ga.initial_rate = number(key, value)?,
            "max_changepoints" => {
                self.ga.max_changepoints = if value == "none" { None } else { Some(number(key, value)?) }
            }
            "bootstrap_replicates" => self.bootstrap_replicates = number(key, value)?,
            "confidence" => self.confidence = number(key, value)?,
            "horizons" => self.horizons = list(key, value)?,
            "return_start" => {
                let (year, season) = value
                    .split_once(char::is_whitespace)
                    .ok_or_else(|| anyhow!("return_start: expected \"<year> <season>\""))?;
                let season = Season::parse(season).ok_or_else(|| anyhow!("return_start: unknown season {season:?}"))?;
                self.return_start = (number(key, year)?, season);
            }
            "nu_trend" => self.nu_trend = array(key, value)?,
            "nu_variability" => self.nu_variability = array(key, value)?,
            "nu_long_term" => self.nu_long_term = number(key, value)?,
            "nu_return_level" => self.nu_return_level = number(key, value)?,
            "grid_resolution" => self.grid_resolution = number(key, value)?,
            "grid_bbox" => {
                let [lon_min, lon_max, lat_min, lat_max] = array(key, value)?;
                self.grid_bbox = BoundingBox { lon_min, lon_max, lat_min, lat_max };
            }
            "z_critical" => self.z_critical = number(key, value)?,
            "difference_threshold" => self.difference_threshold = number(key, value)?,
            _ => bail!("unknown key {key:?}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.ga.validate()?;
        if self.horizons.is_empty() || self.horizons.iter().any(|&z| z < 2) {
            bail!("horizons must be at least 2 years");
        }
        if self.bootstrap_replicates < 200 {
            bail!("bootstrap_replicates must be at least 200");
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            bail!("confidence must lie in (0, 1)");
        }
        if !(self.daily_cap_mm > 0.0) {
            bail!("daily_cap_mm must be positive");
        }
        if !(self.grid_resolution > 0.0) {
            bail!("grid_resolution must be positive");
        }
        let nus = self.nu_trend.iter().chain(&self.nu_variability).chain([&self.nu_long_term, &self.nu_return_level]);
        if nus.into_iter().any(|&nu| !(nu > 0.0)) {
            bail!("smoothness values must be positive");
        }
        Ok(())
    }

    /// Settings that determine results, one `key=value` per line in key order.
    /// Output location, worker count and seed are left out.
    pub fn canonical(&self) -> String {
        let ga = &self.ga;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut entries = vec![
            ("bootstrap_replicates", self.bootstrap_replicates.to_string()),
            ("confidence", self.confidence.to_string()),
            ("daily_cap_mm", self.daily_cap_mm.to_string()),
            ("data_dir", path(&self.data_dir)),
            ("difference_threshold", self.difference_threshold.to_string()),
            ("grid_bbox", {
                let b = self.grid_bbox;
                join(&[b.lon_min, b.lon_max, b.lat_min, b.lat_max])
            }),
            ("grid_resolution", self.grid_resolution.to_string()),
            ("horizons", join(&self.horizons)),
            ("initial_rate", ga.initial_rate.to_string()),
            ("inventory", path(&self.inventory)),
            ("keep_prob", ga.keep_prob.to_string()),
            ("long_max_missing", self.selection.long_max_missing.to_string()),
            ("long_min_years", self.selection.long_min_years.to_string()),
            ("max_changepoints", ga.max_changepoints.map_or("none".into(), |c| c.to_string())),
            ("max_generations", ga.max_generations.to_string()),
            ("min_segment", ga.min_segment.to_string()),
            (
                "mutation_scale",
                match ga.mutation {
                    MutationScale::PerChild => "per-child".into(),
                    MutationScale::PerIndex => "per-index".into(),
                },
            ),
            ("nu_long_term", self.nu_long_term.to_string()),
            ("nu_return_level", self.nu_return_level.to_string()),
            ("nu_trend", join(&self.nu_trend)),
            ("nu_variability", join(&self.nu_variability)),
            ("p_mut", ga.p_mut.to_string()),
            ("patience", ga.patience.to_string()),
            ("population", ga.population.to_string()),
            ("return_start", format!("{} {}", self.return_start.0, self.return_start.1)),
            ("shift_probs", join(&ga.shift_probs)),
            ("short_max_missing", self.selection.short_max_missing.to_string()),
            ("short_min_years", self.selection.short_min_years.to_string()),
            ("z_critical", self.z_critical.to_string()),
        ];
        entries.sort();
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// SHA-256 of [`PipelineConfig::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }

    /// Seed of one station's search and bootstrap, independent of which other
    /// stations are processed.
    pub fn station_seed(&self, station_id: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(station_id.as_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }

    /// Comment lines recorded at the top of every CSV output.
    pub fn provenance(&self) -> Vec<String> {
        vec![format!("config_hash={}", self.hash()), format!("seed={}", self.seed)]
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
