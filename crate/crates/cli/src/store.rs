//! Layout of the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::Value;

use crate::config::PipelineConfig;

pub struct Store {
    pub root: PathBuf,
}

impl Store {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Self { root: cfg.out_dir.clone() }
    }

    pub fn maxima(&self, id: &str) -> PathBuf {
        self.root.join("maxima").join(format!("{id}.csv"))
    }

    pub fn analysis(&self, id: &str) -> PathBuf {
        self.root.join("analysis").join(format!("{id}.json"))
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Ids of stations passing the screen, in file order.
    pub fn selected(&self) -> Result<Vec<String>> {
        let path = self.path("selection.csv");
        let text = fs::read_to_string(&path)
            .with_context(|| format!("reading {}; run `ingest` first", path.display()))?;
        let mut out = Vec::new();
        for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
            let fields: Vec<&str> = line.splitn(5, ',').collect();
            if fields.len() < 5 {
                bail!("{}: malformed row {line:?}", path.display());
            }
            if fields[3] == "true" {
                out.push(fields[0].to_string());
            }
        }
        Ok(out)
    }

    /// Station results in id order, restricted to `filter` when non-empty.
    pub fn analyses(&self, filter: &[String]) -> Result<Vec<(String, Value)>> {
        let dir = self.path("analysis");
        let entries = fs::read_dir(&dir).with_context(|| format!("reading {}; run `analyze` first", dir.display()))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut out = Vec::new();
        for p in paths {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            if !keep(filter, &id) {
                continue;
            }
            let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            let value = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            out.push((id, value));
        }
        Ok(out)
    }
}

pub fn keep(filter: &[String], id: &str) -> bool {
    filter.is_empty() || filter.iter().any(|f| f == id)
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// CSV body preceded by the run's provenance comments.
pub fn write_csv(path: &Path, cfg: &PipelineConfig, body: &str) -> Result<()> {
    let mut text = String::new();
    for c in cfg.provenance() {
        text.push_str("# ");
        text.push_str(&c);
        text.push('\n');
    }
    text.push_str(body);
    write(path, &text)
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, &text)
}

/// Quotes a CSV field when it needs it.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
