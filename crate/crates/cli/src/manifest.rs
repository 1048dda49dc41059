use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Record of one invocation, written as `manifest.json` next to the outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_paths: Vec<PathBuf>,
    pub parameters: serde_json::Value,
    pub version: String,
    pub seeds: Vec<u64>,
    pub outputs: Vec<PathBuf>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

pub struct Run {
    dir: PathBuf,
    started: Instant,
    pub manifest: RunManifest,
}

impl Run {
    pub fn start(dir: &Path, command: &str, parameters: serde_json::Value) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            started: Instant::now(),
            manifest: RunManifest {
                command: command.into(),
                config_paths: Vec::new(),
                parameters,
                version: env!("CARGO_PKG_VERSION").into(),
                seeds: Vec::new(),
                outputs: Vec::new(),
                timings: BTreeMap::new(),
            },
        })
    }

    pub fn config(&mut self, path: &Path) {
        self.manifest.config_paths.push(path.to_path_buf());
    }

    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        *self.manifest.timings.entry(stage.into()).or_default() += t.elapsed().as_secs_f64();
        out
    }

    fn register(&mut self, name: &str) -> PathBuf {
        let path = self.dir.join(name);
        self.manifest.outputs.push(path.clone());
        path
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.register(name);
        fs::write(&path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    pub fn write_csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf> {
        let path = self.register(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(path)
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.timings.insert("total".into(), self.started.elapsed().as_secs_f64());
        let path = self.dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        Ok(self.manifest)
    }
}

/// Full-precision CSV cell; infinities spelled `inf`.
pub fn num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:e}")
    }
}
