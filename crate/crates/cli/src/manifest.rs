use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

/// Record of one CLI invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub config: BTreeMap<String, Value>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: u64,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub tokens_per_sec: Option<f64>,
    pub stats: BTreeMap<String, Value>,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: u64) -> Self {
        Self {
            subcommand: subcommand.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed,
            timings: BTreeMap::new(),
            tokens_per_sec: None,
            stats: BTreeMap::new(),
            started: Some(Instant::now()),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        self.config
            .insert(key.to_owned(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn stat(&mut self, key: &str, value: impl Serialize) {
        self.stats
            .insert(key.to_owned(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn input(&mut self, p: impl AsRef<Path>) {
        self.inputs.push(p.as_ref().display().to_string());
    }

    pub fn output(&mut self, p: impl AsRef<Path>) {
        self.outputs.push(p.as_ref().display().to_string());
    }

    /// Runs `f` and records its wall-clock time under `phase`.
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        *self.timings.entry(phase.to_owned()).or_default() += t.elapsed().as_secs_f64();
        out
    }

    pub fn finish_json(&mut self) -> String {
        if let Some(s) = self.started {
            self.timings.insert("total".into(), s.elapsed().as_secs_f64());
        }
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    /// Writes to `path`, or to stderr when there is none.
    pub fn write(&mut self, path: Option<&Path>) -> Result<()> {
        let json = self.finish_json();
        match path {
            Some(p) => std::fs::write(p, json + "\n").with_context(|| format!("writing manifest {}", p.display())),
            None => {
                eprintln!("{json}");
                Ok(())
            }
        }
    }
}

/// `<output>.manifest.json`.
pub fn sidecar(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
