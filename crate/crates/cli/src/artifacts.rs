use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kmspc::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";

/// Collects the files a command writes under its output directory.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Records a file produced by `f` at the given name.
    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        f(&self.path(name))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}

/// Wall-clock stage timer; reports nothing unless enabled.
pub struct Timings {
    enabled: bool,
    start: Instant,
    stages: BTreeMap<String, f64>,
}

impl Timings {
    pub fn new(enabled: bool) -> Self {
        Timings {
            enabled,
            start: Instant::now(),
            stages: BTreeMap::new(),
        }
    }

    pub fn lap(&mut self, stage: &str) {
        if self.enabled {
            let now = Instant::now();
            self.stages
                .insert(stage.to_string(), (now - self.start).as_secs_f64() * 1e3);
            self.start = now;
        }
    }

    pub fn into_map(self) -> Option<BTreeMap<String, f64>> {
        self.enabled.then_some(self.stages)
    }
}

/// Run record written next to every command's artifacts. `config` is the
/// fully resolved input, so `--config manifest.json` repeats the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub library_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
    /// Milliseconds per stage; null unless timings were requested.
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>, config: impl Serialize) -> Result<Self> {
        Ok(Manifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            library_version: kmspc::VERSION.to_string(),
            seed,
            config: serde_json::to_value(config)?,
            outputs: Vec::new(),
            summary: serde_json::Value::Null,
            timings_ms: None,
        })
    }

    pub fn finish(mut self, out: &mut OutputDir, timings: Timings) -> Result<()> {
        self.outputs = out.written().to_vec();
        self.timings_ms = timings.into_map();
        out.write_json(MANIFEST, &self)
    }
}
