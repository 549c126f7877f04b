use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::config::{ExperimentConfig, SCHEMA_VERSION};

/// Output directory of one run. Files are listed in the manifest in write order.
pub struct RunDir {
    path: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(path: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(RunDir { path: path.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
        let p = self.file(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        self.files.push(name.to_owned());
        Ok(())
    }

    pub fn write_json<S: Serialize>(&mut self, name: &str, value: &S) -> anyhow::Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s)
    }

    /// Echoes the user's document byte for byte, when there is one, and the resolved config.
    pub fn echo_config(&mut self, raw: Option<&[u8]>, cfg: &ExperimentConfig) -> anyhow::Result<()> {
        if let Some(raw) = raw {
            self.write("config.json", raw)?;
        }
        self.write_json("resolved_config.json", cfg)
    }

    pub fn finish(mut self, cfg: &ExperimentConfig, wall_seconds: f64) -> anyhow::Result<Vec<String>> {
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            experiment: cfg.experiment.name().to_owned(),
            cli_version: env!("CARGO_PKG_VERSION").to_owned(),
            core_version: inverse_lab::VERSION.to_owned(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            wall_seconds,
            outputs: self.files.clone(),
        };
        self.write_json("manifest.json", &manifest)?;
        Ok(self.files)
    }
}

#[derive(Serialize)]
struct Manifest {
    schema_version: u32,
    experiment: String,
    cli_version: String,
    core_version: String,
    seed: u64,
    config_hash: String,
    wall_seconds: f64,
    outputs: Vec<String>,
}

/// CSV builder with a fixed header. Floats use the shortest round-trip form.
pub struct Csv {
    buf: String,
    width: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = header.join(",");
        buf.push('\n');
        Csv { buf, width: header.len() }
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.width);
        self.buf.push_str(&cells.join(","));
        self.buf.push('\n');
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

pub fn num(v: f64) -> String {
    let mut s = String::new();
    write!(s, "{v:e}").unwrap();
    s
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
