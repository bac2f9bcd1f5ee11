//! Output files and the run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

/// Everything needed to replay a run.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub experiment: String,
    pub seed: u64,
    pub mem_cap_mb: u64,
    pub params: serde_json::Value,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a ConfigEcho,
    status: &'static str,
    threads: usize,
    wall_seconds: f64,
    stages: &'a [Stage],
    outputs: &'a [OutputRecord],
}

pub struct Run {
    dir: PathBuf,
    outputs: Vec<OutputRecord>,
    stages: Vec<Stage>,
    started: Instant,
}

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.partial"));
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Run {
    /// Creates the output directory and checks that it is writable.
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        let probe = dir.join(".ditasep.probe");
        std::fs::write(&probe, b"").with_context(|| format!("output directory {} is not writable", dir.display()))?;
        std::fs::remove_file(&probe).ok();
        Ok(Self { dir: dir.to_path_buf(), outputs: Vec::new(), stages: Vec::new(), started: Instant::now() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Checks that `name` can be created, before any computation.
    pub fn check_target(&self, name: &str) -> Result<()> {
        let p = self.dir.join(name);
        match p.parent() {
            Some(parent) if !parent.as_os_str().is_empty() && !parent.is_dir() => {
                anyhow::bail!("output directory {} does not exist", parent.display())
            }
            _ => Ok(()),
        }
    }

    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f().with_context(|| format!("stage `{name}`"))?;
        self.stages.push(Stage { name: name.to_string(), seconds: t0.elapsed().as_secs_f64() });
        Ok(out)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.outputs.push(OutputRecord { path: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
        self.write(name, &bytes)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Writes the manifest last, so a complete manifest means a complete run.
    pub fn finish(self, config: &ConfigEcho, passed: bool) -> Result<()> {
        let m = Manifest {
            tool: "ditasep",
            version: env!("CARGO_PKG_VERSION"),
            config,
            status: if passed { "pass" } else { "fail" },
            threads: rayon::current_num_threads(),
            wall_seconds: self.started.elapsed().as_secs_f64(),
            stages: &self.stages,
            outputs: &self.outputs,
        };
        let mut bytes = serde_json::to_vec_pretty(&m)?;
        bytes.push(b'\n');
        write_atomic(&self.dir.join(MANIFEST), &bytes)
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x}")
}
