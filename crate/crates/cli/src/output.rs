use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use medshift::{Error, Result};

/// Identifies the tool version, the resolved configuration and the seed.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new<C: Serialize>(command: &'static str, config: &C, seed: Option<u64>) -> Result<Self> {
        let canonical = serde_json::to_vec(config)?;
        Ok(Provenance {
            tool: "medshift",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_sha256: hex::encode(Sha256::digest(&canonical)),
            seed,
        })
    }

    /// Comment lines for CSV outputs (without the leading `# `).
    pub fn lines(&self) -> Vec<String> {
        let seed = self.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        vec![format!(
            "{} {} {} config_sha256={} seed={}",
            self.tool, self.version, self.command, self.config_sha256, seed
        )]
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Input(format!("cannot create output directory {}: {e}", dir.display())))
}

pub fn writer(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))?;
    Ok((path, BufWriter::new(f)))
}

/// Writes `{"provenance": ..., key: value}` as pretty JSON.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, prov: &Provenance, key: &str, value: &T) -> Result<PathBuf> {
    let mut doc = serde_json::Map::new();
    doc.insert("provenance".into(), serde_json::to_value(prov)?);
    doc.insert(key.into(), serde_json::to_value(value)?);
    let (path, mut w) = writer(dir, name)?;
    serde_json::to_writer_pretty(&mut w, &serde_json::Value::Object(doc))?;
    writeln!(w)?;
    w.flush()?;
    Ok(path)
}
