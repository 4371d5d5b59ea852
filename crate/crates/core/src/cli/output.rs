//! Atomic output files and their metadata sidecars.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::digest::{file_sha256, sha256_hex};
use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Invalid(format!("output path `{}` has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Hash of a configuration's canonical JSON form.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let value = serde_json::to_value(config).expect("configs serialize");
    sha256_hex(value.to_string().as_bytes())
}

/// Machine-readable record of how an output was produced.
#[derive(Debug, Clone)]
pub struct RunLog {
    command: String,
    config: Value,
    config_hash: String,
    inputs: BTreeMap<String, String>,
    details: serde_json::Map<String, Value>,
}

impl RunLog {
    pub fn new<T: Serialize>(command: &str, config: &T) -> Self {
        Self {
            command: command.to_string(),
            config: serde_json::to_value(config).expect("configs serialize"),
            config_hash: config_hash(config),
            inputs: BTreeMap::new(),
            details: serde_json::Map::new(),
        }
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// Records the checksum of every given input file.
    pub fn inputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
        for p in paths {
            self.inputs.insert(p.display().to_string(), file_sha256(p)?);
        }
        Ok(())
    }

    pub fn detail(&mut self, key: &str, value: impl Into<Value>) {
        self.details.insert(key.to_string(), value.into());
    }

    pub fn to_json(&self) -> Value {
        json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.config,
            "config_hash": self.config_hash,
            "inputs": self.inputs,
            "details": self.details,
        })
    }

    /// Writes `bytes` to `path` and the log to its sidecar, both atomically.
    pub fn write_output(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        let mut meta = serde_json::to_vec_pretty(&self.to_json()).expect("json");
        meta.push(b'\n');
        write_atomic(&sidecar_path(path), &meta)
    }
}
