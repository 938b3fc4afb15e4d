//! File I/O shared by the commands: atomic writes, content hashes and the
//! provenance block embedded in every artifact.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Parses a TOML or JSON document, chosen by file extension (`.json` is JSON,
/// anything else TOML).
pub fn parse_document<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T> {
    let text = std::str::from_utf8(bytes).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        serde_json::from_str(text).map_err(|e| e.to_string())
    } else {
        toml::from_str(text).map_err(|e| e.to_string())
    };
    parsed.map_err(|reason| CliError::Config {
        path: path.to_path_buf(),
        reason,
    })
}

/// Writes via a temporary file in the target directory and renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| CliError::io(&dir, e))?;
    tmp.write_all(contents).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Audit record: the command, its fully resolved configuration and a hash of
/// every input file.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: Value,
    pub inputs: Vec<InputHash>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

impl Provenance {
    pub fn new(command: &'static str, config: &impl Serialize) -> Result<Self> {
        Ok(Provenance {
            tool: "notif-ltv",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
        })
    }

    pub fn add_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputHash {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
    }
}

/// Serializes `artifact` as pretty JSON with a top-level `provenance` key.
pub fn with_provenance(artifact: &impl Serialize, provenance: &Provenance) -> Result<String> {
    let mut value = serde_json::to_value(artifact)?;
    match &mut value {
        Value::Object(map) => {
            map.insert("provenance".into(), serde_json::to_value(provenance)?);
        }
        other => {
            value = json!({ "data": other.take(), "provenance": provenance });
        }
    }
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

pub fn write_json_artifact(
    path: &Path,
    artifact: &impl Serialize,
    provenance: &Provenance,
) -> Result<()> {
    write_atomic(path, with_provenance(artifact, provenance)?.as_bytes())
}
