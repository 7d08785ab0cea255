//! Artifact persistence: versioned JSONL, atomic writes, and run manifests.
//!
//! Every line written by [`write_jsonl`] carries a schema version field
//! `"v": 1`. Writes go through a temp-then-rename step so interrupted runs
//! never leave a half-written artifact behind.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct VersionedOut<'a, T: Serialize> {
    v: u32,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Deserialize)]
struct VersionedIn<T> {
    v: u32,
    #[serde(flatten)]
    body: T,
}

/// Write records as JSONL (one versioned object per line), atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for record in records {
        serde_json::to_writer(
            &mut buf,
            &VersionedOut {
                v: SCHEMA_VERSION,
                body: record,
            },
        )?;
        buf.push(b'\n');
    }
    atomic_write(path, &buf)
}

/// Read a versioned JSONL file, checking the schema version of every line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| {
        Error::MissingInput(format!("{}: {e}", path.display()))
    })?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: VersionedIn<T> = serde_json::from_str(&line).map_err(|e| Error::Parse {
            message: format!("{}:{}: {e}", path.display(), lineno + 1),
            payload: truncate_payload(&line),
        })?;
        if rec.v != SCHEMA_VERSION {
            return Err(Error::Parse {
                message: format!(
                    "{}:{}: unsupported schema version {}",
                    path.display(),
                    lineno + 1,
                    rec.v
                ),
                payload: truncate_payload(&line),
            });
        }
        out.push(rec.body);
    }
    Ok(out)
}

/// Write bytes via a temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = tmp_path(path);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".into());
    name.push_str(".tmp");
    path.with_file_name(name)
}

fn truncate_payload(line: &str) -> String {
    const MAX: usize = 512;
    if line.len() <= MAX {
        line.to_string()
    } else {
        let mut end = MAX;
        while !line.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &line[..end])
    }
}

/// SHA-256 of a file, hex-encoded.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex_digest(&bytes))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Provenance record written next to every produced artifact. Carries no
/// timestamps so reruns are byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    /// Input path → SHA-256, sorted by path.
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config_hash: String) -> Self {
        Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config_hash,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .push((path.display().to_string(), file_sha256(path)?));
        self.inputs.sort();
        Ok(())
    }

    pub fn add_output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        atomic_write(&dir.join("manifest.json"), &bytes)
    }
}
