//! Run manifests: what ran, with which settings, on which inputs, producing
//! which files. No timestamps, so identical runs give identical manifests.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    /// Hash over the input files (or over the config when there are none).
    pub input_hash: String,
    pub outputs: Vec<OutputFile>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Git-style blob hash: the content prefixed with `blob <len>\0`.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

/// Hash of a sorted list of `(name, blob hash)` entries.
pub fn tree_hash(entries: &mut [(String, String)]) -> String {
    entries.sort();
    let mut h = Sha256::new();
    for (name, blob) in entries.iter() {
        h.update(format!("{blob} {name}\n").as_bytes());
    }
    hex(&h.finalize())
}

/// Tree hash over every regular file below `dirs`, named relative to the
/// directory it was found in and prefixed by `label`.
pub fn hash_dirs(dirs: &[(&str, &Path)]) -> Result<String> {
    let mut entries = Vec::new();
    for (label, dir) in dirs {
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
                let path = e?.path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(dir).unwrap_or(&path).display().to_string();
                    let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
                    entries.push((format!("{label}/{rel}"), blob_hash(&bytes)));
                }
            }
        }
    }
    Ok(tree_hash(&mut entries))
}

impl RunManifest {
    pub fn new(command: &str, config: Value, seed: Option<u64>, input_hash: String) -> Self {
        RunManifest { command: command.to_string(), config, seed, input_hash, outputs: Vec::new() }
    }

    /// Writes `bytes` to `dir/name` and records it.
    pub fn emit(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(OutputFile { path: name.to_string(), sha256: blob_hash(bytes) });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join(MANIFEST), text).with_context(|| format!("writing manifest in {}", dir.display()))
    }
}
