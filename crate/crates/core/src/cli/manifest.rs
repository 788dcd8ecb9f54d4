use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fsutil::write_atomic;
use crate::{Error, Result};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
}

/// Provenance of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    /// Content hash over all inputs, see [`content_hash`].
    pub input_hash: String,
    pub outputs: Vec<OutputEntry>,
    pub duration_s: f64,
    pub tool_version: String,
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let name = e.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') || name.ends_with(RUN_MANIFEST_FILE) {
            continue;
        }
        let path = e.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).unwrap_or(&path);
            out.push((rel.to_string_lossy().replace('\\', "/"), path));
        }
    }
    Ok(())
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hash over the given files and directories. Each file contributes its
/// relative path, its byte length and the sha256 of its content, in sorted
/// path order, the way a tree object does. Hidden files and run manifests
/// are skipped, so the hash depends on content only.
pub fn content_hash(paths: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let mut files = Vec::new();
        if p.is_dir() {
            collect_files(p, p, &mut files)?;
        } else {
            let name = p
                .file_name()
                .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            files.push((name, p.to_path_buf()));
        }
        for (rel, path) in files {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            h.update(rel.as_bytes());
            h.update([0]);
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(Sha256::digest(&bytes));
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Started before a command does any work; `finish` writes the manifest.
pub struct Recorder {
    command: String,
    config: Option<String>,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    input_hash: String,
    start: Instant,
}

impl Recorder {
    pub fn start(command: &str, config: Option<&Path>, seed: Option<u64>, inputs: &[&Path]) -> Result<Self> {
        let mut all: Vec<&Path> = config.into_iter().collect();
        all.extend_from_slice(inputs);
        Ok(Self {
            command: command.to_string(),
            config: config.map(|p| p.display().to_string()),
            seed,
            inputs: all.iter().map(|p| p.to_path_buf()).collect(),
            input_hash: content_hash(&all)?,
            start: Instant::now(),
        })
    }

    pub fn finish(self, outputs: &[PathBuf], manifest_path: &Path) -> Result<RunManifest> {
        let mut entries = Vec::new();
        for o in outputs {
            let sha256 = if o.is_dir() {
                content_hash(&[o])?
            } else {
                file_sha256(o)?
            };
            entries.push(OutputEntry {
                path: o.display().to_string(),
                sha256,
            });
        }
        let m = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            inputs: self.inputs.iter().map(|p| p.display().to_string()).collect(),
            input_hash: self.input_hash,
            outputs: entries,
            duration_s: self.start.elapsed().as_secs_f64(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
        write_atomic(manifest_path, text.as_bytes()).map_err(|e| Error::io(manifest_path, e))?;
        Ok(m)
    }
}
