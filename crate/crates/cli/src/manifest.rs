//! Run manifests and the staged output directories they describe.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Upstream {
    pub stage: String,
    /// Digest of the upstream manifest with `created_at` removed.
    pub manifest_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub created_at: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    #[serde(default)]
    pub upstream: Vec<Upstream>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon_version: Option<u64>,
    #[serde(default)]
    pub summary: serde_json::Value,
}

impl Manifest {
    /// Digest of everything except the timestamp.
    pub fn content_digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("manifest serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("created_at");
        }
        sha256_bytes(serde_json::to_string(&v).expect("value serializes").as_bytes())
    }

    pub fn read(stage_dir: &Path) -> Result<Self> {
        let p = stage_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", p.display())))
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

/// Output directory written under a temporary name and moved into place
/// only by [`Stage::commit`]. Dropping an uncommitted stage deletes it.
pub struct Stage {
    name: String,
    target: PathBuf,
    tmp: PathBuf,
    files: Vec<String>,
    committed: bool,
}

impl Stage {
    pub fn begin(name: &str, target: PathBuf) -> Result<Self> {
        let parent = target
            .parent()
            .ok_or_else(|| CliError::config(format!("{} has no parent directory", target.display())))?;
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        let tmp = parent.join(format!(
            ".{}.tmp-{}",
            target.file_name().and_then(|s| s.to_str()).unwrap_or(name),
            std::process::id()
        ));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| CliError::io(&tmp, e))?;
        }
        fs::create_dir(&tmp).map_err(|e| CliError::io(&tmp, e))?;
        Ok(Self {
            name: name.to_string(),
            target,
            tmp,
            files: Vec::new(),
            committed: false,
        })
    }

    pub fn write(&mut self, file: &str, bytes: &[u8]) -> Result<()> {
        let p = self.tmp.join(file);
        fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))?;
        if !self.files.iter().any(|f| f == file) {
            self.files.push(file.to_string());
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, file: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
        bytes.push(b'\n');
        self.write(file, &bytes)
    }

    /// Streams into a file of the staged directory.
    pub fn write_with<F>(&mut self, file: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
    {
        let p = self.tmp.join(file);
        let out = fs::File::create(&p).map_err(|e| CliError::io(&p, e))?;
        let mut w = std::io::BufWriter::new(out);
        f(&mut w).map_err(|e| CliError::io(&p, e))?;
        w.flush().map_err(|e| CliError::io(&p, e))?;
        if !self.files.iter().any(|x| x == file) {
            self.files.push(file.to_string());
        }
        Ok(())
    }

    pub fn target(&self) -> &Path {
        &self.target
    }

    /// Digests the staged files, writes the manifest and swaps the
    /// directory into place.
    pub fn commit(mut self, mut manifest: Manifest) -> Result<Manifest> {
        let mut files = self.files.clone();
        files.sort();
        manifest.stage = self.name.clone();
        manifest.outputs = files
            .iter()
            .map(|f| {
                Ok(FileDigest {
                    path: f.clone(),
                    sha256: sha256_file(&self.tmp.join(f))?,
                })
            })
            .collect::<Result<_>>()?;
        self.write_json(MANIFEST_FILE, &manifest)?;
        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(|e| CliError::io(&self.target, e))?;
        }
        fs::rename(&self.tmp, &self.target).map_err(|e| CliError::io(&self.target, e))?;
        self.committed = true;
        Ok(manifest)
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}

/// Writes `bytes` next to `path` and renames over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    let tmp = parent.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("file"),
        std::process::id()
    ));
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}
