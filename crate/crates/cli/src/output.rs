//! Artifact writing and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// An output file held in memory until the writer stage.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(name: impl Into<String>, bytes: Vec<u8>) -> Artifact {
        Artifact {
            name: name.into(),
            bytes,
        }
    }

    pub fn json<T: Serialize>(name: impl Into<String>, value: &T) -> Artifact {
        let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
        bytes.push(b'\n');
        Artifact::new(name, bytes)
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FileRecord {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTime {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub library_version: &'static str,
    pub kind: String,
    pub seed: u64,
    pub status: String,
    pub threads: usize,
    pub config: String,
    pub stages: Vec<StageTime>,
    pub files: Vec<FileRecord>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, so a
/// reader never sees a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().ok_or_else(|| {
        std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "output path has no file name",
        )
    })?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Single writer stage: every artifact, then the manifest listing them.
pub fn write_all(dir: &Path, artifacts: &[Artifact]) -> std::io::Result<Vec<FileRecord>> {
    fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        write_atomic(&dir.join(&a.name), &a.bytes)?;
        records.push(FileRecord {
            path: a.name.clone(),
            bytes: a.bytes.len() as u64,
            sha256: sha256_hex(&a.bytes),
        });
    }
    Ok(records)
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> std::io::Result<PathBuf> {
    let path = dir.join(MANIFEST_NAME);
    let mut bytes = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write_atomic(&path, &bytes)?;
    Ok(path)
}

/// Checks every file listed in a manifest against its recorded hash.
pub fn verify_manifest(dir: &Path) -> std::io::Result<Vec<(String, bool)>> {
    let text = fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    let files = value["files"].as_array().cloned().unwrap_or_default();
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        let path = f["path"].as_str().unwrap_or_default().to_string();
        let ok = match fs::read(dir.join(&path)) {
            Ok(bytes) => Some(sha256_hex(&bytes).as_str()) == f["sha256"].as_str(),
            Err(_) => false,
        };
        out.push((path, ok));
    }
    Ok(out)
}

pub fn stage(name: &str, d: Duration) -> StageTime {
    StageTime {
        name: name.to_string(),
        seconds: d.as_secs_f64(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_atomic(&p, b"x,y\n").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"x,y\n");
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1);
    }
}
