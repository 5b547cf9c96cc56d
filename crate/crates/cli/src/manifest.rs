//! Run manifests and log verification.
//!
//! Every file a run writes starts with `# manifest: <hash>`, where the hash
//! is the SHA-256 of the effective configuration. `manifest.json` records
//! that hash and the SHA-256 of each file, so an edited log no longer
//! matches its entry.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clocksim_core::output::read_manifest_hash;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 of the effective configuration; also the log header hash.
    pub config_hash: String,
    pub seed: u64,
    pub start_time_s: f64,
    pub end_time_s: f64,
    pub status: String,
    pub files: Vec<FileEntry>,
    pub tool_version: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}

/// Reads a log and, unless `skip` is set, checks it against the manifest in
/// its directory. Returns the file contents.
pub fn read_verified(path: &Path, skip: bool) -> Result<String> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if skip {
        return Ok(text);
    }
    let Some(hash) = read_manifest_hash(&text) else {
        bail!(
            "{} has no manifest header; pass --no-verify to analyse unverified data",
            path.display()
        );
    };
    let dir = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let manifest = RunManifest::load(&dir).context("a manifest is required to verify logs")?;
    if manifest.config_hash != hash {
        bail!(
            "{} belongs to run {hash}, but {} describes run {}",
            path.display(),
            dir.join(MANIFEST_FILE).display(),
            manifest.config_hash
        );
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let Some(entry) = manifest.files.iter().find(|f| f.path == name) else {
        bail!("{name} is not listed in the manifest");
    };
    if entry.sha256 != sha256_hex(text.as_bytes()) {
        bail!("{} was modified after the run (checksum mismatch)", path.display());
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    fn fixture(dir: &Path, body: &str) -> PathBuf {
        let text = format!("# manifest: h1\n{body}");
        let path = dir.join("log.jsonl");
        fs::write(&path, &text).unwrap();
        RunManifest {
            config_hash: "h1".into(),
            seed: 1,
            start_time_s: 0.0,
            end_time_s: 1.0,
            status: "complete".into(),
            files: vec![FileEntry {
                path: "log.jsonl".into(),
                sha256: sha256_hex(text.as_bytes()),
            }],
            tool_version: "test".into(),
        }
        .write(dir)
        .unwrap();
        path
    }

    #[test]
    fn untouched_log_verifies() {
        let dir = tempfile::tempdir().unwrap();
        let path = fixture(dir.path(), "{}\n");
        assert!(read_verified(&path, false).is_ok());
    }

    #[test]
    fn edited_log_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = fixture(dir.path(), "{}\n");
        fs::write(&path, "# manifest: h1\n{\"x\":1}\n").unwrap();
        let err = read_verified(&path, false).unwrap_err();
        assert!(err.to_string().contains("modified"), "{err}");
        assert!(read_verified(&path, true).is_ok());
    }

    #[test]
    fn headerless_file_needs_opt_out() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plain.csv");
        fs::write(&path, "t_s,df1_hz,df2_hz\n").unwrap();
        assert!(read_verified(&path, false).is_err());
        assert!(read_verified(&path, true).is_ok());
    }
}
