use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// 17 significant digits, enough for an exact round trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub seed: u64,
    /// Hash of the canonical config dump.
    pub inputs_sha256: String,
    pub files: Vec<FileEntry>,
}

/// Volatile facts kept out of the manifest so the manifest stays reproducible.
#[derive(Clone, Debug, Serialize)]
struct RunInfo {
    finished_unix_s: u64,
    threads: usize,
}

/// Collects the files of one run. Dropping it without `finish` removes them.
pub struct OutputDir {
    root: PathBuf,
    created_root: bool,
    files: Vec<FileEntry>,
    done: bool,
}

impl OutputDir {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let created_root = !root.exists();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            created_root,
            files: Vec::new(),
            done: false,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        // record first so a failed write is still cleaned up
        self.files.push(FileEntry {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        fs::write(self.root.join(name), bytes)?;
        Ok(())
    }

    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Writes `manifest.json` and `run_info.json`.
    pub fn finish(mut self, subcommand: &str, seed: u64, config_dump: &str) -> Result<Manifest> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            seed,
            inputs_sha256: sha256_hex(config_dump.as_bytes()),
            files: self.files.clone(),
        };
        let info = RunInfo {
            finished_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            threads: rayon::current_num_threads(),
        };
        let mut m = serde_json::to_string_pretty(&manifest)?;
        m.push('\n');
        let mut i = serde_json::to_string_pretty(&info)?;
        i.push('\n');
        let res = fs::write(self.root.join("manifest.json"), m)
            .and_then(|_| fs::write(self.root.join("run_info.json"), i));
        if let Err(e) = res {
            for name in ["manifest.json", "run_info.json"] {
                let _ = fs::remove_file(self.root.join(name));
            }
            return Err(e.into());
        }
        self.done = true;
        Ok(manifest)
    }

    fn cleanup(&mut self) {
        for f in &self.files {
            let _ = fs::remove_file(self.root.join(&f.name));
        }
        if self.created_root {
            // only succeeds when nothing else landed there
            let _ = fs::remove_dir(&self.root);
        }
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if !self.done {
            self.cleanup();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha_of_empty() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn fmt_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn abandoned_run_leaves_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("run");
        {
            let mut out = OutputDir::create(&root).unwrap();
            out.write("a.csv", b"x\n1\n").unwrap();
            assert!(root.join("a.csv").exists());
        }
        assert!(!root.exists());
    }

    #[test]
    fn finished_run_has_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(tmp.path()).unwrap();
        out.write("a.csv", b"x\n1\n").unwrap();
        let m = out.finish("demo", 7, "{}").unwrap();
        assert_eq!(m.files.len(), 1);
        assert_eq!(m.seed, 7);
        assert!(tmp.path().join("a.csv").exists());
        assert!(tmp.path().join("manifest.json").exists());
        assert!(tmp.path().join("run_info.json").exists());
    }
}
