//! Run directories: CSV tables, JSON documents, raw snapshots and the
//! checksummed manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Overrides the output root given in the config.
pub const OUTPUT_ROOT_ENV: &str = "FRACSHE_OUTPUT_ROOT";

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub complete: bool,
    /// Set when a stage failed; earlier outputs are kept.
    pub error: Option<String>,
    pub files: Vec<ManifestEntry>,
}

pub struct RunDir {
    root: PathBuf,
    files: Vec<PathBuf>,
}

/// Resolves the output root: environment first, then the config, then `runs`.
pub fn output_root(config_dir: Option<&str>) -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .or_else(|| config_dir.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

impl RunDir {
    /// Creates `<root>/<hash prefix>-<unix millis>`, bumping the stamp on collision.
    pub fn create(root: &Path, config_hash: &str) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let mut stamp = SystemTime::now().duration_since(UNIX_EPOCH)?.as_millis();
        loop {
            let dir = root.join(format!("{}-{stamp}", &config_hash[..16]));
            match fs::create_dir(&dir) {
                Ok(()) => return Ok(Self { root: dir, files: Vec::new() }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => stamp += 1,
                Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
            }
        }
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    fn track(&mut self, rel: &str) -> PathBuf {
        let p = self.root.join(rel);
        self.files.push(PathBuf::from(rel));
        p
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let p = self.track(rel);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }

    /// Writes a table with a header row; fields are quoted per RFC 4180 as needed.
    pub fn write_csv(&mut self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let p = self.track(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Registers files written by other code (such as snapshot pairs).
    pub fn adopt(&mut self, rel: &str) {
        self.files.push(PathBuf::from(rel));
    }

    pub fn subdir(&self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        fs::create_dir_all(&p)?;
        Ok(p)
    }

    /// Writes `MANIFEST.json` over every tracked file.
    pub fn finish(mut self, config_hash: &str, error: Option<String>) -> Result<Manifest> {
        self.files.sort();
        self.files.dedup();
        let mut files = Vec::new();
        for rel in &self.files {
            let bytes = fs::read(self.root.join(rel)).with_context(|| format!("hashing {}", rel.display()))?;
            files.push(ManifestEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                bytes: bytes.len() as u64,
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        let manifest = Manifest {
            config_hash: config_hash.into(),
            complete: error.is_none(),
            error,
            files,
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(self.root.join("MANIFEST.json"), text)?;
        Ok(manifest)
    }
}

/// Shortest round-trip formatting, so tables are byte-stable across runs.
pub fn num(x: f64) -> String {
    format!("{x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_checksums() {
        let tmp = tempfile::tempdir().unwrap();
        let mut run = RunDir::create(tmp.path(), "0123456789abcdef0123").unwrap();
        run.write_csv("t.csv", &["a", "b"], &[vec!["1".into(), "x,y".into()]]).unwrap();
        run.write_json("v.json", &serde_json::json!({"k": 1})).unwrap();
        let dir = run.path().to_path_buf();
        let m = run.finish("h", None).unwrap();
        assert!(m.complete);
        assert_eq!(m.files.len(), 2);
        assert_eq!(fs::read_to_string(dir.join("t.csv")).unwrap(), "a,b\n1,\"x,y\"\n");
        let want = hex::encode(Sha256::digest(fs::read(dir.join("t.csv")).unwrap()));
        assert_eq!(m.files[0].sha256, want);
    }

    #[test]
    fn run_dirs_never_collide() {
        let tmp = tempfile::tempdir().unwrap();
        let a = RunDir::create(tmp.path(), "0123456789abcdef").unwrap();
        let b = RunDir::create(tmp.path(), "0123456789abcdef").unwrap();
        assert_ne!(a.path(), b.path());
    }
}
