//! Content-addressed project store.
//!
//! Each artifact is a directory under `artifacts/<name>-<hash prefix>/`,
//! written once. `manifest.json` maps artifact names to their current entry
//! and keeps every entry ever recorded in `history`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store {0} is locked by another pipeline run (remove {0}/.lock if stale)")]
    Locked(PathBuf),
    #[error("artifact {0:?} is not in the manifest")]
    Missing(String),
    #[error("artifact {name:?} failed verification: manifest {expected}, disk {actual}")]
    HashMismatch {
        name: String,
        expected: String,
        actual: String,
    },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    /// Relative to the store root.
    pub path: String,
    pub hash: String,
    pub created_at: String,
    pub command: String,
    pub params: serde_json::Value,
    /// Digest of the stage inputs and parameters that produced it.
    pub stage_key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    pub history: Vec<ArtifactEntry>,
}

const MANIFEST_FORMAT: &str = "log2ns-manifest/1";

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            format: MANIFEST_FORMAT.into(),
            artifacts: BTreeMap::new(),
            history: Vec::new(),
        }
    }
}

impl Manifest {
    /// Digest over the current `(name, hash)` pairs; independent of timestamps.
    pub fn content_digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, e) in &self.artifacts {
            h.update(name.as_bytes());
            h.update([0]);
            h.update(e.hash.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }
}

/// SHA-256 over a directory's files in sorted relative-path order.
pub fn hash_dir(dir: &Path) -> io::Result<String> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, PathBuf)>) -> io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let path = entry.path();
            if entry.file_type()?.is_dir() {
                walk(base, &path, out)?;
            } else {
                let rel = path
                    .strip_prefix(base)
                    .expect("walk stays under base")
                    .to_string_lossy()
                    .replace('\\', "/");
                out.push((rel, path));
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for (rel, path) in files {
        let bytes = fs::read(&path)?;
        h.update(rel.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn hash_bytes(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Exclusive hold on a store, released on drop.
#[derive(Debug)]
pub struct StoreLock {
    path: PathBuf,
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug)]
pub struct ProjectStore {
    root: PathBuf,
    manifest: Manifest,
}

impl ProjectStore {
    pub const MANIFEST: &'static str = "manifest.json";

    /// Opens or creates a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("artifacts"))?;
        let path = root.join(Self::MANIFEST);
        let manifest = if path.exists() {
            let m: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)
                .map_err(|e| StoreError::Manifest(e.to_string()))?;
            if m.format != MANIFEST_FORMAT {
                return Err(StoreError::Manifest(format!(
                    "unsupported format {:?}",
                    m.format
                )));
            }
            m
        } else {
            Manifest::default()
        };
        Ok(ProjectStore { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn lock(&self) -> Result<StoreLock, StoreError> {
        let path = self.root.join(".lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(StoreLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                Err(StoreError::Locked(self.root.clone()))
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn entry(&self, name: &str) -> Result<&ArtifactEntry, StoreError> {
        self.manifest
            .artifacts
            .get(name)
            .ok_or_else(|| StoreError::Missing(name.to_string()))
    }

    pub fn path_of(&self, name: &str) -> Result<PathBuf, StoreError> {
        Ok(self.root.join(&self.entry(name)?.path))
    }

    /// Recomputes the artifact's hash and compares it with the manifest.
    pub fn verify(&self, name: &str) -> Result<(), StoreError> {
        let e = self.entry(name)?;
        let dir = self.root.join(&e.path);
        let actual = if dir.is_dir() {
            hash_dir(&dir)?
        } else {
            "missing".to_string()
        };
        if actual != e.hash {
            return Err(StoreError::HashMismatch {
                name: name.to_string(),
                expected: e.hash.clone(),
                actual,
            });
        }
        Ok(())
    }

    /// The current entry if it was produced from `stage_key` and still verifies.
    pub fn up_to_date(&self, name: &str, stage_key: &str) -> Option<&ArtifactEntry> {
        let e = self.manifest.artifacts.get(name)?;
        (e.stage_key == stage_key && self.verify(name).is_ok()).then_some(e)
    }

    /// Writes a new artifact through `fill`, which populates a scratch
    /// directory. Identical content maps to the same directory.
    pub fn put<F, E>(
        &mut self,
        name: &str,
        command: &str,
        params: serde_json::Value,
        stage_key: &str,
        fill: F,
    ) -> Result<ArtifactEntry, E>
    where
        F: FnOnce(&Path) -> Result<(), E>,
        E: From<StoreError>,
    {
        let scratch = self
            .root
            .join("tmp")
            .join(format!("{name}-{}", std::process::id()));
        if scratch.exists() {
            fs::remove_dir_all(&scratch).map_err(StoreError::from)?;
        }
        fs::create_dir_all(&scratch).map_err(StoreError::from)?;
        if let Err(e) = fill(&scratch) {
            let _ = fs::remove_dir_all(&scratch);
            return Err(e);
        }
        let hash = hash_dir(&scratch).map_err(StoreError::from)?;
        let rel = format!("artifacts/{name}-{}", &hash[..16]);
        let target = self.root.join(&rel);
        if target.exists() {
            let existing = hash_dir(&target).map_err(StoreError::from)?;
            if existing != hash {
                return Err(StoreError::HashMismatch {
                    name: name.to_string(),
                    expected: hash,
                    actual: existing,
                }
                .into());
            }
            fs::remove_dir_all(&scratch).map_err(StoreError::from)?;
        } else {
            fs::rename(&scratch, &target).map_err(StoreError::from)?;
        }
        let entry = ArtifactEntry {
            name: name.to_string(),
            path: rel,
            hash,
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            command: command.to_string(),
            params,
            stage_key: stage_key.to_string(),
        };
        self.manifest
            .artifacts
            .insert(name.to_string(), entry.clone());
        self.manifest.history.push(entry.clone());
        self.save().map_err(E::from)?;
        Ok(entry)
    }

    fn save(&self) -> Result<(), StoreError> {
        let tmp = self.root.join("manifest.json.tmp");
        fs::write(
            &tmp,
            serde_json::to_string_pretty(&self.manifest).expect("manifest serializes"),
        )?;
        fs::rename(tmp, self.root.join(Self::MANIFEST))?;
        Ok(())
    }
}
