//! Fingerprint-keyed artifact cache.
//!
//! Layout: `<hex>` holds the artifact, `<hex>.ok` is the completeness marker
//! written after the artifact. The marker records the artifact byte length;
//! a missing, truncated, or mismatched marker makes the entry a miss and the
//! entry is deleted.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::atomic::{atomic_write, atomic_write_with};
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;

const MARKER_PREFIX: &str = "qrelkit-artifact";

#[derive(Debug, Clone)]
pub struct ArtifactCache {
    dir: PathBuf,
}

impl ArtifactCache {
    /// Opens (creating if needed) a cache directory.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io_at(&dir, e))?;
        Ok(ArtifactCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn artifact_path(&self, fp: &Fingerprint) -> PathBuf {
        self.dir.join(fp.to_hex())
    }

    pub fn marker_path(&self, fp: &Fingerprint) -> PathBuf {
        self.dir.join(format!("{}.ok", fp.to_hex()))
    }

    /// Returns the artifact path iff a complete entry exists.
    pub fn lookup(&self, fp: &Fingerprint) -> Option<PathBuf> {
        let artifact = self.artifact_path(fp);
        let marker = self.marker_path(fp);
        let marker_text = match fs::read_to_string(&marker) {
            Ok(text) => text,
            Err(_) => return None,
        };
        let complete = fs::metadata(&artifact)
            .ok()
            .filter(|m| m.is_file())
            .is_some_and(|m| marker_text == marker_contents(fp, m.len()));
        if complete {
            Some(artifact)
        } else {
            tracing::debug!(fingerprint = %fp, "discarding incomplete cache entry");
            let _ = fs::remove_file(&marker);
            let _ = fs::remove_file(&artifact);
            None
        }
    }

    pub fn insert_bytes(&self, fp: &Fingerprint, bytes: &[u8]) -> Result<PathBuf> {
        self.insert_with(fp, |w| w.write_all(bytes))
    }

    /// Writes an artifact through `fill`, then publishes the marker.
    pub fn insert_with<F>(&self, fp: &Fingerprint, fill: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut dyn Write) -> io::Result<()>,
    {
        let artifact = self.artifact_path(fp);
        atomic_write_with(&artifact, fill)?;
        self.publish_marker(fp)?;
        Ok(artifact)
    }

    /// Writes the marker for an artifact already placed at `artifact_path(fp)`.
    pub fn publish_marker(&self, fp: &Fingerprint) -> Result<()> {
        let artifact = self.artifact_path(fp);
        let len = fs::metadata(&artifact)
            .map_err(|e| Error::io_at(&artifact, e))?
            .len();
        atomic_write(self.marker_path(fp), marker_contents(fp, len).as_bytes())
    }
}

fn marker_contents(fp: &Fingerprint, len: u64) -> String {
    format!("{MARKER_PREFIX} {} {len}\n", fp.to_hex())
}

/// `cache_lookup` in free-function form.
pub fn cache_lookup(fp: &Fingerprint, cache_dir: &Path) -> Option<PathBuf> {
    ArtifactCache { dir: cache_dir.to_path_buf() }.lookup(fp)
}
