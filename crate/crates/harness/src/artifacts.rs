//! Output directory bookkeeping: CSV/JSON/SVG writers and the run manifest.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("csv error in {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("json error in {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Passed,
    /// An asserted invariant did not hold.
    Failed,
    /// A module returned an error and the study stopped.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub study: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub started: String,
    pub finished: String,
    pub workers: usize,
    pub status: RunStatus,
    /// First failed check or the stage that errored.
    pub failure_point: Option<String>,
    pub checks: Vec<CheckOutcome>,
    pub artifacts: Vec<ArtifactEntry>,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.status == RunStatus::Passed
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    pub fn checksum_of(&self, path: &str) -> Option<&str> {
        self.artifacts
            .iter()
            .find(|a| a.path == path)
            .map(|a| a.sha256.as_str())
    }
}

/// Writes artifacts under one output directory.
#[derive(Debug)]
pub struct ArtifactWriter {
    root: PathBuf,
}

impl ArtifactWriter {
    /// Create the directory, removing files listed by an earlier manifest
    /// there so stale outputs cannot leak into the new listing.
    pub fn create(root: &Path) -> Result<Self, ArtifactError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        let old = root.join(MANIFEST);
        if let Ok(text) = fs::read_to_string(&old) {
            if let Ok(m) = serde_json::from_str::<RunManifest>(&text) {
                for a in m.artifacts {
                    let p = root.join(&a.path);
                    if p.starts_with(root) && p.is_file() {
                        fs::remove_file(&p).map_err(io_err(&p))?;
                    }
                }
            }
            fs::remove_file(&old).map_err(io_err(&old))?;
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, name: &str) -> Result<PathBuf, ArtifactError> {
        let p = self.root.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        Ok(p)
    }

    /// Rows must carry their own `schema_version` column.
    pub fn csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<(), ArtifactError> {
        let p = self.path(name)?;
        let csv_err = |source| ArtifactError::Csv {
            path: p.clone(),
            source,
        };
        let mut w = csv::Writer::from_path(&p).map_err(csv_err)?;
        for r in rows {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush().map_err(io_err(&p))?;
        Ok(())
    }

    /// JSON document `{ "schema_version": .., "study": .., "data": .. }`.
    pub fn json<T: Serialize>(&self, name: &str, study: &str, data: &T) -> Result<(), ArtifactError> {
        #[derive(Serialize)]
        struct Envelope<'a, T> {
            schema_version: u32,
            study: &'a str,
            data: &'a T,
        }
        let p = self.path(name)?;
        let text = serde_json::to_string_pretty(&Envelope {
            schema_version: SCHEMA_VERSION,
            study,
            data,
        })
        .map_err(|source| ArtifactError::Json {
            path: p.clone(),
            source,
        })?;
        fs::write(&p, text + "\n").map_err(io_err(&p))
    }

    pub fn text(&self, name: &str, body: &str) -> Result<(), ArtifactError> {
        let p = self.path(name)?;
        fs::write(&p, body).map_err(io_err(&p))
    }

    /// Every file under the root except the manifest, sorted by path.
    pub fn listing(&self) -> Result<Vec<ArtifactEntry>, ArtifactError> {
        let mut out = Vec::new();
        for entry in WalkDir::new(&self.root).sort_by_file_name() {
            let entry = entry.map_err(|e| {
                let path = e.path().unwrap_or(&self.root).to_path_buf();
                ArtifactError::Io { path, source: e.into() }
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry.path().strip_prefix(&self.root).expect("walk stays under root");
            let rel = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            if rel == MANIFEST {
                continue;
            }
            let (sha256, bytes) = file_digest(entry.path())?;
            out.push(ArtifactEntry {
                path: rel,
                sha256,
                bytes,
            });
        }
        Ok(out)
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<(), ArtifactError> {
        let p = self.root.join(MANIFEST);
        let text = serde_json::to_string_pretty(manifest).map_err(|source| ArtifactError::Json {
            path: p.clone(),
            source,
        })?;
        let mut f = fs::File::create(&p).map_err(io_err(&p))?;
        f.write_all(text.as_bytes()).map_err(io_err(&p))?;
        f.write_all(b"\n").map_err(io_err(&p))
    }
}

pub fn file_digest(path: &Path) -> Result<(String, u64), ArtifactError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, ArtifactError> {
    let p = dir.join(MANIFEST);
    let text = fs::read_to_string(&p).map_err(io_err(&p))?;
    serde_json::from_str(&text).map_err(|source| ArtifactError::Json { path: p, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        schema_version: u32,
        x: f64,
    }

    #[test]
    fn listing_covers_everything_but_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let w = ArtifactWriter::create(dir.path()).unwrap();
        w.csv(
            "a.csv",
            &[Row {
                schema_version: 1,
                x: 0.5,
            }],
        )
        .unwrap();
        w.json("sub/b.json", "test", &vec![1, 2]).unwrap();
        w.text("c.svg", "<svg/>").unwrap();
        let list = w.listing().unwrap();
        let names: Vec<&str> = list.iter().map(|a| a.path.as_str()).collect();
        assert_eq!(names, ["a.csv", "c.svg", "sub/b.json"]);
        let csv_text = fs::read_to_string(dir.path().join("a.csv")).unwrap();
        assert_eq!(csv_text, "schema_version,x\n1,0.5\n");
    }

    #[test]
    fn stale_outputs_are_cleared() {
        let dir = tempfile::tempdir().unwrap();
        let w = ArtifactWriter::create(dir.path()).unwrap();
        w.text("old.txt", "x").unwrap();
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            study: "t".into(),
            config_hash: String::new(),
            code_version: String::new(),
            seed: 0,
            started: String::new(),
            finished: String::new(),
            workers: 1,
            status: RunStatus::Passed,
            failure_point: None,
            checks: Vec::new(),
            artifacts: w.listing().unwrap(),
        };
        w.write_manifest(&manifest).unwrap();
        let w2 = ArtifactWriter::create(dir.path()).unwrap();
        assert!(w2.listing().unwrap().is_empty());
        assert!(!dir.path().join(MANIFEST).exists());
    }
}
