use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ddpae::datasets::{sha256_hex, write_atomic};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FORMAT: &str = "ddpae-run";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the manifest's directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Record of one command invocation and every file it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub command: String,
    pub args: Vec<String>,
    pub config_digest: Option<String>,
    pub seed: Option<u64>,
    pub started: String,
    pub finished: String,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            command: command.into(),
            args: std::env::args().collect(),
            config_digest: None,
            seed: None,
            started: now(),
            finished: String::new(),
            artifacts: Vec::new(),
        }
    }

    /// Digest `files` (directories are walked) and write the manifest to
    /// `path`.
    pub fn finish(mut self, path: &Path, files: &[PathBuf]) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut all = Vec::new();
        for f in files {
            collect(f, &mut all)?;
        }
        all.sort();
        all.dedup();
        self.artifacts = all
            .iter()
            .filter(|p| p.as_path() != path)
            .map(|p| {
                let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                Ok(Artifact {
                    path: p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned(),
                    bytes: bytes.len() as u64,
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect::<Result<_>>()?;
        self.finished = now();
        write_atomic(path, serde_json::to_string_pretty(&self)?.as_bytes())?;
        Ok(self)
    }
}

fn collect(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        for entry in fs::read_dir(path).with_context(|| format!("listing {}", path.display()))? {
            collect(&entry?.path(), out)?;
        }
    } else if path.is_file() {
        out.push(path.to_path_buf());
    }
    Ok(())
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Print planned artifacts for `--dry-run`.
pub fn print_plan(command: &str, paths: &[PathBuf]) {
    println!("dry run: {command} would write");
    for p in paths {
        println!("  {}", p.display());
    }
}
