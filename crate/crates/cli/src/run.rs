//! Run directory layout and the advisory lock that keeps two commands
//! from sharing one run directory concurrently.

use std::fs;
use std::path::{Path, PathBuf};

use cxseg_core::error::{Error, Result};

/// One experiment run on disk:
///
/// ```text
/// <run>/
///   config.toml        exact config snapshot
///   checkpoints/       <name>.safetensors + <name>.fingerprint.json
///   history/<name>.json
///   predictions/<model>/<id>.prob.png, <id>.mask.png
///   report.json, report.csv
///   plots/
/// ```
#[derive(Debug, Clone)]
pub struct RunDirectory {
    pub root: PathBuf,
}

impl RunDirectory {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDirectory { root: root.into() }
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn history_dir(&self) -> PathBuf {
        self.root.join("history")
    }

    pub fn history_path(&self, name: &str) -> PathBuf {
        self.history_dir().join(format!("{name}.json"))
    }

    pub fn predictions_dir(&self, model: &str) -> PathBuf {
        self.root.join("predictions").join(model)
    }

    pub fn report_json_path(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_csv_path(&self) -> PathBuf {
        self.root.join("report.csv")
    }

    pub fn plots_dir(&self) -> PathBuf {
        self.root.join("plots")
    }

    fn lock_path(&self) -> PathBuf {
        self.root.join(".lock")
    }

    pub fn create(&self) -> Result<()> {
        for d in [&self.root, &self.checkpoints_dir(), &self.history_dir()] {
            fs::create_dir_all(d).map_err(|e| Error::io(d.clone(), e))?;
        }
        Ok(())
    }

    /// Take the advisory lock; released when the guard drops.
    pub fn lock(&self) -> Result<RunLock> {
        self.create()?;
        let path = self.lock_path();
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::data(format!(
                "run directory {} is locked by another command (remove {} if stale)",
                self.root.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

pub struct RunLock {
    path: PathBuf,
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Map an error to the CLI's stable exit-code contract.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::MissingDependency(_) => 3,
        Error::Data(_) | Error::Parse { .. } | Error::Ingest { .. } => 4,
        _ => 1,
    }
}

/// Checkpoint names shared between `train` and `eval`.
pub fn class_checkpoint_name(class_id: u8) -> String {
    format!("class_{class_id}")
}

pub const SUPERMODEL: &str = "supermodel";
pub const SIAMESE: &str = "siamese";
pub const CHEXNOMALY: &str = "chexnomaly";
pub const FUSION: &str = "fusion";

/// List the specialized checkpoints present in a run, sorted by class id.
pub fn list_class_checkpoints(dir: &Path) -> Result<Vec<(u8, String)>> {
    let mut found = Vec::new();
    if !dir.exists() {
        return Ok(found);
    }
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".safetensors") {
            if let Some(id) = stem.strip_prefix("class_") {
                if let Ok(class_id) = id.parse::<u8>() {
                    found.push((class_id, stem.to_string()));
                }
            }
        }
    }
    found.sort();
    Ok(found)
}
