//! Output directories: archived config, timestamped log and CSV tables.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::{ExperimentConfig, CONFIG_FILE};
use crate::dataset::create_dir;
use crate::error::{CliError, Result};

pub const LOG_FILE: &str = "run.log";

pub struct RunDir {
    pub path: PathBuf,
    log: File,
}

impl RunDir {
    /// Creates `path`, archives `cfg` and opens the log in append mode.
    pub fn create(path: PathBuf, cfg: &ExperimentConfig, command: &str) -> Result<Self> {
        create_dir(&path)?;
        let cfg_path = path.join(CONFIG_FILE);
        std::fs::write(&cfg_path, cfg.to_toml()?).map_err(|e| CliError::io(&cfg_path, e))?;
        let log_path = path.join(LOG_FILE);
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| CliError::io(&log_path, e))?;
        let mut dir = Self { path, log };
        dir.log(&format!("start {command} seed={} workers={}", cfg.seed, cfg.workers));
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Appends a timestamped line to the log and echoes it to stderr.
    pub fn log(&mut self, message: &str) {
        let t = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        let line = format!("[{}.{:03}] {message}", t.as_secs(), t.subsec_millis());
        eprintln!("{line}");
        let _ = writeln!(self.log, "{line}");
    }
}

pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let err = |m: String| CliError::Csv {
        path: path.to_path_buf(),
        message: m,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| err(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| err(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_csv<D: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<D>> {
    let err = |m: String| CliError::Csv {
        path: path.to_path_buf(),
        message: m,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    r.deserialize().map(|row| row.map_err(|e| err(e.to_string()))).collect()
}
