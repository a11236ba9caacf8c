use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one run, written to the output directory before any computation.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub master_seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Fully resolved parameters of the run.
    pub config: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, out_dir: &Path, config: serde_json::Value) -> Self {
        Self {
            tool: "frechet-svt",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config_path: None,
            master_seed: None,
            out_dir: out_dir.to_path_buf(),
            config,
        }
    }

    pub fn write(&self) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_file(&self.out_dir.join(MANIFEST_FILE), text.as_bytes())
    }
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}
