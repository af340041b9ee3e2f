//! Output directory handling and the per-run JSON manifest.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use harvest_core::scenario::{ScenarioDoc, SCHEMA_VERSION};
use serde::Serialize;

use crate::CliError;

/// Everything needed to reproduce and audit one command invocation. The
/// wall time is the only field that differs between identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema: u32,
    pub command: String,
    /// `preset:NAME` or the scenario file path.
    pub source: String,
    pub parameters: Option<ScenarioDoc>,
    pub artifact_defaults: Vec<String>,
    pub outputs: Vec<String>,
    pub diagnostics: serde_json::Value,
    pub passed: bool,
    pub wall_time_s: f64,
}

/// Files written by one command, all named `<command>_<name>` inside `dir`.
pub struct Output {
    dir: PathBuf,
    command: &'static str,
    files: Vec<String>,
    started: Instant,
}

impl Output {
    /// The directory must already exist.
    pub fn new(dir: &Path, command: &'static str) -> Result<Self, CliError> {
        if !dir.is_dir() {
            return Err(CliError::MissingOutDir(dir.to_path_buf()));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            command,
            files: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{}_{name}", self.command))
    }

    /// Creates `<command>_<name>`, hands a buffered writer to `body`, and
    /// records the file for the manifest.
    pub fn write(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(&path, e))?;
        self.files.push(path.file_name().unwrap().to_string_lossy().into_owned());
        Ok(())
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    /// Writes `<command>_manifest.json` and returns the manifest.
    pub fn finish(
        self,
        source: String,
        parameters: Option<ScenarioDoc>,
        artifact_defaults: Vec<String>,
        diagnostics: serde_json::Value,
        passed: bool,
    ) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            schema: SCHEMA_VERSION,
            command: self.command.to_string(),
            source,
            parameters,
            artifact_defaults,
            outputs: self.files.clone(),
            diagnostics,
            passed,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let path = self.path("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}
