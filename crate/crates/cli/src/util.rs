//! Shared CLI plumbing: exit-code classification, config-file merging, and
//! run logs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Errors split by exit code: usage problems (bad flags, missing files,
/// schema violations) exit 2, everything else exits 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl From<tracseq::Error> for CliError {
    fn from(e: tracseq::Error) -> Self {
        use tracseq::Error::*;
        match e {
            Parse { .. } | Schema { .. } | Integrity(_) | InvalidArgument(_) | Config(_)
            | Format { .. } | MissingSlot(_) | AnswerOutsideLexicon { .. }
            | LooCapExceeded { .. } => CliError::Usage(e.to_string()),
            Storage { .. } => CliError::Runtime(e.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Require that an input path exists before doing any work.
pub fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if !path.exists() {
        return Err(CliError::usage(format!(
            "{what} file not found: {}",
            path.display()
        )));
    }
    Ok(())
}

pub fn require_dir(path: &Path, what: &str) -> CliResult<()> {
    if !path.is_dir() {
        return Err(CliError::usage(format!(
            "{what} directory not found: {}",
            path.display()
        )));
    }
    Ok(())
}

/// Optional JSON config file whose keys mirror the long flag names.
/// Explicit flags always win over file values.
#[derive(Debug, Default)]
pub struct ConfigFile {
    map: serde_json::Map<String, serde_json::Value>,
    path: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        require_file(path, "config")?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {} is not valid JSON: {e}", path.display())))?;
        match value {
            serde_json::Value::Object(map) => Ok(ConfigFile {
                map,
                path: Some(path.to_path_buf()),
            }),
            _ => Err(CliError::usage(format!(
                "config {} must be a JSON object",
                path.display()
            ))),
        }
    }

    fn context(&self, key: &str) -> String {
        match &self.path {
            Some(p) => format!("config {} key \"{key}\"", p.display()),
            None => format!("config key \"{key}\""),
        }
    }

    pub fn f64(&self, key: &str) -> CliResult<Option<f64>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| CliError::usage(format!("{} must be a number", self.context(key)))),
        }
    }

    pub fn u64(&self, key: &str) -> CliResult<Option<u64>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| {
                    CliError::usage(format!("{} must be a nonnegative integer", self.context(key)))
                }),
        }
    }

    pub fn usize(&self, key: &str) -> CliResult<Option<usize>> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    pub fn i64(&self, key: &str) -> CliResult<Option<i64>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_i64()
                .map(Some)
                .ok_or_else(|| CliError::usage(format!("{} must be an integer", self.context(key)))),
        }
    }

    pub fn string(&self, key: &str) -> CliResult<Option<String>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(|s| Some(s.to_string()))
                .ok_or_else(|| CliError::usage(format!("{} must be a string", self.context(key)))),
        }
    }

    pub fn path(&self, key: &str) -> CliResult<Option<PathBuf>> {
        Ok(self.string(key)?.map(PathBuf::from))
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("cannot hash {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Timed run context that collects input hashes and writes the run log.
pub struct RunLog {
    command: &'static str,
    started: Instant,
    inputs: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct RunLogFile<'a> {
    command: &'a str,
    resolved_config: &'a serde_json::Value,
    input_hashes: &'a BTreeMap<String, String>,
    wall_time_secs: f64,
}

impl RunLog {
    pub fn start(command: &'static str) -> Self {
        RunLog {
            command,
            started: Instant::now(),
            inputs: BTreeMap::new(),
        }
    }

    /// Record an input file's digest. Directories contribute their manifest.
    pub fn hash_input(&mut self, path: &Path) -> CliResult<()> {
        let target = if path.is_dir() {
            path.join("manifest.json")
        } else {
            path.to_path_buf()
        };
        if target.exists() {
            self.inputs
                .insert(path.display().to_string(), sha256_file(&target)?);
        }
        Ok(())
    }

    /// Write the log next to the primary output: `<dir>/run_log.json` for
    /// directory outputs, `<file>.runlog.json` otherwise.
    pub fn finish(self, out: &Path, resolved: serde_json::Value) -> CliResult<()> {
        let path = if out.is_dir() {
            out.join("run_log.json")
        } else {
            let mut name = out.file_name().unwrap_or_default().to_os_string();
            name.push(".runlog.json");
            out.with_file_name(name)
        };
        let log = RunLogFile {
            command: self.command,
            resolved_config: &resolved,
            input_hashes: &self.inputs,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
        };
        let json = serde_json::to_string_pretty(&log).expect("log serializes");
        std::fs::write(&path, json)
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("cannot write run log {}: {e}", path.display())))?;
        Ok(())
    }
}
