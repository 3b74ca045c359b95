//! Per-invocation output directory.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::CliError;

/// `<root>/<UTC timestamp>-<command>-s<seed>[-k]`, holding the echoed
/// config, every artifact of the run and a `summary.txt` of `key = value` lines.
pub struct RunDir {
    pub path: PathBuf,
    summary: Vec<(String, String)>,
}

impl RunDir {
    pub fn create(root: &Path, command: &str, cfg: &RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::Runtime(format!("cannot create run root {}: {e}", root.display())))?;
        let stem = format!("{}-{command}-s{}", chrono::Utc::now().format("%Y%m%dT%H%M%SZ"), cfg.seed);
        let mut path = root.join(&stem);
        let mut k = 1;
        loop {
            match fs::create_dir(&path) {
                Ok(()) => break,
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    path = root.join(format!("{stem}-{k}"));
                    k += 1;
                }
                Err(e) => return Err(CliError::Runtime(format!("cannot create {}: {e}", path.display()))),
            }
        }
        fs::write(path.join("config.toml"), cfg.to_toml()?)?;
        let mut run = Self { path, summary: Vec::new() };
        run.record("command", command);
        run.record("seed", cfg.seed);
        let shown = run.path.display().to_string();
        run.record("run_dir", shown);
        Ok(run)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn writer(&self, name: &str) -> Result<BufWriter<fs::File>, CliError> {
        let path = self.file(name);
        let f = fs::File::create(&path).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
        Ok(BufWriter::new(f))
    }

    /// Adds a summary line and echoes it to stdout.
    pub fn record(&mut self, key: &str, value: impl std::fmt::Display) {
        let value = value.to_string();
        println!("{key} = {value}");
        self.summary.push((key.to_string(), value));
    }

    pub fn finish(&self) -> Result<(), CliError> {
        let mut w = self.writer("summary.txt")?;
        for (k, v) in &self.summary {
            writeln!(w, "{k} = {v}")?;
        }
        w.flush()?;
        Ok(())
    }
}
