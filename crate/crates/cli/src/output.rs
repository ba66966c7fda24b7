//! Artifacts. Every file carries the command, its configuration and the
//! toolkit version, and nothing that changes between identical runs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] logitrank::Error),
    #[error("{0}")]
    Usage(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for bad input, 3 for a violated invariant, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use logitrank::Error as E;
        match self {
            CliError::Usage(_) | CliError::Json(_) => 2,
            CliError::Invariant(_) => 3,
            CliError::Csv(_) | CliError::Io(_) => 1,
            CliError::Core(e) => match e {
                E::RankCap { .. }
                | E::SpanIncomplete { .. }
                | E::LogitBound { .. }
                | E::NotOrthonormal { .. }
                | E::RankDeficient { .. } => 3,
                E::Io(_) => 1,
                _ => 2,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub struct Run {
    pub command: &'static str,
    pub config: Value,
    pub dir: PathBuf,
}

impl Run {
    pub fn new(command: &'static str, config: &impl Serialize, dir: PathBuf) -> CliResult<Self> {
        Ok(Run {
            command,
            config: serde_json::to_value(config)?,
            dir,
        })
    }

    pub fn meta(&self) -> Value {
        json!({
            "tool": "logitrank",
            "version": VERSION,
            "command": self.command,
            "config": self.config,
        })
    }

    /// `out_dir/path` unless `path` is absolute; parent directories are
    /// created.
    pub fn path(&self, name: impl AsRef<Path>) -> CliResult<PathBuf> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    pub fn write_json(
        &self,
        name: impl AsRef<Path>,
        result: &impl Serialize,
    ) -> CliResult<PathBuf> {
        let path = self.path(name)?;
        let mut doc = self.meta();
        doc["result"] = serde_json::to_value(result)?;
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, &doc)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(path)
    }

    /// CSV with a leading `#` line holding the run metadata as JSON.
    pub fn write_csv(
        &self,
        name: impl AsRef<Path>,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> CliResult<PathBuf> {
        let path = self.path(name)?;
        let mut file = BufWriter::new(File::create(&path)?);
        writeln!(file, "# {}", serde_json::to_string(&self.meta())?)?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(path)
    }
}

pub fn num(x: f64) -> String {
    x.to_string()
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
