//! The `memxfer` command line: synthetic data generation, graph
//! transformation, model training, transfer runs and scarcity sweeps.
//!
//! Every invocation writes its resolved configuration and a log to a run
//! directory, so a run can be repeated from what it recorded.

pub mod args;
mod commands;
pub mod config;

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

pub use args::Cli;
use args::Command;
pub use config::Config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 for validation failures, 2 for I/O errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 2,
            CliError::Invalid(_) => 1,
        }
    }
}

impl From<memxfer::Error> for CliError {
    fn from(e: memxfer::Error) -> Self {
        match e {
            memxfer::Error::Io { path, source } => CliError::Io { path, source },
            other => CliError::Invalid(other.to_string()),
        }
    }
}

/// Output directory of one invocation.
pub struct RunDir {
    path: PathBuf,
    log: File,
}

impl RunDir {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(path).map_err(|e| CliError::io(path, e))?;
        let log_path = path.join("log.txt");
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| CliError::io(&log_path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            log,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Prints to stderr and appends to the run log.
    pub fn log(&mut self, msg: &str) {
        eprintln!("{msg}");
        // a failing log write should not abort an otherwise good run
        let _ = writeln!(self.log, "{msg}");
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let path = self.join(name);
        write_json(&path, value)?;
        Ok(path)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Invalid(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Generate(_) => "generate",
        Command::Transform(_) => "transform",
        Command::TrainTgn(_) => "train-tgn",
        Command::TrainFgat(_) => "train-fgat",
        Command::Transfer(_) => "transfer",
        Command::Sweep(_) => "sweep",
        Command::PlotCsv(_) => "plot-csv",
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = Config::load(cli.config.as_deref())?;
    let name = command_name(&cli.command);
    let dir = cli
        .run_dir
        .clone()
        .unwrap_or_else(|| Path::new("runs").join(name));
    let mut run = RunDir::create(&dir)?;
    let args = match &cli.command {
        Command::Generate(a) => json!(a),
        Command::Transform(a) => json!(a),
        Command::TrainTgn(a) => json!(a),
        Command::TrainFgat(a) => json!(a),
        Command::Transfer(a) => json!(a),
        Command::Sweep(a) => json!(a),
        Command::PlotCsv(a) => json!(a),
    };
    run.write_json(
        "config.json",
        &json!({"command": name, "args": args, "config": config}),
    )?;
    match &cli.command {
        Command::Generate(a) => commands::generate(a, &config, &mut run),
        Command::Transform(a) => commands::transform(a, &mut run),
        Command::TrainTgn(a) => commands::train_tgn(a, &config, &mut run),
        Command::TrainFgat(a) => commands::train_fgat(a, &config, &mut run),
        Command::Transfer(a) => commands::transfer(a, &config, &mut run),
        Command::Sweep(a) => commands::sweep(a, &config, &mut run),
        Command::PlotCsv(a) => commands::plot_csv(a, &mut run),
    }
}
