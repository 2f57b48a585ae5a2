//! Command-line front end: config parsing, subcommands and exit codes.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

pub use config::RunConfig;

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "VOGN_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "vogn-out";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid or inconsistent configuration; exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Non-finite values during computation; exit code 3.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// I/O and other runtime failures; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<vogn::Error> for CliError {
    fn from(e: vogn::Error) -> Self {
        match e {
            vogn::Error::NonFinite(m) => CliError::Numeric(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    Ood,
    Sweep,
    Continual,
}

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Output directory: flag, then environment, then config, then a default.
pub fn resolve_out_dir(flag: Option<&Path>, env: Option<&str>, cfg: &RunConfig, base: &Path) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(e) = env.filter(|e| !e.is_empty()) {
        return PathBuf::from(e);
    }
    match &cfg.out_dir {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => base.join(p),
        None => PathBuf::from(DEFAULT_OUT_DIR),
    }
}

pub fn run(cmd: Command, config_path: &Path, ov: &Overrides) -> Result<PathBuf, CliError> {
    let mut cfg = RunConfig::read(config_path)?;
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(w) = ov.workers {
        cfg.train.workers = w;
    }
    cfg.validate()?;
    let base = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let env = std::env::var(OUT_DIR_ENV).ok();
    let out = resolve_out_dir(ov.out.as_deref(), env.as_deref(), &cfg, &base);
    match cmd {
        Command::Train => commands::train(&cfg, &base, &out).map(|_| ()),
        Command::Eval => commands::eval(&cfg, &base, &out).map(|_| ()),
        Command::Ood => commands::ood(&cfg, &base, &out).map(|_| ()),
        Command::Sweep => commands::sweep(&cfg, &base, &out).map(|_| ()),
        Command::Continual => commands::continual(&cfg, &base, &out).map(|_| ()),
    }?;
    Ok(out)
}
