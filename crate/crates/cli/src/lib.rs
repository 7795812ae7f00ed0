//! Config loading, experiment dispatch and result files for the `trip`
//! binary.

pub mod commands;
pub mod output;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;
use trip_core::topology::parse_schedule_json;
use trip_core::SimConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at {path}:{line}: {message}")]
    Config {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Core(#[from] trip_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(trip_core::Error::Io(_)) | CliError::Io { .. } => 1,
            CliError::Core(_) => 2,
        }
    }
}

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// 1-based line of `offset` in `text`.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Best line for a validation message: the first assignment whose key is
/// named in the message, else the first line.
fn anchor_line(text: &str, message: &str) -> usize {
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    let named = |key: &str| {
        message.match_indices(key).any(|(at, _)| {
            let before = message[..at].chars().next_back();
            let after = message[at + key.len()..].chars().next();
            !before.is_some_and(is_word) && !after.is_some_and(is_word)
        })
    };
    let mut best: Option<(usize, usize)> = None;
    for (idx, raw) in text.lines().enumerate() {
        let Some((key, _)) = raw.split_once('=') else {
            continue;
        };
        let key = key.trim();
        if key.is_empty() || !named(key) {
            continue;
        }
        // prefer the longest key so `d2_value` beats `d2`
        if best.is_none_or(|(_, len)| key.len() > len) {
            best = Some((idx + 1, key.len()));
        }
    }
    best.map_or(1, |(line, _)| line)
}

fn hint_key(err: &trip_core::Error) -> Option<&'static str> {
    use trip_core::Error as E;
    match err {
        E::OracleCapExceeded { .. } => Some("clients"),
        E::ExactCapExceeded { .. } => Some("exact_cap"),
        E::InsufficientSamples { .. } => Some("train_samples"),
        E::InvalidTopology(_) => Some("kind"),
        _ => None,
    }
}

/// Turns a core error raised while checking `path` into a line-anchored
/// config error.
pub fn anchor_error(path: &Path, text: &str, err: trip_core::Error) -> CliError {
    let message = err.to_string();
    let probe = match hint_key(&err) {
        Some(k) if anchor_line(text, &message) == 1 => format!("{message} ({k})"),
        _ => message.clone(),
    };
    CliError::Config {
        path: path.display().to_string(),
        line: anchor_line(text, &probe),
        message,
    }
}

fn resolve(base: &Path, p: &str) -> String {
    let pb = PathBuf::from(p);
    if pb.is_absolute() {
        p.to_string()
    } else {
        base.join(pb).display().to_string()
    }
}

/// Reads, parses and validates a TOML config. Relative data and schedule
/// paths are taken relative to the config file.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<SimConfig, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut cfg: SimConfig = toml::from_str(&text).map_err(|e| CliError::Config {
        path: path.display().to_string(),
        line: e.span().map_or(1, |s| line_of(&text, s.start)),
        message: e.message().to_string(),
    })?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut cfg.data.train_csv, &mut cfg.data.test_csv] {
        if let Some(v) = p.as_mut() {
            *v = resolve(base, v);
        }
    }
    if let Some(file) = cfg.topology.schedule_file.clone() {
        let full = resolve(base, &file);
        let json = fs::read_to_string(&full).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            line: anchor_line(&text, "schedule_file"),
            message: format!("cannot read schedule file {full}: {e}"),
        })?;
        let rounds = parse_schedule_json(&json).map_err(|e| anchor_error(path, &text, e))?;
        cfg.topology.rounds = Some(rounds);
    }
    cfg.validate().map_err(|e| anchor_error(path, &text, e))?;
    Ok(cfg)
}
