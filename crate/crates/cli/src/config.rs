//! Experiment configuration: a TOML file plus `--key value` overrides.
//!
//! ```toml
//! schema_version = 1
//! experiment = "pair-decay"
//! seed = 7
//! output_dir = "out/pair"
//!
//! [parameters]
//! alpha = 1.0
//! n = 100
//! ```

use crate::error::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use toml::{Table, Value};

pub const SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_seed() -> u64 {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("pilotwave-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub experiment: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub parameters: Table,
}

/// Command-line pieces that override or complete a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub experiment: Option<String>,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Raw `--key value` / `--key=value` tokens.
    pub flags: Vec<String>,
}

pub fn parse_file(path: &Path) -> CliResult<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.parse::<Table>()
        .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))
}

/// Typed scalar from a flag value; anything that is not a TOML literal stays a string.
pub fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Split `--key value` tokens into a table; dashes in keys become underscores.
pub fn parse_flags(flags: &[String]) -> CliResult<Table> {
    let mut out = Table::new();
    let mut i = 0;
    while i < flags.len() {
        let tok = &flags[i];
        let body = tok.strip_prefix("--").ok_or_else(|| {
            CliError::Config(format!(
                "unexpected argument {tok:?}; parameters are given as --key value"
            ))
        })?;
        let (key, raw) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = flags
                    .get(i + 1)
                    .ok_or_else(|| CliError::Config(format!("flag --{body} needs a value")))?;
                i += 1;
                (body.to_string(), v.clone())
            }
        };
        if key.is_empty() {
            return Err(CliError::Config("empty flag name".into()));
        }
        out.insert(key.replace('-', "_"), parse_value(&raw));
        i += 1;
    }
    Ok(out)
}

impl ExperimentConfig {
    /// File values first, then command-line values on top.
    pub fn resolve(o: &Overrides) -> CliResult<Self> {
        let mut table = match &o.config {
            Some(p) => parse_file(p)?,
            None => Table::new(),
        };
        let mut flags = parse_flags(&o.flags)?;
        let mut seed = o.seed;
        let mut out = o.out.clone();
        // top-level keys given after the experiment name
        if let Some(v) = flags.remove("seed") {
            seed = Some(v.as_integer().filter(|s| *s >= 0).ok_or_else(|| {
                CliError::Config("seed must be a non-negative integer".into()).in_field("seed")
            })? as u64);
        }
        if let Some(v) = flags.remove("out") {
            out = Some(PathBuf::from(
                v.as_str()
                    .map(str::to_string)
                    .unwrap_or_else(|| v.to_string()),
            ));
        }
        if flags.contains_key("config") {
            return Err(CliError::Config(
                "--config must precede parameter flags".into(),
            ));
        }
        if let Some(e) = &o.experiment {
            table.insert("experiment".into(), Value::String(e.clone()));
        }
        if let Some(s) = seed {
            let s = i64::try_from(s)
                .map_err(|_| CliError::Config("seed too large".into()).in_field("seed"))?;
            table.insert("seed".into(), Value::Integer(s));
        }
        if let Some(p) = out {
            table.insert("output_dir".into(), Value::String(p.display().to_string()));
        }
        if !flags.is_empty() {
            let params = table
                .entry("parameters")
                .or_insert_with(|| Value::Table(Table::new()));
            let params = params.as_table_mut().ok_or_else(|| {
                CliError::Config("parameters must be a table".into()).in_field("parameters")
            })?;
            params.extend(flags);
        }
        if !table.contains_key("experiment") {
            return Err(CliError::Config(
                "no experiment given (positional name or `experiment` key)".into(),
            ));
        }
        Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config tables always serialize")
    }
}
