//! Flat key-value run configuration: `section.key = value` lines, `#`
//! comments, later assignments win. Command-line `--set key=value` overrides
//! are applied on top and recorded alongside file values in the manifest.

use crate::CliError;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::usage(format!(
                    "{}:{}: expected `key = value`, got `{line}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim());
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.to_string(), value.to_string());
    }

    /// Apply a `key=value` override from the command line.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), CliError> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects key=value, got `{spec}`")))?;
        self.set(key.trim(), value.trim());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::usage(format!("missing required config key `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, raw: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        raw.parse().map_err(|e| {
            CliError::usage(format!("config key `{key}`: cannot parse `{raw}`: {e}"))
        })
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.get(key) {
            Some(raw) => self.parse(key, raw),
            None => Ok(default),
        }
    }

    pub fn f64_required(&self, key: &str) -> Result<f64, CliError> {
        let raw = self.require(key)?;
        self.parse(key, raw)
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize, CliError> {
        match self.get(key) {
            Some(raw) => self.parse(key, raw),
            None => Ok(default),
        }
    }

    pub fn usize_required(&self, key: &str) -> Result<usize, CliError> {
        let raw = self.require(key)?;
        self.parse(key, raw)
    }

    pub fn u32(&self, key: &str, default: u32) -> Result<u32, CliError> {
        match self.get(key) {
            Some(raw) => self.parse(key, raw),
            None => Ok(default),
        }
    }

    pub fn u64(&self, key: &str, default: u64) -> Result<u64, CliError> {
        match self.get(key) {
            Some(raw) => self.parse(key, raw),
            None => Ok(default),
        }
    }

    /// Comma-separated list of reals, e.g. `loss.g = 0.1, 0.1`.
    pub fn vec_f64_required(&self, key: &str) -> Result<Vec<f64>, CliError> {
        let raw = self.require(key)?;
        raw.split(',')
            .map(|tok| self.parse(key, tok.trim()))
            .collect()
    }

    pub fn vec_f64(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        match self.get(key) {
            Some(_) => self.vec_f64_required(key).map(Some),
            None => Ok(None),
        }
    }

    /// Render the fully resolved configuration for embedding in a manifest.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
