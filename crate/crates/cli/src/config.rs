//! Plain `key=value` configuration files.
//!
//! Precedence is flag, then file, then built-in default. Blank lines and
//! lines starting with `#` are skipped.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

pub const KEYS: [&str; 13] = [
    "seed",
    "trials",
    "tolerance",
    "scenes",
    "steps",
    "gamma",
    "no_iafa",
    "lr",
    "iafa_lr_scale",
    "suite",
    "metric",
    "criterion",
    "classes",
];

#[derive(Clone, Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, (String, usize)>,
    source: String,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(ConfigFile::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text, &p.display().to_string())
            }
        }
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| anyhow!("{source}:{}: expected key=value, got `{line}`", i + 1))?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                bail!("{source}:{}: unknown key `{k}`", i + 1);
            }
            if values.insert(k.to_string(), (v.trim().to_string(), i + 1)).is_some() {
                bail!("{source}:{}: duplicate key `{k}`", i + 1);
            }
        }
        Ok(ConfigFile { values, source: source.to_string() })
    }

    /// Flag value if given, else the file's value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some((raw, line)) => {
                raw.parse().map_err(|e| anyhow!("{}:{line}: bad value `{raw}` for `{key}`: {e}", self.source))
            }
            None => Ok(default),
        }
    }

    /// Boolean switch: a set flag wins, otherwise the file decides.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool> {
        self.pick(flag.then_some(true), key, false)
    }
}
