//! `key = value` run configuration files merged under command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use uhnet_core::Error;

/// Every key any subcommand reads.
pub const KNOWN_KEYS: &[&str] = &[
    "preset",
    "block",
    "transition",
    "norm",
    "manifest",
    "split",
    "checkpoint",
    "output",
    "epochs",
    "batch_size",
    "max_steps",
    "lr",
    "weight_decay",
    "augment",
    "shuffle",
    "gamma_lo",
    "gamma_hi",
    "seed",
    "preds",
    "max_dist",
    "thresholds",
    "thin",
    "nms",
    "size",
    "iters",
    "warmup",
    "format",
];

#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, (String, usize)>,
    source: String,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Blank lines and `#` comments are skipped; keys may appear once.
    pub fn parse(text: &str, source: &str) -> Result<Self, Error> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{source}:{line_no}: expected key = value")))?;
            let key = key.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("{source}:{line_no}: unknown key '{key}'")));
            }
            if values.insert(key.clone(), (value.trim().to_string(), line_no)).is_some() {
                return Err(Error::Config(format!("{source}:{line_no}: duplicate key '{key}'")));
            }
        }
        Ok(Self {
            values,
            source: source.to_string(),
        })
    }

    /// The flag value if given, else the file value, else `None`.
    pub fn pick<T>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, Error>
    where
        T: FromStr,
        T::Err: Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "{key}");
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|e| {
                Error::Config(format!("{}:{line}: bad value '{v}' for '{key}': {e}", self.source))
            }),
        }
    }

    pub fn or<T>(&self, key: &str, flag: Option<T>, default: T) -> Result<T, Error>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick(key, flag)?.unwrap_or(default))
    }

    pub fn required<T>(&self, key: &str, flag: Option<T>) -> Result<T, Error>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.pick(key, flag)?
            .ok_or_else(|| Error::Usage(format!("missing --{} (or '{key}' in the config file)", key.replace('_', "-"))))
    }
}
