//! Run provenance and the flat key-value config file.
//!
//! A config file is TOML restricted to top-level `key = value` pairs. Keys use
//! the long flag names with `_` for `-` (`force_threshold`, `batch_size`).
//! Command-line flags override file values, which override built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config {path}: unknown key `{key}` for this command")]
    UnknownKey { path: PathBuf, key: String },
    #[error("config key `{key}`: {message}")]
    BadValue { key: String, message: String },
}

/// Values read from a config file, keyed by option name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    path: Option<PathBuf>,
    values: BTreeMap<String, toml::Value>,
}

impl FileConfig {
    pub fn empty() -> Self {
        FileConfig::default()
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn load_optional(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map_or_else(|| Ok(Self::empty()), Self::load)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.message().to_string(),
        })?;
        let mut values = BTreeMap::new();
        for (key, value) in table {
            if matches!(value, toml::Value::Table(_) | toml::Value::Array(_)) {
                return Err(ConfigError::Parse {
                    path: path.to_path_buf(),
                    message: format!("`{key}` must be a plain value; only flat key = value pairs are allowed"),
                });
            }
            values.insert(key.replace('-', "_"), value);
        }
        Ok(FileConfig {
            path: Some(path.to_path_buf()),
            values,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Fails on the first key not in `allowed`, so typos do not go unnoticed.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        match self.values.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(key) => Err(ConfigError::UnknownKey {
                path: self.path.clone().unwrap_or_default(),
                key: key.clone(),
            }),
            None => Ok(()),
        }
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.values
            .get(key)
            .map(|v| {
                v.clone().try_into().map_err(|e: toml::de::Error| ConfigError::BadValue {
                    key: key.into(),
                    message: e.message().to_string(),
                })
            })
            .transpose()
    }

    /// Like [`get`](Self::get) for values spelled as strings, e.g. `case = "upper"`.
    pub fn get_parsed<T>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => s.parse().map(Some).map_err(|e: T::Err| ConfigError::BadValue {
                key: key.into(),
                message: e.to_string(),
            }),
            Some(other) => other
                .to_string()
                .parse()
                .map(Some)
                .map_err(|e: T::Err| ConfigError::BadValue {
                    key: key.into(),
                    message: e.to_string(),
                }),
        }
    }

    /// Flag value if given, else file value, else `default`.
    pub fn resolve<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, ConfigError> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    pub fn resolve_parsed<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, ConfigError>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get_parsed(key)?.unwrap_or(default)),
        }
    }

    /// Required option: flag, else file value.
    pub fn require<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<T, ConfigError> {
        match flag {
            Some(v) => Ok(v),
            None => self.get(key)?.ok_or_else(|| ConfigError::BadValue {
                key: key.into(),
                message: "missing; pass the flag or set it in the config file".into(),
            }),
        }
    }
}

/// Fully resolved options of one command invocation, embedded in every
/// artifact the command writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub options: BTreeMap<String, serde_json::Value>,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        RunConfig {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            options: BTreeMap::new(),
        }
    }

    pub fn set<V: Serialize>(&mut self, key: &str, value: V) -> &mut Self {
        let v = serde_json::to_value(value).expect("option values serialize to JSON");
        self.options.insert(key.into(), v);
        self
    }

    pub fn with<V: Serialize>(mut self, key: &str, value: V) -> Self {
        self.set(key, value);
        self
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    /// Single-line JSON, for `#` comment headers in CSV files.
    pub fn to_compact_json(&self) -> String {
        serde_json::to_string(self).expect("run config serializes")
    }
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> std::io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<FileConfig, ConfigError> {
        FileConfig::parse(text, Path::new("test.toml"))
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let f = parse("epochs = 7\nlearning_rate = 0.01\n").unwrap();
        assert_eq!(f.resolve(Some(3usize), "epochs", 50).unwrap(), 3);
        assert_eq!(f.resolve(None, "epochs", 50usize).unwrap(), 7);
        assert_eq!(f.resolve(None, "batch_size", 64usize).unwrap(), 64);
        assert_eq!(f.resolve(None, "learning_rate", 0.001f64).unwrap(), 0.01);
    }

    #[test]
    fn dashes_in_keys_are_normalized() {
        let f = parse("force-threshold = 0.3").unwrap();
        assert_eq!(f.get::<f64>("force_threshold").unwrap(), Some(0.3));
    }

    #[test]
    fn nested_tables_and_bad_types_are_rejected() {
        assert!(matches!(parse("[train]\nepochs = 1"), Err(ConfigError::Parse { .. })));
        assert!(matches!(parse("epochs = [1, 2]"), Err(ConfigError::Parse { .. })));
        assert!(matches!(parse("epochs = "), Err(ConfigError::Parse { .. })));
        let f = parse("epochs = \"many\"").unwrap();
        assert!(matches!(f.get::<usize>("epochs"), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn unknown_keys() {
        let f = parse("epohcs = 3").unwrap();
        assert!(matches!(f.check_keys(&["epochs"]), Err(ConfigError::UnknownKey { .. })));
        assert!(parse("epochs = 3").unwrap().check_keys(&["epochs"]).is_ok());
    }

    #[test]
    fn parsed_values() {
        let f = parse("case = \"lower\"\nseed = 4").unwrap();
        let c: Option<crate::LetterCase> = f.get_parsed("case").unwrap();
        assert_eq!(c, Some(crate::LetterCase::Lower));
        let s: Option<u64> = f.get_parsed("seed").unwrap();
        assert_eq!(s, Some(4));
    }

    #[test]
    fn run_config_is_stable_json() {
        let a = RunConfig::new("train").with("seed", 1u64).with("epochs", 50usize);
        let b = RunConfig::new("train").with("epochs", 50usize).with("seed", 1u64);
        assert_eq!(a.to_compact_json(), b.to_compact_json());
        assert!(a.to_compact_json().starts_with("{\"tool\":\"penhwr\""));
    }
}
