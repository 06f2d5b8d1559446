//! Flat `key=value` files, used both for run configs and manifests.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{origin}: line {line}: {message}")]
    Syntax {
        origin: String,
        line: usize,
        message: String,
    },
    #[error("{origin}: key `{key}` (line {line}): {message}")]
    Value {
        origin: String,
        key: String,
        line: usize,
        message: String,
    },
    #[error("{origin}: unknown key `{key}` (line {line})")]
    Unknown {
        origin: String,
        key: String,
        line: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    origin: String,
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |message: String| ConfigError::Syntax {
                origin: origin.into(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected `key=value`, found `{line}`")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(syntax("empty key".into()));
            }
            if entries
                .insert(key.to_string(), (value.trim().to_string(), i + 1))
                .is_some()
            {
                return Err(syntax(format!("duplicate key `{key}`")));
            }
        }
        Ok(Self {
            origin: origin.into(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    /// Parsed value of `key`, if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|e: T::Err| ConfigError::Value {
                origin: self.origin.clone(),
                key: key.into(),
                line: *line,
                message: e.to_string(),
            }),
        }
    }

    /// Fails on the first key not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<(), ConfigError> {
        match self
            .entries
            .iter()
            .find(|(k, _)| !known.contains(&k.as_str()))
        {
            Some((k, (_, line))) => Err(ConfigError::Unknown {
                origin: self.origin.clone(),
                key: k.clone(),
                line: *line,
            }),
            None => Ok(()),
        }
    }
}

/// Resolves one setting: the flag wins, then the config file, then `default`.
pub fn resolve<T: FromStr>(
    flag: Option<T>,
    config: &KeyValues,
    key: &str,
    default: T,
) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    match flag {
        Some(v) => Ok(v),
        None => Ok(config.get(key)?.unwrap_or(default)),
    }
}

/// An ordered `key=value` record written next to every run's outputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn push(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.render()).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
