//! Flat `key = value` configuration files.
//!
//! One entry per line; `#` starts a comment; blank lines are ignored. Keys are
//! unique. Lists are comma-separated. Every parse error carries its line number.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: key `{key}`: {msg}")]
    Value { line: usize, key: String, msg: String },
    #[error("unknown key `{key}` (line {line})")]
    Unknown { line: usize, key: String },
}

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, (usize, String)>,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                msg: format!("expected `key = value`, got {body:?}"),
            })?;
            let key = k.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("invalid key {key:?}"),
                });
            }
            if entries.insert(key.to_string(), (line, v.trim().to_string())).is_some() {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self {
            entries,
            used: Default::default(),
        })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.borrow_mut().insert(key.to_string());
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse::<T>().map(Some).map_err(|e| ConfigError::Value {
                line: *line,
                key: key.to_string(),
                msg: e.to_string(),
            }),
        }
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn get_list<T>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.borrow_mut().insert(key.to_string());
        let Some((line, v)) = self.entries.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|item| {
                item.trim().parse::<T>().map_err(|e| ConfigError::Value {
                    line: *line,
                    key: key.to_string(),
                    msg: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    /// Builds a value error pinned to the line that defined `key`.
    pub fn invalid(&self, key: &str, msg: impl Into<String>) -> ConfigError {
        ConfigError::Value {
            line: self.entries.get(key).map_or(0, |(l, _)| *l),
            key: key.to_string(),
            msg: msg.into(),
        }
    }

    /// Fails on the first key that no getter asked for.
    pub fn reject_unknown(&self) -> Result<(), ConfigError> {
        let used = self.used.borrow();
        match self
            .entries
            .iter()
            .filter(|(k, _)| !used.contains(*k))
            .min_by_key(|(_, (line, _))| *line)
        {
            Some((key, (line, _))) => Err(ConfigError::Unknown {
                line: *line,
                key: key.clone(),
            }),
            None => Ok(()),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_lists_and_comments() {
        let c = KvConfig::parse("# header\nepochs = 12\n\nwidths = 8, 16,32 # trailing\nname=x\n").unwrap();
        assert_eq!(c.get::<usize>("epochs").unwrap(), Some(12));
        assert_eq!(c.get_list::<usize>("widths").unwrap(), Some(vec![8, 16, 32]));
        assert_eq!(c.raw("name"), Some("x"));
        assert_eq!(c.get_or("missing", 3.5).unwrap(), 3.5);
        c.reject_unknown().unwrap();
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = KvConfig::parse("a = 1\nno equals here\n").unwrap_err();
        assert_eq!(
            e,
            ConfigError::Syntax {
                line: 2,
                msg: "expected `key = value`, got \"no equals here\"".into()
            }
        );
        let c = KvConfig::parse("a = 1\n\nb = x\n").unwrap();
        let e = c.get::<f64>("b").unwrap_err();
        assert!(matches!(e, ConfigError::Value { line: 3, .. }));
        assert!(KvConfig::parse("a=1\na=2").is_err());
        let c = KvConfig::parse("a = 1\nzzz = 2").unwrap();
        c.get::<u8>("a").unwrap();
        assert_eq!(
            c.reject_unknown(),
            Err(ConfigError::Unknown {
                line: 2,
                key: "zzz".into()
            })
        );
    }
}
