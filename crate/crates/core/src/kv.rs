//! Flat `key = value` documents used for architecture, bounds, technology and
//! reward files. `#` starts a comment; blank lines are ignored.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct KvError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct KvDoc {
    entries: BTreeMap<String, (String, usize)>,
    order: Vec<String>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut doc = KvDoc::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| KvError {
                line,
                message: format!("expected `key = value`, found {body:?}"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(KvError {
                    line,
                    message: "empty key".into(),
                });
            }
            if doc
                .entries
                .insert(key.to_string(), (value.trim().to_string(), line))
                .is_some()
            {
                return Err(KvError {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
            doc.order.push(key.to_string());
        }
        Ok(doc)
    }

    /// Keys in file order.
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.1)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.0.as_str())
    }

    pub fn required(&self, key: &str) -> Result<&str, KvError> {
        self.raw(key).ok_or_else(|| KvError {
            line: 0,
            message: format!("missing key `{key}`"),
        })
    }

    pub fn get<T>(&self, key: &str) -> Result<T, KvError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.required(key)?;
        raw.parse().map_err(|e| self.bad(key, e))
    }

    pub fn get_opt<T>(&self, key: &str) -> Result<Option<T>, KvError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| self.bad(key, e)),
        }
    }

    pub fn bad(&self, key: &str, why: impl Display) -> KvError {
        KvError {
            line: self.line_of(key),
            message: format!("`{key}`: {why}"),
        }
    }

    /// Rejects any key for which `known` returns false.
    pub fn reject_unknown(&self, known: impl Fn(&str) -> bool) -> Result<(), KvError> {
        match self.keys().find(|k| !known(k)) {
            Some(k) => Err(KvError {
                line: self.line_of(k),
                message: format!("unknown key `{k}`"),
            }),
            None => Ok(()),
        }
    }

    pub fn check_version(&self, supported: u32) -> Result<(), KvError> {
        let v: u32 = self.get("format_version")?;
        if v != supported {
            return Err(self.bad(
                "format_version",
                format!("unsupported version {v}, expected {supported}"),
            ));
        }
        Ok(())
    }
}
