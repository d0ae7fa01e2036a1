//! Flat `key = value` config text: diff-friendly, no external parser.
//! Lines are `key = value`, blank, or `#` comments. Type checking happens at
//! the typed getters so errors carry the offending line number.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct FlatConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: line_no,
                    message: format!("expected `key = value`, got `{raw}`"),
                });
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config {
                    line: line_no,
                    message: "empty key".into(),
                });
            }
            if entries.contains_key(&key) {
                return Err(Error::Config {
                    line: line_no,
                    message: format!("duplicate key `{key}`"),
                });
            }
            entries.insert(key, (line_no, value.trim().to_string()));
        }
        Ok(FlatConfig { entries })
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), (0, value.to_string()));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn typed<V>(&self, key: &str, kind: &str, parse: impl Fn(&str) -> Option<V>) -> Result<Option<V>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, raw)) => match parse(raw) {
                Some(v) => Ok(Some(v)),
                None => Err(Error::Config {
                    line: *line,
                    message: format!("`{key} = {raw}` is not a valid {kind}"),
                }),
            },
        }
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.typed(key, "number", |s| s.parse().ok())
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.typed(key, "unsigned integer", |s| s.parse().ok())
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.typed(key, "unsigned integer", |s| s.parse().ok())
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.typed(key, "bool (true/false)", |s| match s {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        })
    }

    /// Serialize to the same text format (sorted keys; values round-trip).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, (_, v)) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}
