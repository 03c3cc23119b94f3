//! Plain-text key-value files with optional `[section]` headers.
//!
//! Used for dataset manifests, model config files, and the config echo
//! embedded in checkpoints. Lines are `key = value`; `#` starts a comment.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    /// (section, key, value); the root section is "".
    entries: Vec<(String, String, String)>,
}

impl KvFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return Err(Error::Config(format!(
                        "line {}: malformed section header {line:?}",
                        lineno + 1
                    )));
                }
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {line:?}", lineno + 1))
            })?;
            entries.push((section.clone(), key.trim().to_string(), value.trim().to_string()));
        }
        Ok(KvFile { entries })
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        self.entries
            .push((section.to_string(), key.to_string(), value.to_string()));
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(s, k, _)| s == section && k == key)
            .map(|(_, _, v)| v.as_str())
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(section, key).ok_or_else(|| {
            Error::Config(if section.is_empty() {
                format!("missing key {key:?}")
            } else {
                format!("missing key {key:?} in section [{section}]")
            })
        })
    }

    pub fn sections(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for (s, _, _) in &self.entries {
            if !seen.contains(&s.as_str()) {
                seen.push(s.as_str());
            }
        }
        seen
    }

    /// Render in parse-compatible form; stable ordering (insertion order,
    /// root section first).
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut current: Option<&str> = None;
        for (s, k, v) in &self.entries {
            if current != Some(s.as_str()) {
                if s.is_empty() {
                    debug_assert!(current.is_none(), "root entries must come first");
                } else {
                    out.push_str(&format!("[{s}]\n"));
                }
                current = Some(s.as_str());
            }
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

/// `value` as a comma-separated list parsed by `F`.
pub fn parse_list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("bad list element {:?}", tok.trim())))
        })
        .collect()
}

pub fn parse_scalar<T: std::str::FromStr>(value: &str, what: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| Error::Config(format!("bad {what}: {value:?}")))
}
