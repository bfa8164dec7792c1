//! Ordered `key = value` manifests whose first entry names the format.

use std::path::Path;

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(format: &str) -> Self {
        Self {
            entries: vec![("format".into(), format.into())],
        }
    }

    /// Sets `key`, replacing an earlier value in place.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.into(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str, origin: &Path) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::format(origin, format!("missing `{key}`")))
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parses `text`; with `format` given, the `format` entry must match.
    pub fn parse(text: &str, format: Option<&str>, origin: &Path) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(origin, format!("expected `key = value`, got `{line}`")))?;
            let k = k.trim();
            if entries.iter().any(|(e, _)| e == k) {
                return Err(Error::format(origin, format!("repeated `{k}`")));
            }
            entries.push((k.to_string(), v.trim().to_string()));
        }
        let m = Self { entries };
        if let Some(want) = format {
            match m.get("format") {
                Some(got) if got == want => {}
                got => {
                    return Err(Error::format(
                        origin,
                        format!("expected format `{want}`, found `{}`", got.unwrap_or("none")),
                    ))
                }
            }
        }
        Ok(m)
    }

    pub fn load(path: &Path, format: Option<&str>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).at(path)?, format, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).at(path)
    }
}
