//! Structured config loading (YAML or JSON) with diagnostics that name the
//! file, line and field at fault.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub file: Option<PathBuf>,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        ConfigError {
            file: None,
            line: None,
            column: None,
            field: None,
            message: message.into(),
        }
    }

    /// Error about a field of an already-parsed document; the line is
    /// recovered by searching the source text for the field path.
    pub fn field(source: &str, path: impl Into<String>, message: impl Into<String>) -> Self {
        let path = path.into();
        ConfigError {
            line: locate_field(source, &path),
            column: None,
            field: Some(path),
            file: None,
            message: message.into(),
        }
    }

    pub fn in_file(mut self, file: impl AsRef<Path>) -> Self {
        if self.file.is_none() {
            self.file = Some(file.as_ref().to_path_buf());
        }
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.file {
            Some(p) => write!(f, "{}", p.display())?,
            None => f.write_str("<input>")?,
        }
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
            if let Some(col) = self.column {
                write!(f, ":{col}")?;
            }
        }
        if let Some(field) = &self.field {
            write!(f, ": field `{field}`")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Deserializes YAML or JSON (JSON is accepted by the YAML parser).
pub fn parse_structured<T: DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    if text.trim().is_empty() {
        return Err(ConfigError::new("document is empty"));
    }
    let de = serde_yaml::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        let location = inner.location();
        let line = location
            .as_ref()
            .map(|l| l.line())
            .or_else(|| locate_field(text, &path));
        ConfigError {
            file: None,
            line,
            column: location.map(|l| l.column()),
            field: (path != ".").then_some(path),
            message: inner.to_string(),
        }
    })
}

pub fn read_file(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new(format!("cannot read file: {e}")).in_file(path))
}

pub fn load_file<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = read_file(path)?;
    parse_structured(&text).map_err(|e| e.in_file(path))
}

/// Best-effort line lookup for a dotted field path such as
/// `services[2].max_ram`: walks forward through the text matching each key.
pub fn locate_field(text: &str, path: &str) -> Option<usize> {
    let keys: Vec<&str> = path
        .split('.')
        .map(|seg| seg.split('[').next().unwrap_or(seg))
        .filter(|k| !k.is_empty())
        .collect();
    if keys.is_empty() {
        return None;
    }
    let lines: Vec<&str> = text.lines().collect();
    let mut from = 0;
    let mut found = None;
    for key in keys {
        let yaml = format!("{key}:");
        let json = format!("\"{key}\"");
        let hit = lines[from..].iter().position(|l| {
            let t = l.trim_start().trim_start_matches("- ");
            t.starts_with(&yaml) || t.starts_with(&json)
        })?;
        from += hit;
        found = Some(from + 1);
    }
    found
}
