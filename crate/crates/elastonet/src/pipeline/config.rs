//! Flat key = value configuration files with named sections.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Identifies a configuration parsing or lookup failure
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value` or `[section]`, got `{content}`")]
    BadLine { line: usize, content: String },
    #[error("[{section}] {key}: cannot parse `{value}` as {expected}")]
    BadValue { section: String, key: String, value: String, expected: &'static str },
    #[error("[{section}] {key} is required but missing")]
    Missing { section: String, key: String },
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

/// Holds a configuration as ordered sections of key = value pairs
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Config {
    /// Returns an empty configuration
    pub fn new() -> Self {
        Config::default()
    }

    /// Parses the text form: `[section]` headers, `key = value` lines, `#`
    /// comments, and blank lines
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut out = Config::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                out.sections.entry(section.clone()).or_default();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine { line: idx + 1, content: raw.to_string() });
            };
            out.set(&section, key.trim(), value.trim());
        }
        Ok(out)
    }

    /// Loads a configuration from a file
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    /// Serializes to the canonical text form with sorted sections and keys
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, entries) in &self.sections {
            if entries.is_empty() {
                continue;
            }
            if !out.is_empty() {
                out.push('\n');
            }
            let _ = writeln!(out, "[{name}]");
            for (key, value) in entries {
                let _ = writeln!(out, "{key} = {value}");
            }
        }
        out
    }

    /// Stores one value, creating the section if needed
    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    /// Returns a raw value if present
    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|s| s.get(key)).map(String::as_str)
    }

    /// Overlays another configuration on top of this one; the other side wins
    pub fn merge(&mut self, other: &Config) {
        for (name, entries) in &other.sections {
            for (key, value) in entries {
                self.set(name, key, value);
            }
        }
    }

    /// Returns a string value or a default
    pub fn str_or(&self, section: &str, key: &str, default: &str) -> String {
        self.get(section, key).unwrap_or(default).to_string()
    }

    /// Returns a required string value
    pub fn require(&self, section: &str, key: &str) -> Result<String, ConfigError> {
        self.get(section, key).map(str::to_string).ok_or_else(|| ConfigError::Missing {
            section: section.to_string(),
            key: key.to_string(),
        })
    }

    /// Returns a float value or a default
    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        self.parse_or(section, key, default, "a float")
    }

    /// Returns an unsigned integer value or a default
    pub fn u64_or(&self, section: &str, key: &str, default: u64) -> Result<u64, ConfigError> {
        self.parse_or(section, key, default, "an unsigned integer")
    }

    /// Returns a count value or a default
    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize, ConfigError> {
        self.parse_or(section, key, default, "a count")
    }

    /// Returns a boolean (`true`/`false`) value or a default
    pub fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool, ConfigError> {
        self.parse_or(section, key, default, "true or false")
    }

    fn parse_or<T: std::str::FromStr>(
        &self,
        section: &str,
        key: &str,
        default: T,
        expected: &'static str,
    ) -> Result<T, ConfigError> {
        match self.get(section, key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| ConfigError::BadValue {
                section: section.to_string(),
                key: key.to_string(),
                value: raw.to_string(),
                expected,
            }),
        }
    }
}

////////////////////////////////////////////////////////////////////////////////

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_values() {
        let text = "# experiment setup\n[experiment]\nseed = 42\nkind = benchmark1\n\n[elastic]\nresolution = 50\neps_v_min = -0.02\nflag = true\n";
        let cfg = Config::parse(text).unwrap();
        assert_eq!(cfg.get("experiment", "kind"), Some("benchmark1"));
        assert_eq!(cfg.u64_or("experiment", "seed", 0).unwrap(), 42);
        assert_eq!(cfg.usize_or("elastic", "resolution", 10).unwrap(), 50);
        assert_eq!(cfg.f64_or("elastic", "eps_v_min", 0.0).unwrap(), -0.02);
        assert!(cfg.bool_or("elastic", "flag", false).unwrap());
        assert_eq!(cfg.f64_or("elastic", "absent", 1.5).unwrap(), 1.5);
    }

    #[test]
    fn round_trips_through_canonical_text() {
        let mut cfg = Config::new();
        cfg.set("b", "z", "1");
        cfg.set("b", "a", "2");
        cfg.set("a", "k", "v");
        let text = cfg.to_text();
        let back = Config::parse(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(text, back.to_text());
        // sections and keys are sorted for byte-stable output
        assert!(text.find("[a]").unwrap() < text.find("[b]").unwrap());
    }

    #[test]
    fn merge_overrides_and_extends() {
        let mut base = Config::parse("[x]\na = 1\nb = 2\n").unwrap();
        let over = Config::parse("[x]\nb = 3\n[y]\nc = 4\n").unwrap();
        base.merge(&over);
        assert_eq!(base.get("x", "a"), Some("1"));
        assert_eq!(base.get("x", "b"), Some("3"));
        assert_eq!(base.get("y", "c"), Some("4"));
    }

    #[test]
    fn reports_bad_lines_and_values() {
        let err = Config::parse("[x]\nnonsense\n").unwrap_err();
        assert!(matches!(err, ConfigError::BadLine { line: 2, .. }));
        let cfg = Config::parse("[x]\nn = lots\n").unwrap();
        assert!(matches!(
            cfg.u64_or("x", "n", 0),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(cfg.require("x", "gone"), Err(ConfigError::Missing { .. })));
    }
}
