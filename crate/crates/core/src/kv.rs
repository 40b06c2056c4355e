//! Plain-text `key = value` files: one entry per line, `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    entries: Vec<(String, String, usize)>,
}

impl KvFile {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries: Vec<(String, String, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::data(origin, i + 1, format!("expected `key = value`, got `{line}`")));
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::data(origin, i + 1, "empty key"));
            }
            if entries.iter().any(|(existing, _, _)| *existing == key) {
                return Err(Error::data(origin, i + 1, format!("duplicate key `{key}`")));
            }
            entries.push((key, v.trim().to_string(), i + 1));
        }
        Ok(KvFile { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KvFile::parse(&text, path)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, _)| v.as_str())
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entries
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, _, l)| *l)
            .unwrap_or(0)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _, _)| k.as_str())
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string(), 0));
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v, _)| (k.as_str(), v.as_str()))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v, _) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Parses a value with a message naming the key.
pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let f = KvFile::parse("# hi\n\na = 1\n b=two words \n", Path::new("x")).unwrap();
        assert_eq!(f.get("a"), Some("1"));
        assert_eq!(f.get("b"), Some("two words"));
        assert_eq!(f.line_of("b"), 4);
        assert_eq!(f.get("c"), None);
    }

    #[test]
    fn rejects_malformed_and_duplicates() {
        let err = KvFile::parse("a = 1\nnope\n", Path::new("cfg")).unwrap_err();
        assert!(err.to_string().contains("cfg:2"), "{err}");
        assert!(KvFile::parse("a=1\na=2", Path::new("cfg")).is_err());
    }

    #[test]
    fn render_roundtrip() {
        let mut f = KvFile::default();
        f.push("x", 3);
        f.push("y", "a,b");
        let back = KvFile::parse(&f.render(), Path::new("r")).unwrap();
        assert_eq!(back.get("x"), Some("3"));
        assert_eq!(back.get("y"), Some("a,b"));
    }
}
