//! Line-oriented `key = value` configuration with `[section]` headers,
//! canonicalization and content digests. Values are kept as raw strings so
//! documents round-trip losslessly.

use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// A parsed configuration document. Keys outside any header live in the
/// unnamed section "".
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigDoc {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigDoc {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parse a document. All offending lines are reported together, not
    /// just the first one.
    pub fn parse(text: &str) -> Result<ConfigDoc> {
        let mut doc = ConfigDoc::new();
        let mut section = String::new();
        let mut problems = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                match name.strip_suffix(']') {
                    Some(n) if !n.trim().is_empty() => section = n.trim().to_string(),
                    _ => problems.push(format!(
                        "line {}: malformed section header `{raw}`",
                        lineno + 1
                    )),
                }
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => {
                    let key = k.trim().to_string();
                    let entry = doc.sections.entry(section.clone()).or_default();
                    if entry.insert(key.clone(), v.trim().to_string()).is_some() {
                        problems.push(format!(
                            "line {}: duplicate key `{key}` in section `[{section}]`",
                            lineno + 1
                        ));
                    }
                }
                _ => problems.push(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )),
            }
        }
        if problems.is_empty() {
            Ok(doc)
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.trim().to_string());
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|s| s.as_str())
    }

    pub fn get_f64(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("[{section}] {key}: `{v}` is not a number"))),
        }
    }

    pub fn get_u64(&self, section: &str, key: &str, default: u64) -> Result<u64> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("[{section}] {key}: `{v}` is not an integer"))),
        }
    }

    pub fn get_usize(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        Ok(self.get_u64(section, key, default as u64)? as usize)
    }

    pub fn get_bool(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.get(section, key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(v) => Err(Error::Config(format!(
                "[{section}] {key}: `{v}` is not a boolean"
            ))),
        }
    }

    /// Comma-separated list of numbers.
    pub fn get_f64_list(&self, section: &str, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(section, key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim().parse().map_err(|_| {
                        Error::Config(format!("[{section}] {key}: `{p}` is not a number"))
                    })
                })
                .collect(),
        }
    }

    /// Canonical text: sections and keys sorted, single-space `key = value`
    /// lines, unnamed section first without a header.
    pub fn canonical_string(&self) -> String {
        let mut out = String::new();
        for (name, entries) in &self.sections {
            if entries.is_empty() {
                continue;
            }
            if !name.is_empty() {
                out.push_str(&format!("[{name}]\n"));
            }
            for (k, v) in entries {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    /// Hex SHA-256 of the canonical text: the cache key.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical_string().as_bytes());
        let out = h.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\n# comment\nseed = 42\n[field]\nkind = bump_gradient\neta = 0.25\n\n[quadrature]\ntol = 1e-6\n";

    #[test]
    fn parse_and_access() {
        let doc = ConfigDoc::parse(SAMPLE).unwrap();
        assert_eq!(doc.get("", "seed"), Some("42"));
        assert_eq!(doc.get("field", "kind"), Some("bump_gradient"));
        assert_eq!(doc.get_f64("field", "eta", 1.0).unwrap(), 0.25);
        assert_eq!(doc.get_f64("field", "missing", 7.0).unwrap(), 7.0);
        assert!(doc.get_f64("field", "kind", 0.0).is_err());
    }

    #[test]
    fn round_trip_is_lossless() {
        let doc = ConfigDoc::parse(SAMPLE).unwrap();
        let text = doc.canonical_string();
        let again = ConfigDoc::parse(&text).unwrap();
        assert_eq!(doc, again);
        assert_eq!(text, again.canonical_string());
    }

    #[test]
    fn all_problems_reported_at_once() {
        let bad = "good = 1\nnonsense line\n[broken\n= nokey\n";
        let err = ConfigDoc::parse(bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn duplicate_keys_rejected() {
        let err = ConfigDoc::parse("a = 1\na = 2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate key `a`"));
    }

    #[test]
    fn digest_sensitive_to_single_digit() {
        let a = ConfigDoc::parse("tol = 1e-6\n").unwrap();
        let b = ConfigDoc::parse("tol = 1e-7\n").unwrap();
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        // Whitespace and ordering do not matter.
        let c = ConfigDoc::parse("  tol=1e-6  \n").unwrap();
        assert_eq!(a.digest(), c.digest());
    }

    #[test]
    fn list_parsing() {
        let doc = ConfigDoc::parse("radii = 1, 2.5, 8\n").unwrap();
        assert_eq!(
            doc.get_f64_list("", "radii", &[]).unwrap(),
            vec![1.0, 2.5, 8.0]
        );
        assert_eq!(doc.get_f64_list("", "none", &[3.0]).unwrap(), vec![3.0]);
    }
}
