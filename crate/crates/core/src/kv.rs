//! Flat `key = value` parameter files (`#` starts a comment).

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

#[derive(Debug)]
pub struct KvDoc {
    origin: String,
    entries: BTreeMap<String, (String, usize)>,
    consumed: BTreeSet<String>,
}

impl KvDoc {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                path: origin.to_string(),
                line: line_no,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), (v.trim().to_string(), line_no)).is_some() {
                return Err(Error::Config {
                    path: origin.to_string(),
                    line: line_no,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(KvDoc {
            origin: origin.to_string(),
            entries,
            consumed: BTreeSet::new(),
        })
    }

    pub fn take_f64(&mut self, key: &str) -> Result<f64> {
        self.consumed.insert(key.to_string());
        match self.entries.get(key) {
            Some((v, line)) => v.parse::<f64>().map_err(|_| Error::Config {
                path: self.origin.clone(),
                line: *line,
                message: format!("`{key}` must be a number, found `{v}`"),
            }),
            None => Err(Error::Config {
                path: self.origin.clone(),
                line: 0,
                message: format!("missing key `{key}`"),
            }),
        }
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map(|e| e.1).unwrap_or(0)
    }

    /// Fails on any key that was not consumed.
    pub fn check_unknown(&self) -> Result<()> {
        let unknown = self
            .entries
            .iter()
            .filter(|(k, _)| !self.consumed.contains(*k))
            .min_by_key(|e| (e.1).1);
        if let Some((k, (_, line))) = unknown {
            return Err(Error::Config {
                path: self.origin.clone(),
                line: *line,
                message: format!("unknown key `{k}`"),
            });
        }
        Ok(())
    }

    /// Attaches the line of the offending key to a validation error.
    pub fn locate(&self, err: Error) -> Error {
        let line = match &err {
            Error::Invalid { field, .. } => self.line_of(field.rsplit('.').next().unwrap_or(field)),
            _ => 0,
        };
        Error::Config {
            path: self.origin.clone(),
            line,
            message: err.to_string(),
        }
    }
}

pub fn write_kv(pairs: &[(&str, f64)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(&v.to_string());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_reports_lines() {
        let mut d = KvDoc::parse("# header\na = 1.5\n\nb=2 # trailing\n", "x.kv").unwrap();
        assert_eq!(d.take_f64("a").unwrap(), 1.5);
        assert_eq!(d.line_of("b"), 4);
        assert_eq!(d.take_f64("b").unwrap(), 2.0);
        d.check_unknown().unwrap();
    }

    #[test]
    fn rejects_unknown_missing_and_malformed() {
        let d = KvDoc::parse("a = 1\nzzz = 2\n", "x").unwrap();
        let err = d.check_unknown().unwrap_err().to_string();
        assert!(err.contains("x:1") && err.contains("unknown key `a`"), "{err}");
        let mut d = KvDoc::parse("a = nope\n", "x").unwrap();
        assert!(d.take_f64("a").unwrap_err().to_string().contains("x:1"));
        assert!(d.take_f64("b").unwrap_err().to_string().contains("missing"));
        assert!(KvDoc::parse("just words\n", "x").is_err());
        assert!(KvDoc::parse("a=1\na=2\n", "x").unwrap_err().to_string().contains("x:2"));
    }

    #[test]
    fn validation_errors_point_at_key() {
        let d = KvDoc::parse("a = 1\nnu = 2\n", "f").unwrap();
        let err = d.locate(Error::invalid("decoy.nu", "bad")).to_string();
        assert!(err.starts_with("f:2:"), "{err}");
    }
}
