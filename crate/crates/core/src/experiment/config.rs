//! `key=value` configuration files with flag overrides.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parses `key=value` lines. Blank lines and `#` comments are skipped;
/// later keys replace earlier ones.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: "<config>".into(),
            line: lineno + 1,
            msg: format!("expected key=value, got '{line}'"),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse {
                path: "<config>".into(),
                line: lineno + 1,
                msg: "empty key".into(),
            });
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Resolved configuration. Every lookup is recorded so the emitted
/// reports can embed exactly what a run consumed, defaults included.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(Self {
            values: parse_key_values(text)?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                msg,
            },
            other => other,
        })
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.values.insert(key.to_string(), value.to_string());
    }

    /// Applies `KEY=VALUE` overrides (flags win over the file).
    pub fn apply_overrides<'a>(&mut self, overrides: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not KEY=VALUE")))?;
            self.set(k.trim(), v.trim());
        }
        Ok(())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Typed lookup; a missing key takes `default` and is written back.
    pub fn get_or<T: FromStr + Display>(&mut self, key: &str, default: T) -> Result<T> {
        match self.values.get(key) {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse {key}='{v}'"))),
            None => {
                self.set(key, &default);
                Ok(default)
            }
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self
            .values
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing required key '{key}'")))?;
        v.parse()
            .map_err(|_| Error::Config(format!("cannot parse {key}='{v}'")))
    }

    /// Comma-separated list lookup.
    pub fn get_list<T: FromStr + Display + Clone>(&mut self, key: &str, default: &[T]) -> Result<Vec<T>> {
        match self.values.get(key) {
            Some(v) => parse_list(v).map_err(|_| Error::Config(format!("cannot parse list {key}='{v}'"))),
            None => {
                let joined = default.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
                self.set(key, joined);
                Ok(default.to_vec())
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// `# key=value` lines, sorted by key.
    pub fn header_comments(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("# {k}={v}\n"))
            .collect()
    }
}

/// Parses `a,b,c` (surrounding whitespace ignored, empty items rejected).
pub fn parse_list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, ()> {
    s.split(',')
        .map(|x| x.trim())
        .map(|x| if x.is_empty() { Err(()) } else { x.parse().map_err(|_| ()) })
        .collect()
}

/// Seed lists: `0,1,5` or the range form `0..10` (end exclusive).
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("bad seed list '{s}'"));
    let seeds = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..b).collect()
    } else {
        parse_list(s).map_err(|_| bad())?
    };
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_comments_and_overrides() {
        let mut c = Config::parse("# hi\n a = 1 \n\nb=x=y\na=2\n").unwrap();
        assert_eq!(c.get_str("a"), Some("2"));
        assert_eq!(c.get_str("b"), Some("x=y"));
        c.apply_overrides(["a=3"]).unwrap();
        assert_eq!(c.get_or::<u32>("a", 0).unwrap(), 3);
        assert_eq!(c.get_or::<f64>("lr", 0.5).unwrap(), 0.5);
        assert!(c.header_comments().contains("# lr=0.5\n"));
        assert!(matches!(Config::parse("novalue"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn lists() {
        let mut c = Config::new();
        assert_eq!(c.get_list::<u32>("k", &[2, 4]).unwrap(), vec![2, 4]);
        assert_eq!(c.get_str("k"), Some("2,4"));
        assert_eq!(parse_seed_list("3..6").unwrap(), vec![3, 4, 5]);
        assert_eq!(parse_seed_list("1, 9").unwrap(), vec![1, 9]);
        assert!(parse_seed_list("4..4").is_err());
        assert!(parse_seed_list("1,,2").is_err());
    }
}
