//! Flat key-value experiment configuration.
//!
//! One `key = value` pair per line, `#` starts a comment. Keys may repeat
//! only where a list of specs is expected (`kernel`). Every value read by a
//! command, including defaults, is recorded so the resolved configuration
//! can be hashed into output headers.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use hypermf::Error;
use sha2::{Digest, Sha256};

pub type Result<T> = std::result::Result<T, Error>;

/// Keys understood by at least one subcommand.
pub const KNOWN_KEYS: &[&str] = &[
    "adaptive",
    "alpha",
    "budget",
    "cells",
    "cfl",
    "compare_n",
    "cut",
    "density_a",
    "density_b",
    "dt",
    "exponents",
    "family",
    "hypergraph",
    "hypergraphon",
    "hypergraphon_a",
    "hypergraphon_b",
    "init",
    "kernel",
    "kind",
    "max_cut_entries",
    "max_rank",
    "measure_a",
    "measure_b",
    "method",
    "n",
    "n_balanced",
    "n_homogeneous",
    "n_list",
    "nodes",
    "nx",
    "nxi",
    "offset",
    "orders",
    "p",
    "parts",
    "replicas",
    "restarts",
    "scheme",
    "seed",
    "snapshots",
    "t_end",
    "tree",
    "x_max",
    "x_min",
];

#[derive(Debug, Default)]
pub struct Config {
    entries: BTreeMap<String, Vec<(usize, String)>>,
    resolved: RefCell<BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                msg: format!("expected 'key = value', got '{line}'"),
            })?;
            cfg.insert(key.trim(), value.trim(), idx + 1)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn insert(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Parse {
                line,
                msg: format!("unknown key '{key}'"),
            });
        }
        if value.is_empty() {
            return Err(Error::Parse {
                line,
                msg: format!("key '{key}' has an empty value"),
            });
        }
        let slot = self.entries.entry(key.to_string()).or_default();
        if key != "kernel" && !slot.is_empty() {
            return Err(Error::Parse {
                line,
                msg: format!("key '{key}' given twice"),
            });
        }
        slot.push((line, value.to_string()));
        Ok(())
    }

    /// Replaces (or adds) a single-valued key, e.g. from `--set key=value`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key != "kernel" {
            self.entries.remove(key);
        }
        self.insert(key, value, 0)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn record(&self, key: &str, value: &str) {
        self.resolved.borrow_mut().insert(key.to_string(), value.to_string());
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries
            .get(key)
            .and_then(|v| v.first())
            .map(|(l, _)| *l)
            .unwrap_or(0)
    }

    pub fn str_or(&self, key: &str, default: &str) -> String {
        let v = self
            .entries
            .get(key)
            .and_then(|v| v.first())
            .map(|(_, s)| s.clone())
            .unwrap_or_else(|| default.to_string());
        self.record(key, &v);
        v
    }

    pub fn opt_str(&self, key: &str) -> Option<String> {
        let v = self.entries.get(key).and_then(|v| v.first()).map(|(_, s)| s.clone());
        if let Some(s) = &v {
            self.record(key, s);
        }
        v
    }

    pub fn all(&self, key: &str, default: &[&str]) -> Vec<String> {
        let v: Vec<String> = match self.entries.get(key) {
            Some(list) => list.iter().map(|(_, s)| s.clone()).collect(),
            None => default.iter().map(|s| s.to_string()).collect(),
        };
        self.record(key, &v.join(" | "));
        v
    }

    pub fn get<T: FromStr + ToString>(&self, key: &str, default: T) -> Result<T> {
        let s = self.str_or(key, &default.to_string());
        s.parse().map_err(|_| Error::Parse {
            line: self.line_of(key),
            msg: format!("cannot parse '{s}' for key '{key}'"),
        })
    }

    pub fn list<T: FromStr>(&self, key: &str, default: &str) -> Result<Vec<T>> {
        let s = self.str_or(key, default);
        parse_list(&s).ok_or_else(|| Error::Parse {
            line: self.line_of(key),
            msg: format!("cannot parse list '{s}' for key '{key}'"),
        })
    }

    /// `key=value` lines of everything read so far, sorted by key.
    pub fn resolved(&self) -> String {
        self.resolved
            .borrow()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of the command name and the resolved configuration.
    pub fn hash(&self, command: &str) -> String {
        let mut h = Sha256::new();
        h.update(format!("command = {command}\n").as_bytes());
        h.update(self.resolved().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_list<T: FromStr>(s: &str) -> Option<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().ok())
        .collect()
}

/// `name k1=v1 k2=v2` spec strings used for hypergraphs, kernels and
/// initial data.
#[derive(Clone, Debug, PartialEq)]
pub struct Spec {
    pub name: String,
    pub params: BTreeMap<String, String>,
}

impl Spec {
    pub fn parse(s: &str) -> Result<Self> {
        let mut name = None;
        let mut params = BTreeMap::new();
        for tok in s.split_whitespace() {
            match tok.split_once('=') {
                Some((k, v)) => {
                    if params.insert(k.to_string(), v.to_string()).is_some() {
                        return Err(Error::Config(format!("parameter '{k}' repeated in '{s}'")));
                    }
                }
                None if name.is_none() => name = Some(tok.to_string()),
                None => return Err(Error::Config(format!("unexpected token '{tok}' in '{s}'"))),
            }
        }
        Ok(Self {
            name: name.unwrap_or_default(),
            params,
        })
    }

    pub fn f64(&self, key: &str, default: Option<f64>) -> Result<f64> {
        match self.params.get(key) {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse {key}={v} in '{}'", self.name))),
            None => default.ok_or_else(|| Error::Config(format!("'{}' needs parameter {key}", self.name))),
        }
    }

    pub fn usize(&self, key: &str, default: Option<usize>) -> Result<usize> {
        match self.params.get(key) {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse {key}={v} in '{}'", self.name))),
            None => default.ok_or_else(|| Error::Config(format!("'{}' needs parameter {key}", self.name))),
        }
    }

    pub fn string(&self, key: &str) -> Result<&str> {
        self.params
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("'{}' needs parameter {key}", self.name)))
    }

    /// Rejects parameters outside `allowed`.
    pub fn only(&self, allowed: &[&str]) -> Result<()> {
        match self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("'{}' does not take parameter '{k}'", self.name))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_comments_and_repeats() {
        let c = Config::parse(
            "# header\nn = 50  # agents\nkernel = order=2 type=linear_mean\nkernel = order=1 type=kuramoto\n",
        )
        .unwrap();
        assert_eq!(c.get::<usize>("n", 1).unwrap(), 50);
        assert_eq!(c.all("kernel", &[]).len(), 2);
        assert_eq!(c.get::<f64>("dt", 0.01).unwrap(), 0.01);
        assert!(c.resolved().contains("dt = 0.01"));
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(Config::parse("n 5"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            Config::parse("\nbogus = 1"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(Config::parse("n = 1\nn = 2").is_err());
        let c = Config::parse("n = five").unwrap();
        assert!(c.get::<usize>("n", 1).is_err());
    }

    #[test]
    fn hash_depends_on_resolved_values() {
        let a = Config::parse("n = 5").unwrap();
        let b = Config::parse("n = 6").unwrap();
        a.get::<usize>("n", 1).unwrap();
        b.get::<usize>("n", 1).unwrap();
        assert_ne!(a.hash("simulate"), b.hash("simulate"));
        assert_ne!(a.hash("simulate"), a.hash("vlasov"));
        assert_eq!(a.hash("simulate").len(), 64);
    }

    #[test]
    fn spec_strings() {
        let s = Spec::parse("homogeneous theta=0.1").unwrap();
        assert_eq!(s.name, "homogeneous");
        assert_eq!(s.f64("theta", None).unwrap(), 0.1);
        assert!(s.f64("c", None).is_err());
        assert!(s.only(&["c"]).is_err());
        assert!(Spec::parse("a b").is_err());
        assert_eq!(parse_list::<f64>("0, 4,8,10").unwrap(), vec![0.0, 4.0, 8.0, 10.0]);
    }
}
