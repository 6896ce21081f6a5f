//! CSV tables and the output directory.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use hypermf::Error;

use crate::config::Result;

/// Shortest round-trip formatting; non-finite values print as `nan`/`inf`.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    /// First line `# config_sha256=<hash>`, then the column header.
    pub fn render(&self, config_hash: &str) -> String {
        let mut s = format!("# config_sha256={config_hash}\n{}\n", self.columns.join(","));
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Cell helper for mixed rows.
pub fn cell(v: impl Display) -> String {
    v.to_string()
}

pub struct OutDir {
    root: PathBuf,
    hash: String,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: impl AsRef<Path>, hash: String) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            hash,
            written: Vec::new(),
        })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> Result<()> {
        self.text(name, &table.render(&self.hash))
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<()> {
        if name.contains("..") || Path::new(name).is_absolute() {
            return Err(Error::Config(format!("invalid output name '{name}'")));
        }
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, body)?;
        self.written.push(path);
        Ok(())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

/// Time value as a file-name fragment, e.g. `t0.8`; rounded to 1e-9.
pub fn time_tag(t: f64) -> String {
    format!("t{}", num((t * 1e9).round() / 1e9))
}
