use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// A CSV cell. Floats are written with 17 significant digits.
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::I(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::S(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::S(x)
    }
}

pub fn float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub struct Table {
    header: Vec<String>,
    body: String,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table { header: header.iter().map(|s| s.as_ref().to_string()).collect(), body: String::new() }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        debug_assert_eq!(cells.len(), self.header.len());
        let text: Vec<String> = cells
            .into_iter()
            .map(|c| match c {
                Cell::F(x) => float(x),
                Cell::I(i) => i.to_string(),
                Cell::S(s) => quote(&s),
            })
            .collect();
        let _ = writeln!(self.body, "{}", text.join(","));
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let head: Vec<String> = self.header.iter().map(|h| quote(h)).collect();
        fs::write(path, format!("{}\n{}", head.join(","), self.body)).with_context(|| format!("writing {}", path.display()))
    }
}

/// Collects the files of one run and writes the JSON sidecar.
pub struct Outputs {
    pub dir: PathBuf,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Sidecar<'a, T: Serialize> {
    subcommand: &'a str,
    model: &'a str,
    seed: u64,
    workers: usize,
    config_version: u32,
    config_sha256: &'a str,
    runtime_seconds: f64,
    files: &'a [String],
    summary: T,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Outputs { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn table(&mut self, name: &str, t: &Table) -> Result<()> {
        t.write(&self.dir.join(name))?;
        self.files.push(name.to_string());
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn sidecar<T: Serialize>(
        &self,
        subcommand: &str,
        model: &str,
        seed: u64,
        workers: usize,
        config_sha256: &str,
        runtime_seconds: f64,
        summary: T,
    ) -> Result<()> {
        let side = Sidecar {
            subcommand,
            model,
            seed,
            workers,
            config_version: crate::config::CONFIG_VERSION,
            config_sha256,
            runtime_seconds,
            files: &self.files,
            summary,
        };
        let path = self.dir.join(format!("{subcommand}.json"));
        fs::write(&path, serde_json::to_string_pretty(&side)? + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// SHA-256 of the effective configuration in canonical JSON form.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(float(0.1), "1.0000000000000001e-1");
        assert_eq!(float(-2.5), "-2.5000000000000000e0");
        assert_eq!(float(f64::NAN), "NaN");
        assert_eq!(float(1.0 / 3.0).parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn quoting() {
        let mut t = Table::new(&["a", "b"]);
        t.row(vec!["x,y".into(), 1usize.into()]);
        assert_eq!(t.body, "\"x,y\",1\n");
    }
}
