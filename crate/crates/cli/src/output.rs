// SPDX-License-Identifier: Apache-2.0

//! Artifact files. Every CSV starts with a `#` provenance line followed by a
//! header; every JSON object carries the same provenance under `provenance`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(command: &str, config_json: &str, seed: u64) -> Self {
        Self {
            tool: "aidac",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_sha256: hex::encode(Sha256::digest(config_json.as_bytes())),
            seed,
        }
    }

    fn comment(&self) -> String {
        format!(
            "# {} {} command={} config_sha256={} seed={}\n",
            self.tool, self.version, self.command, self.config_sha256, self.seed
        )
    }
}

pub struct OutDir {
    dir: PathBuf,
    prov: Provenance,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

impl OutDir {
    pub fn create(dir: &Path, prov: Provenance) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            prov,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_csv<I, R>(&self, name: &str, header: &[&str], rows: I) -> Result<PathBuf, CliError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let path = self.path(name);
        let mut buf = self.prov.comment().into_bytes();
        {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(&mut buf);
            w.write_record(header).map_err(|e| io_err(&path, e))?;
            for row in rows {
                w.write_record(row).map_err(|e| io_err(&path, e))?;
            }
            w.flush().map_err(|e| io_err(&path, e))?;
        }
        fs::write(&path, buf).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, body: &T) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut value = serde_json::to_value(body).map_err(|e| io_err(&path, e))?;
        if let Some(obj) = value.as_object_mut() {
            obj.insert("provenance".into(), serde_json::to_value(&self.prov).expect("provenance serializes"));
        }
        let mut text = serde_json::to_string_pretty(&value).map_err(|e| io_err(&path, e))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    /// Writes `text` verbatim.
    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::create(dir.path(), Provenance::new("t", "{}", 3)).unwrap();
        let p = out
            .write_csv("a.csv", &["x", "y"], vec![vec![num(0.1), "a,b".to_string()], vec![num(2.0), opt(None)]])
            .unwrap();
        let text = fs::read_to_string(p).unwrap();
        let lines: Vec<&str> = text.split('\n').collect();
        assert!(lines[0].starts_with("# aidac ") && lines[0].ends_with("seed=3"));
        assert!(lines[0].contains("config_sha256=44136fa355b3678a1146ad16f7e8649e94fb4fc21fe77e8310c060f61caaff8a"));
        assert_eq!(&lines[1..], &["x,y", "0.1,\"a,b\"", "2,", ""]);
        assert!(!text.contains('\r'));
    }

    #[test]
    fn json_has_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::create(dir.path(), Provenance::new("t", "{}", 3)).unwrap();
        let p = out.write_json("a.json", &serde_json::json!({"b": 1, "a": 2})).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(v["provenance"]["seed"], 3);
        assert_eq!(v["a"], 2);
    }
}
