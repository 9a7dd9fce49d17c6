//! Output directory handling. Every CSV row carries the config hash and the
//! code version; `run.json` records the outcome of the whole run.

use std::fs;
use std::path::{Path, PathBuf};

use phi4_core::config::CODE_VERSION;
use serde_json::{json, Value};

use crate::AnyResult;

/// Present while a run is in progress and left behind if it fails.
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

pub struct Artifacts {
    dir: PathBuf,
    hash: String,
    files: Vec<String>,
}

impl Artifacts {
    pub fn open(dir: &Path, hash: &str, command: &str) -> AnyResult<Self> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(INCOMPLETE_MARKER), format!("{command}\n"))?;
        Ok(Self { dir: dir.to_path_buf(), hash: hash.to_string(), files: Vec::new() })
    }

    /// Writes `name` with the given header; `config_hash` and `version` are
    /// appended to every row.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> AnyResult<()> {
        let mut w = csv::Writer::from_path(self.dir.join(name))?;
        let mut head: Vec<&str> = header.to_vec();
        head.extend(["config_hash", "version"]);
        w.write_record(&head)?;
        for r in rows {
            if r.len() != header.len() {
                return Err(format!("{name}: row has {} fields, header {}", r.len(), header.len()).into());
            }
            w.write_record(r.iter().map(String::as_str).chain([self.hash.as_str(), CODE_VERSION]))?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn json(&mut self, name: &str, body: Value) -> AnyResult<()> {
        let doc = json!({ "config_hash": self.hash, "version": CODE_VERSION, "report": body });
        fs::write(self.dir.join(name), serde_json::to_string_pretty(&doc)? + "\n")?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Writes `run.json`; the marker is removed only for complete runs.
    pub fn close(self, command: &str, status: &str, detail: &str) -> AnyResult<()> {
        let doc = json!({
            "command": command,
            "status": status,
            "detail": detail,
            "config_hash": self.hash,
            "version": CODE_VERSION,
            "files": self.files,
        });
        fs::write(self.dir.join("run.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
        if status != "incomplete" {
            fs::remove_file(self.dir.join(INCOMPLETE_MARKER))?;
        }
        Ok(())
    }
}

/// Shortest round-trip form, so reruns are byte-identical; exponent notation
/// for very small or large magnitudes.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}
