//! Artifact writer. Every file carries the same provenance: command,
//! config hash and grid.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bcm::{Error, Result, TimeGrid};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub command: String,
    pub config_sha256: String,
    pub potential: String,
    pub grid: String,
}

impl Provenance {
    pub fn new(command: &str, config_sha256: String, potential: String, grid: &TimeGrid) -> Self {
        Self {
            tool: format!("bcm {}", env!("CARGO_PKG_VERSION")),
            command: command.to_owned(),
            config_sha256,
            potential,
            grid: describe_grid(grid),
        }
    }

    pub fn comments(&self) -> Vec<String> {
        vec![
            format!("tool={}", self.tool),
            format!("command={}", self.command),
            format!("config_sha256={}", self.config_sha256),
            format!("potential={}", self.potential),
            format!("grid={}", self.grid),
        ]
    }
}

pub fn describe_grid(g: &TimeGrid) -> String {
    format!("T={},n={},h={:e}", g.horizon(), g.len(), g.step())
}

pub struct Artifacts {
    dir: PathBuf,
    provenance: Provenance,
    written: Vec<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_owned(),
        source,
    }
}

impl Artifacts {
    pub fn create(dir: PathBuf, provenance: Provenance) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self {
            dir,
            provenance,
            written: Vec::new(),
        })
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Writes `name` through `body`, which receives the provenance comments.
    pub fn csv(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut dyn Write, &[String]) -> Result<()>,
    ) -> Result<()> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut out = BufWriter::new(file);
        body(&mut out, &self.provenance.comments())?;
        out.flush().map_err(io_err(&path))?;
        self.written.push(path);
        Ok(())
    }

    /// Writes `{"provenance": …, <fields of value>}`.
    pub fn json(&mut self, name: &str, value: impl Serialize) -> Result<()> {
        let mut doc = json!({ "provenance": self.provenance });
        match serde_json::to_value(value)? {
            Value::Object(fields) => doc.as_object_mut().expect("object").extend(fields),
            other => {
                doc["result"] = other;
            }
        }
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))?;
        self.written.push(path);
        Ok(())
    }
}
