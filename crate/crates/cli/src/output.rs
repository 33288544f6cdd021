//! Output files, each opened by one `#` comment line with the config hash and seed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use serde_json::{Map, Value};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub struct Outputs {
    dir: PathBuf,
    header: String,
    hash: String,
    seed: u64,
}

impl Outputs {
    pub fn create(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&cfg.output_dir)?;
        Ok(Outputs {
            dir: cfg.output_dir.clone(),
            header: cfg.header(),
            hash: cfg.hash(),
            seed: cfg.seed,
        })
    }

    /// `body` receives the writer after the comment line has been emitted.
    pub fn csv<F>(&self, name: &str, body: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
    {
        let path = self.dir.join(name);
        let mut out = BufWriter::new(File::create(&path)?);
        writeln!(out, "# {}", self.header)?;
        body(&mut out)?;
        out.flush()?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    /// JSON has no comments, so the header travels as `config_hash` and `seed`
    /// members of the top-level object.
    pub fn json(&self, name: &str, body: Value) -> Result<PathBuf, CliError> {
        let mut obj = Map::new();
        obj.insert("config_hash".into(), Value::from(self.hash.clone()));
        obj.insert("seed".into(), Value::from(self.seed));
        match body {
            Value::Object(fields) => obj.extend(fields),
            other => {
                obj.insert("value".into(), other);
            }
        }
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(&Value::Object(obj)).expect("plain values");
        text.push('\n');
        fs::write(&path, text)?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }
}

/// Shortest round-trip decimal, or an empty cell.
pub fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
