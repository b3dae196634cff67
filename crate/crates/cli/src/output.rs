//! Result files. Every file carries the build, command, seed, stream layout
//! and resolved configuration; nothing time- or host-dependent is written,
//! so identical inputs give identical bytes.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;

pub const BUILD: &str = env!("BENCHSIM_BUILD_DESCRIBE");

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub build: &'static str,
    pub command: String,
    pub seed: Option<u64>,
    pub stream_layout: String,
    pub config: Value,
}

impl Provenance {
    pub fn new(command: &str, cfg: &RunConfig, seed: Option<u64>, stream_layout: impl Into<String>) -> Self {
        Self {
            tool: "benchsim",
            version: env!("CARGO_PKG_VERSION"),
            build: BUILD,
            command: command.to_string(),
            seed,
            stream_layout: stream_layout.into(),
            config: Self::recorded_config(cfg),
        }
    }

    /// The configuration minus the output directory, so identical runs
    /// written to different directories produce identical files.
    fn recorded_config(cfg: &RunConfig) -> Value {
        let mut c = cfg.to_json();
        if let Some(o) = c.get_mut("output").and_then(Value::as_object_mut) {
            o.remove("dir");
        }
        c
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("provenance serializes")
    }

    /// `# key: value` lines for the top of a CSV file.
    pub fn csv_preamble(&self) -> String {
        let seed = self.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        format!(
            "# tool: {} {} (build {})\n# command: {}\n# seed: {}\n# streams: {}\n# config: {}\n",
            self.tool, self.version, self.build, self.command, seed, self.stream_layout, self.config
        )
    }
}

/// Stream layout text for a single-domain Monte Carlo run.
pub fn stream_layout(domain: u8, what: &str) -> String {
    format!("ChaCha8 keyed by seed; stream id = {domain} << 56 | {what}")
}

pub struct OutDir {
    dir: PathBuf,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::config(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// CSV with the provenance preamble; `body` writes header and rows.
    pub fn write_csv<F>(&self, name: &str, prov: &Provenance, body: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
    {
        let path = self.path(name);
        let mut w = BufWriter::new(fs::File::create(&path)?);
        w.write_all(prov.csv_preamble().as_bytes())?;
        body(&mut w)?;
        w.flush()?;
        Ok(path)
    }

    /// `{"provenance": …, "result": …}`, pretty-printed.
    pub fn write_json(&self, name: &str, prov: &Provenance, result: Value) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let doc = json!({ "provenance": prov.to_json(), "result": result });
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// Long-format rows through the csv writer.
pub fn csv_rows<I, R>(out: &mut dyn Write, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip text of a float.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}
