//! Shared plumbing: config loading, input digests, output directory,
//! run manifest and warnings.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const DEFAULT_SEED: u64 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses JSON, reporting the path of the offending field on failure.
pub fn parse_config<T: DeserializeOwned>(bytes: &[u8], origin: &str) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Input(format!("{origin}: at `{path}`: {}", e.inner()))
    })
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Warning {
    pub kind: String,
    pub message: String,
}

/// One command invocation: tracks inputs read and files written so the
/// manifest can list them.
pub struct Run {
    command: String,
    out: PathBuf,
    started: Instant,
    config_sha256: String,
    seed: u64,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    warnings: Vec<Warning>,
}

impl Run {
    pub fn new(command: impl Into<String>, out: &Path) -> CliResult<Self> {
        fs::create_dir_all(out).map_err(|e| CliError::Input(format!("cannot create {}: {e}", out.display())))?;
        Ok(Self {
            command: command.into(),
            out: out.to_path_buf(),
            started: Instant::now(),
            config_sha256: sha256_hex(b""),
            seed: DEFAULT_SEED,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
        })
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    /// Reads and parses the JSON config; an absent config parses `{}`.
    pub fn read_config<T: DeserializeOwned>(&mut self, path: Option<&Path>) -> CliResult<T> {
        let bytes = match path {
            Some(p) => fs::read(p).map_err(|e| CliError::Input(format!("cannot read {}: {e}", p.display())))?,
            None => b"{}".to_vec(),
        };
        self.config_sha256 = sha256_hex(&bytes);
        if let Some(p) = path {
            self.inputs.insert(p.display().to_string(), self.config_sha256.clone());
        }
        let origin = path.map_or_else(|| "default config".to_owned(), |p| p.display().to_string());
        parse_config(&bytes, &origin)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    pub fn warn(&mut self, kind: &str, message: String) {
        self.warnings.push(Warning { kind: kind.into(), message });
    }

    /// Creates an output file; `fill` writes its content.
    pub fn write<F>(&mut self, name: &str, fill: F) -> CliResult<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> CliResult<()>,
    {
        let path = self.out.join(name);
        let file = File::create(&path).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        fill(&mut w)?;
        w.flush().map_err(CliError::runtime)?;
        self.outputs.push(name.to_owned());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(CliError::runtime)?;
            writeln!(w).map_err(CliError::runtime)
        })
    }

    /// Writes warnings.json and manifest.json; warnings are echoed to stderr.
    pub fn finish(mut self) -> CliResult<()> {
        if !self.warnings.is_empty() {
            eprintln!("==================== WARNINGS ====================");
            for w in &self.warnings {
                eprintln!("[{}] {}", w.kind, w.message);
            }
            eprintln!("==================================================");
        }
        let warnings = std::mem::take(&mut self.warnings);
        self.write_json("warnings.json", &warnings)?;
        let manifest = RunManifest {
            command: self.command.clone(),
            config_sha256: self.config_sha256.clone(),
            seed: self.seed,
            inputs: self.inputs.clone(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            outputs: {
                let mut o = self.outputs.clone();
                o.push("manifest.json".into());
                o
            },
        };
        let path = self.out.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(CliError::runtime)?;
        fs::write(&path, text + "\n").map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }
}
