//! Run manifest: one row per completed stage with the hashes that decide
//! whether its outputs can be reused.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.csv";
/// Row holding the configuration hash of the whole run.
const CONFIG_ROW: &str = "config";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageRecord {
    pub config_hash: String,
    pub input_hash: String,
    pub output_hash: String,
    /// Output files relative to the run directory.
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct RunManifest {
    pub config_hash: Option<String>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn read(run_dir: &Path) -> CliResult<Self> {
        let path = run_dir.join(MANIFEST);
        let mut m = RunManifest::default();
        if !path.exists() {
            return Ok(m);
        }
        let mut r = csv::Reader::from_path(&path)?;
        if r.headers()?.iter().collect::<Vec<_>>() != ["stage", "config_hash", "input_hash", "output_hash", "outputs"] {
            return Err(CliError::Manifest(format!("unexpected header in {}", path.display())));
        }
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 5 {
                return Err(CliError::Manifest("wrong field count".into()));
            }
            if &rec[0] == CONFIG_ROW {
                m.config_hash = Some(rec[1].to_string());
                continue;
            }
            let outputs = if rec[4].is_empty() { Vec::new() } else { rec[4].split(';').map(PathBuf::from).collect() };
            m.stages.insert(
                rec[0].to_string(),
                StageRecord {
                    config_hash: rec[1].to_string(),
                    input_hash: rec[2].to_string(),
                    output_hash: rec[3].to_string(),
                    outputs,
                },
            );
        }
        Ok(m)
    }

    pub fn write(&self, run_dir: &Path) -> CliResult<()> {
        let mut w = csv::Writer::from_path(run_dir.join(MANIFEST))?;
        w.write_record(["stage", "config_hash", "input_hash", "output_hash", "outputs"])?;
        if let Some(h) = &self.config_hash {
            w.write_record([CONFIG_ROW, h, "", "", ""])?;
        }
        for (name, s) in &self.stages {
            let outputs: Vec<String> = s.outputs.iter().map(|p| p.to_string_lossy().into_owned()).collect();
            w.write_record([name.as_str(), &s.config_hash, &s.input_hash, &s.output_hash, &outputs.join(";")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// SHA-256 over (relative path, length, contents) of each file in order.
pub fn hash_files(root: &Path, files: &[PathBuf]) -> CliResult<String> {
    let mut h = Sha256::new();
    for f in files {
        let bytes = fs::read(root.join(f)).map_err(|e| CliError::MissingInput(format!("{}: {e}", root.join(f).display())))?;
        h.update(f.to_string_lossy().as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}
