//! Per-command bookkeeping: digests of everything read and written, phase
//! timings, and the manifest written when the command finishes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::FileConfig;
use crate::error::input_error;

#[derive(Debug, Clone, Serialize)]
pub struct Phase {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub config: FileConfig,
    /// Path to hex sha256 of every input file.
    pub inputs: BTreeMap<String, String>,
    pub phases: Vec<Phase>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a sibling temporary file and a rename, so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

pub struct Run {
    manifest: RunManifest,
    phase_start: Option<(String, Instant)>,
}

impl Run {
    pub fn new(command: &str, seed: u64, config: FileConfig) -> Self {
        Run {
            manifest: RunManifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                threads: rayon::current_num_threads(),
                config,
                inputs: BTreeMap::new(),
                phases: Vec::new(),
                outputs: BTreeMap::new(),
            },
            phase_start: None,
        }
    }

    /// Closes the running phase, if any, and starts `name`.
    pub fn phase(&mut self, name: &str) {
        self.end_phase();
        log::info!("{name}");
        self.phase_start = Some((name.to_string(), Instant::now()));
    }

    fn end_phase(&mut self) {
        if let Some((name, t)) = self.phase_start.take() {
            self.manifest.phases.push(Phase { name, seconds: t.elapsed().as_secs_f64() });
        }
    }

    /// Fails with the input exit class if the file is missing.
    pub fn require(&self, path: &Path) -> Result<()> {
        if path.is_file() {
            Ok(())
        } else {
            Err(input_error(format!("missing input: {}", path.display())))
        }
    }

    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        self.require(path)?;
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.record_input(path, &bytes);
        Ok(bytes)
    }

    pub fn read_string(&mut self, path: &Path) -> Result<String> {
        let bytes = self.read(path)?;
        String::from_utf8(bytes).map_err(|_| input_error(format!("{} is not valid UTF-8", path.display())))
    }

    pub fn record_input(&mut self, path: &Path, bytes: &[u8]) {
        self.manifest.inputs.insert(path.display().to_string(), sha256_hex(bytes));
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.manifest.outputs.insert(path.display().to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Ends the last phase and writes the manifest to `dest`, or to stderr
    /// when there is nowhere to put it.
    pub fn finish(mut self, dest: Option<PathBuf>) -> Result<RunManifest> {
        self.end_phase();
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        match dest {
            Some(p) => write_atomic(&p, text.as_bytes())?,
            None => eprint!("{text}"),
        }
        Ok(self.manifest)
    }
}
