//! Run manifests: enough provenance to reproduce any artifact-writing
//! run. The fingerprint hashes everything reproduction depends on
//! (command, seed, resolved config, dataset hashes, code version) and
//! deliberately excludes timestamps and output locations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use dse_core::model::ModelConfig;
use serde::Serialize;

use crate::CliError;

/// One input or output file, content-addressed.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetRef {
    pub role: String,
    pub path: String,
    /// FNV-1a 64 over the raw bytes, hex.
    pub fnv1a64: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<ModelConfig>,
    pub datasets: Vec<DatasetRef>,
    pub code_version: String,
    /// Hash of (command, seed, config, datasets, code_version): runs with
    /// equal fingerprints must produce identical artifacts.
    pub fingerprint: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Hash a file into a [`DatasetRef`].
pub fn dataset_ref(role: &str, path: &Path) -> Result<DatasetRef, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(DatasetRef {
        role: role.to_string(),
        path: path.display().to_string(),
        fnv1a64: format!("{:016x}", fnv1a64(&bytes)),
        bytes: bytes.len() as u64,
    })
}

impl RunManifest {
    pub fn new(
        command: &str,
        seed: u64,
        config: Option<ModelConfig>,
        datasets: Vec<DatasetRef>,
        started_unix: u64,
    ) -> Self {
        let code_version = env!("CARGO_PKG_VERSION").to_string();
        let core = serde_json::json!({
            "command": command,
            "seed": seed,
            "config": config,
            "datasets": datasets.iter().map(|d| (&d.role, &d.fnv1a64)).collect::<Vec<_>>(),
            "code_version": code_version,
        });
        let fingerprint = format!("{:016x}", fnv1a64(core.to_string().as_bytes()));
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            seed,
            config,
            datasets,
            code_version,
            fingerprint,
            started_unix,
            finished_unix: started_unix,
        }
    }

    /// Stamp the finish time and write `manifest.json` under `dir`.
    pub fn write(self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join("manifest.json");
        self.write_to(&path)
    }

    /// Stamp the finish time and write the manifest to an exact path.
    pub fn write_to(mut self, path: &Path) -> Result<(), CliError> {
        self.finished_unix = now_unix();
        let text = serde_json::to_string_pretty(&self)
            .map_err(|e| CliError::data(format!("manifest serialization: {e}")))?;
        fs::write(path, text + "\n")
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
    }
}

/// Create the run directory: an explicit `--out` is used as-is, otherwise
/// `runs/<timestamp>-<seed>` with a numeric suffix on collision.
pub fn create_run_dir(out: Option<PathBuf>, seed: u64, started: u64) -> Result<PathBuf, CliError> {
    if let Some(dir) = out {
        fs::create_dir_all(&dir)
            .map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
        return Ok(dir);
    }
    let base = PathBuf::from("runs");
    fs::create_dir_all(&base)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", base.display())))?;
    for attempt in 0..1000 {
        let name = if attempt == 0 {
            format!("{started}-{seed}")
        } else {
            format!("{started}-{seed}-{attempt}")
        };
        let dir = base.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => {
                return Err(CliError::io(format!("cannot create {}: {e}", dir.display())));
            }
        }
    }
    Err(CliError::io("run directory namespace exhausted".to_string()))
}
