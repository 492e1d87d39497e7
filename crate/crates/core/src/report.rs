//! JSON report envelopes, content hashes and tidy CSV output.
//!
//! Every report the command line writes is an [`Envelope`]: the resolved
//! configuration, SHA-256 hashes of the inputs, a creation timestamp and the
//! result itself. [`canonical`] strips the timestamp so two runs can be
//! compared byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const TOOL: &str = "matchlab";
pub const TIMESTAMP_FIELD: &str = "created_unix";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    /// Input name to hex SHA-256 of its content.
    pub inputs: BTreeMap<String, String>,
    pub created_unix: u64,
    pub result: T,
}

impl<T: Serialize> Envelope<T> {
    pub fn new(command: &str, config: &impl Serialize, inputs: BTreeMap<String, String>, result: T) -> Self {
        let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
            inputs,
            created_unix,
            result,
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Hash of an input file. Reports written by this tool are hashed without
/// their timestamp, so a downstream report does not change when an upstream
/// step is rerun.
pub fn sha256_input(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if let Ok(v) = serde_json::from_slice::<serde_json::Value>(&bytes) {
        if v.get("tool").and_then(|t| t.as_str()) == Some(TOOL) && v.get(TIMESTAMP_FIELD).is_some() {
            return Ok(sha256_bytes(to_json_string(&canonical(v)).as_bytes()));
        }
    }
    Ok(sha256_bytes(&bytes))
}

/// Hash of a dataset's content, independent of file layout: ids, labels,
/// flags, latent and embedding values, and covariates, in sample order.
pub fn dataset_hash(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    for c in ds.covariate_specs() {
        field(c.header().as_bytes());
    }
    for s in ds.samples() {
        field(s.sample_id.as_bytes());
        field(s.identity_id.as_bytes());
        field(&[s.attribute, u8::from(s.default_attrs_ok)]);
        let latent: Vec<u8> = s.latent.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
        field(&latent);
        let face: Vec<u8> = s.facerec.iter().flat_map(|v| v.to_le_bytes()).collect();
        field(&face);
        let cov: Vec<u8> = s.covariates.values().flat_map(|v| v.to_le_bytes()).collect();
        field(&cov);
    }
    hex(&h.finalize())
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, to_json_string(value)).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

/// The report with its timestamp removed, for determinism comparisons.
pub fn canonical(mut value: serde_json::Value) -> serde_json::Value {
    if let Some(obj) = value.as_object_mut() {
        obj.remove(TIMESTAMP_FIELD);
    }
    value
}

/// Writes serializable rows as CSV with a header taken from the field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let ctx = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(&ctx, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::parse(&ctx, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
