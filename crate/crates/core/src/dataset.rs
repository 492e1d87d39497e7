//! Samples, identities and covariates, plus manifest-based ingestion.
//!
//! A manifest is a CSV file with the columns
//! `sample_id, identity_id, attribute, default_attrs_ok, latent_path, facerec_path`
//! followed by one column per covariate named `name:bin` or `name:real`.
//! Paths are resolved relative to the manifest's directory.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{self, restricted_projection, LatentCode};

pub const FACEREC_MAGIC: &[u8; 4] = b"MFRV";
pub const DEFAULT_FACEREC_DIM: usize = 128;

const FIXED_COLUMNS: [&str; 6] =
    ["sample_id", "identity_id", "attribute", "default_attrs_ok", "latent_path", "facerec_path"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Binary,
    Real,
}

impl CovariateKind {
    fn suffix(self) -> &'static str {
        match self {
            CovariateKind::Binary => "bin",
            CovariateKind::Real => "real",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
}

impl CovariateSpec {
    pub fn binary(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: CovariateKind::Binary }
    }

    pub fn real(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: CovariateKind::Real }
    }

    pub fn header(&self) -> String {
        format!("{}:{}", self.name, self.kind.suffix())
    }

    fn parse_header(col: &str) -> Result<Self> {
        let (name, kind) = col
            .rsplit_once(':')
            .ok_or_else(|| Error::parse("manifest header", format!("covariate column `{col}` lacks :bin or :real")))?;
        let kind = match kind {
            "bin" => CovariateKind::Binary,
            "real" => CovariateKind::Real,
            other => {
                return Err(Error::parse("manifest header", format!("unknown covariate type `{other}` in `{col}`")))
            }
        };
        if name.is_empty() {
            return Err(Error::parse("manifest header", "empty covariate name"));
        }
        Ok(Self { name: name.to_string(), kind })
    }
}

/// One observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: String,
    pub identity_id: String,
    pub latent: LatentCode,
    /// Recognition embedding.
    pub facerec: Vec<f64>,
    /// Binary matching attribute, 0 or 1.
    pub attribute: u8,
    /// Covariate values in manifest order; binary covariates hold 0.0 or 1.0.
    pub covariates: IndexMap<String, f64>,
    /// Passes the default-attributes filter used for reference images.
    pub default_attrs_ok: bool,
}

impl Sample {
    pub fn covariate(&self, name: &str) -> Result<f64> {
        self.covariates.get(name).copied().ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }
}

/// Validated, immutable collection of samples with an identity index.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<Sample>,
    covariates: Vec<CovariateSpec>,
    identity_index: IndexMap<String, Vec<String>>,
    positions: HashMap<String, usize>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.samples == other.samples && self.covariates == other.covariates
    }
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, covariates: Vec<CovariateSpec>) -> Result<Self> {
        let mut seen_cov = std::collections::HashSet::new();
        for c in &covariates {
            if !seen_cov.insert(c.name.as_str()) {
                return Err(Error::parse("covariates", format!("duplicate covariate `{}`", c.name)));
            }
        }
        let mut positions = HashMap::with_capacity(samples.len());
        let mut identity_index: IndexMap<String, Vec<String>> = IndexMap::new();
        let latent_shape = samples.first().map(|s| s.latent.shape());
        let facerec_len = samples.first().map(|s| s.facerec.len());
        for (i, s) in samples.iter().enumerate() {
            if positions.insert(s.sample_id.clone(), i).is_some() {
                return Err(Error::DuplicateId(s.sample_id.clone()));
            }
            if s.attribute > 1 {
                return Err(Error::parse(
                    format!("sample {}", s.sample_id),
                    format!("attribute must be 0 or 1, got {}", s.attribute),
                ));
            }
            if Some(s.latent.shape()) != latent_shape {
                return Err(Error::Shape(format!(
                    "sample {} has latent shape {:?}, expected {:?}",
                    s.sample_id,
                    s.latent.shape(),
                    latent_shape.unwrap()
                )));
            }
            if Some(s.facerec.len()) != facerec_len {
                return Err(Error::Shape(format!(
                    "sample {} has facerec length {}, expected {}",
                    s.sample_id,
                    s.facerec.len(),
                    facerec_len.unwrap()
                )));
            }
            if s.facerec.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("facerec of {}", s.sample_id)));
            }
            if s.covariates.len() != covariates.len() || s.covariates.keys().zip(&covariates).any(|(k, c)| *k != c.name)
            {
                return Err(Error::Shape(format!("sample {} covariates do not match the dataset schema", s.sample_id)));
            }
            for (spec, value) in covariates.iter().zip(s.covariates.values()) {
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("covariate {} of {}", spec.name, s.sample_id)));
                }
                if spec.kind == CovariateKind::Binary && *value != 0.0 && *value != 1.0 {
                    return Err(Error::NonBinaryCovariate(spec.name.clone()));
                }
            }
            identity_index.entry(s.identity_id.clone()).or_default().push(s.sample_id.clone());
        }
        Ok(Self { samples, covariates, identity_index, positions })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn covariate_specs(&self) -> &[CovariateSpec] {
        &self.covariates
    }

    pub fn covariate_spec(&self, name: &str) -> Result<&CovariateSpec> {
        self.covariates.iter().find(|c| c.name == name).ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }

    pub fn identity_index(&self) -> &IndexMap<String, Vec<String>> {
        &self.identity_index
    }

    pub fn position(&self, sample_id: &str) -> Result<usize> {
        self.positions.get(sample_id).copied().ok_or_else(|| Error::UnknownId(sample_id.to_string()))
    }

    pub fn get(&self, sample_id: &str) -> Result<&Sample> {
        self.position(sample_id).map(|i| &self.samples[i])
    }

    /// `(levels, dims)` shared by every latent code, if any samples exist.
    pub fn latent_shape(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| s.latent.shape())
    }

    /// Restricted latent vectors stacked as an `N × D` matrix.
    pub fn restricted_matrix(&self) -> Array2<f64> {
        let d = self.latent_shape().map_or(0, |(_, d)| d);
        let mut out = Array2::zeros((self.len(), d));
        for (mut row, s) in out.rows_mut().into_iter().zip(&self.samples) {
            row.assign(&restricted_projection(&s.latent));
        }
        out
    }

    pub fn attributes(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.attribute).collect()
    }

    /// Keeps only the listed samples, in the given order.
    pub fn subset(&self, ids: &[String]) -> Result<Dataset> {
        let samples = ids.iter().map(|id| self.get(id).cloned()).collect::<Result<Vec<_>>>()?;
        Dataset::new(samples, self.covariates.clone())
    }
}

/// Partitions sample ids by attribute value, preserving dataset order.
pub fn group_split(ds: &Dataset) -> (Vec<String>, Vec<String>) {
    let mut g0 = Vec::new();
    let mut g1 = Vec::new();
    for s in &ds.samples {
        if s.attribute == 0 {
            g0.push(s.sample_id.clone());
        } else {
            g1.push(s.sample_id.clone());
        }
    }
    (g0, g1)
}

/// Reads a recognition embedding: binary `MFRV` (magic, `u32` length, `f32`
/// values) or a single CSV row.
pub fn read_facerec(path: &Path) -> Result<Vec<f64>> {
    if latent::is_csv(path) {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rows = latent::parse_csv_matrix(&text, &path.display().to_string())?;
        match rows.as_slice() {
            [row] => Ok(row.clone()),
            _ => Err(Error::parse(path.display().to_string(), format!("expected exactly one row, got {}", rows.len()))),
        }
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        facerec_from_bytes(&bytes).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }
}

pub fn facerec_to_bytes(v: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * v.len());
    out.extend_from_slice(FACEREC_MAGIC);
    out.extend_from_slice(&(v.len() as u32).to_le_bytes());
    for x in v {
        out.extend_from_slice(&(*x as f32).to_le_bytes());
    }
    out
}

pub fn facerec_from_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    let mut cursor = bytes;
    let mut head = [0u8; 8];
    cursor.read_exact(&mut head).map_err(|_| Error::parse("facerec", "truncated header"))?;
    if &head[..4] != FACEREC_MAGIC {
        return Err(Error::parse("facerec", "bad magic, expected MFRV"));
    }
    let n = u32::from_le_bytes([head[4], head[5], head[6], head[7]]) as usize;
    if cursor.len() != 4 * n {
        return Err(Error::parse("facerec", format!("payload has {} bytes, header declares {n} values", cursor.len())));
    }
    Ok(cursor.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

pub fn write_facerec(path: &Path, v: &[f64]) -> Result<()> {
    if latent::is_csv(path) {
        let cells: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        fs::write(path, cells.join(",") + "\n").map_err(|e| Error::io(path, e))
    } else {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&facerec_to_bytes(v)).map_err(|e| Error::io(path, e))
    }
}

fn parse_bool(cell: &str, context: &str) -> Result<bool> {
    match cell.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        other => Err(Error::parse(context, format!("expected a boolean, got `{other}`"))),
    }
}

/// Loads and validates the dataset described by a manifest CSV.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = fs::File::open(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let ctx = manifest_path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers().map_err(|e| Error::parse(&ctx, e))?.clone();
    if headers.len() < FIXED_COLUMNS.len() || headers.iter().zip(FIXED_COLUMNS).any(|(h, want)| h != want) {
        return Err(Error::parse(&ctx, format!("header must start with {}", FIXED_COLUMNS.join(","))));
    }
    let covariates =
        headers.iter().skip(FIXED_COLUMNS.len()).map(CovariateSpec::parse_header).collect::<Result<Vec<_>>>()?;

    let mut samples = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(&ctx, e))?;
        let row_ctx = format!("{ctx} row {}", line + 2);
        let sample_id = record[0].to_string();
        let attribute = match &record[2] {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::parse(&row_ctx, format!("attribute must be 0 or 1, got `{other}`"))),
        };
        let default_attrs_ok = parse_bool(&record[3], &row_ctx)?;
        let latent = LatentCode::read(&resolve(&base, &record[4]))?;
        let facerec = read_facerec(&resolve(&base, &record[5]))?;
        let mut values = IndexMap::with_capacity(covariates.len());
        for (spec, cell) in covariates.iter().zip(record.iter().skip(FIXED_COLUMNS.len())) {
            let v: f64 =
                cell.parse().map_err(|e| Error::parse(&row_ctx, format!("covariate {}: `{cell}`: {e}", spec.name)))?;
            values.insert(spec.name.clone(), v);
        }
        samples.push(Sample {
            sample_id,
            identity_id: record[1].to_string(),
            latent,
            facerec,
            attribute,
            covariates: values,
            default_attrs_ok,
        });
    }
    Dataset::new(samples, covariates)
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Writes `manifest.csv` plus one `MLAT` latent and one `MFRV` embedding file
/// per sample under `dir`, returning the manifest path.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    for sub in ["latents", "facerec"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let manifest = dir.join("manifest.csv");
    let mut writer = csv::Writer::from_path(&manifest).map_err(|e| Error::parse(manifest.display().to_string(), e))?;
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(ds.covariates.iter().map(CovariateSpec::header));
    let wrap = |e: csv::Error| Error::parse(manifest.display().to_string(), e);
    writer.write_record(&header).map_err(wrap)?;
    for (i, s) in ds.samples.iter().enumerate() {
        let latent_rel = format!("latents/{i:06}.mlat");
        let facerec_rel = format!("facerec/{i:06}.mfrv");
        s.latent.write(&dir.join(&latent_rel))?;
        write_facerec(&dir.join(&facerec_rel), &s.facerec)?;
        let mut row = vec![
            s.sample_id.clone(),
            s.identity_id.clone(),
            s.attribute.to_string(),
            if s.default_attrs_ok { "1" } else { "0" }.to_string(),
            latent_rel,
            facerec_rel,
        ];
        row.extend(s.covariates.values().map(|v| v.to_string()));
        writer.write_record(&row).map_err(wrap)?;
    }
    writer.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
