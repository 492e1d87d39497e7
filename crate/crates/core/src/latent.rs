//! Expanded/restricted latent codes, the row-deviation regularizer and
//! regularized projection onto the latent space.
//!
//! An expanded code is an `L × D` matrix with one style vector per level; its
//! restricted counterpart is the mean of those rows. Projection minimizes a
//! caller-supplied reconstruction loss plus `lambda` times the summed squared
//! deviation of each row from the row mean, pulling the solution toward codes
//! whose rows agree.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{self, DescentConfig, Objective};

pub const LATENT_MAGIC: &[u8; 4] = b"MLAT";
pub const DEFAULT_LEVELS: usize = 18;
pub const DEFAULT_DIMS: usize = 512;

/// An expanded latent code: `levels × dims` real matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    expanded: Array2<f64>,
}

impl LatentCode {
    pub fn new(expanded: Array2<f64>) -> Result<Self> {
        let (l, d) = expanded.dim();
        if l == 0 || d == 0 {
            return Err(Error::Shape(format!("latent code must be non-empty, got {l}x{d}")));
        }
        if expanded.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent code entry".into()));
        }
        let expanded =
            if expanded.is_standard_layout() { expanded } else { expanded.as_standard_layout().into_owned() };
        Ok(Self { expanded })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let l = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("ragged latent rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let m = Array2::from_shape_vec((l, d), flat).map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(m)
    }

    /// Code whose `levels` rows all equal `restricted`.
    pub fn broadcast(restricted: ArrayView1<f64>, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Shape("levels must be at least 1".into()));
        }
        let d = restricted.len();
        let m = Array2::from_shape_fn((levels, d), |(_, j)| restricted[j]);
        Self::new(m)
    }

    pub fn zeros(levels: usize, dims: usize) -> Result<Self> {
        Self::new(Array2::zeros((levels, dims)))
    }

    pub fn random<R: Rng + ?Sized>(levels: usize, dims: usize, rng: &mut R) -> Result<Self> {
        let m = Array2::from_shape_simple_fn((levels, dims), || rng.sample(StandardNormal));
        Self::new(m)
    }

    pub fn levels(&self) -> usize {
        self.expanded.nrows()
    }

    pub fn dims(&self) -> usize {
        self.expanded.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.expanded.dim()
    }

    pub fn expanded(&self) -> &Array2<f64> {
        &self.expanded
    }

    /// Row-major view of the entries.
    pub fn as_slice(&self) -> &[f64] {
        self.expanded.as_slice().expect("latent codes are kept in standard layout")
    }

    pub fn into_expanded(self) -> Array2<f64> {
        self.expanded
    }

    /// Row-major flat copy of the expanded matrix.
    pub fn to_flat(&self) -> Vec<f64> {
        self.as_slice().to_vec()
    }

    pub fn from_flat(levels: usize, dims: usize, flat: Vec<f64>) -> Result<Self> {
        let m = Array2::from_shape_vec((levels, dims), flat).map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(m)
    }

    /// Reads a code from the binary `MLAT` format, or from headerless CSV when
    /// the path ends in `.csv`.
    pub fn read(path: &Path) -> Result<Self> {
        if is_csv(path) {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Self::from_csv_str(&text, &path.display().to_string())
        } else {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            Self::from_bytes(&bytes).map_err(|e| match e {
                Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
                other => other,
            })
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if is_csv(path) {
            let mut out = String::new();
            for row in self.expanded.rows() {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.push_str(&cells.join(","));
                out.push('\n');
            }
            fs::write(path, out).map_err(|e| Error::io(path, e))
        } else {
            let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
        }
    }

    /// `MLAT` magic, little-endian `u32` levels and dims, then row-major `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (l, d) = self.shape();
        let mut out = Vec::with_capacity(12 + 4 * l * d);
        out.extend_from_slice(LATENT_MAGIC);
        out.extend_from_slice(&(l as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for v in self.expanded.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let mut magic = [0u8; 4];
        cursor.read_exact(&mut magic).map_err(|_| Error::parse("latent", "truncated header"))?;
        if &magic != LATENT_MAGIC {
            return Err(Error::parse("latent", "bad magic, expected MLAT"));
        }
        let l = read_u32(&mut cursor)? as usize;
        let d = read_u32(&mut cursor)? as usize;
        if cursor.len() != 4 * l * d {
            return Err(Error::parse("latent", format!("payload has {} bytes, header declares {l}x{d}", cursor.len())));
        }
        let flat = cursor.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        Self::from_flat(l, d, flat)
    }

    pub fn from_csv_str(text: &str, context: &str) -> Result<Self> {
        let rows = parse_csv_matrix(text, context)?;
        Self::from_rows(&rows)
    }
}

fn read_u32(cursor: &mut &[u8]) -> Result<u32> {
    let mut buf = [0u8; 4];
    cursor.read_exact(&mut buf).map_err(|_| Error::parse("latent", "truncated header"))?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn is_csv(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Parses headerless numeric CSV into rows.
pub fn parse_csv_matrix(text: &str, context: &str) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(context, e))?;
        let row = record
            .iter()
            .map(|c| c.parse::<f64>().map_err(|e| Error::parse(context, format!("`{c}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Mean of the code's rows.
pub fn restricted_projection(code: &LatentCode) -> Array1<f64> {
    code.expanded.mean_axis(Axis(0)).expect("latent codes have at least one row")
}

/// Sum over rows of the squared Euclidean distance from the row to the row mean.
pub fn deviation_penalty(code: &LatentCode) -> f64 {
    let mean = restricted_projection(code);
    code.expanded.rows().into_iter().map(|row| row.iter().zip(&mean).map(|(a, m)| (a - m).powi(2)).sum::<f64>()).sum()
}

/// Gradient of [`deviation_penalty`]: twice each row's deviation from the mean.
pub fn deviation_penalty_grad(code: &LatentCode) -> Array2<f64> {
    let mean = restricted_projection(code);
    let mut g = code.expanded.clone();
    for mut row in g.rows_mut() {
        row -= &mean;
        row *= 2.0;
    }
    g
}

/// Frobenius distance between two equally shaped codes.
pub fn gan_distance(a: &LatentCode, b: &LatentCode) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dims(format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok(frobenius(a.as_slice(), b.as_slice()))
}

/// Euclidean distance between equal-length slices.
pub(crate) fn frobenius(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// A differentiable reconstruction loss `D(G(code), target)` for a fixed target.
pub trait ForwardModel {
    /// Expected `(levels, dims)` of the input code.
    fn shape(&self) -> (usize, usize);

    /// Loss value and its gradient with respect to the expanded matrix.
    fn evaluate(&self, code: &LatentCode) -> Result<(f64, Array2<f64>)>;
}

/// `G` is the identity and `D` the squared Frobenius distance to a target code.
#[derive(Debug, Clone)]
pub struct TargetDistanceModel {
    target: LatentCode,
}

impl TargetDistanceModel {
    pub fn new(target: LatentCode) -> Self {
        Self { target }
    }

    pub fn target(&self) -> &LatentCode {
        &self.target
    }
}

impl ForwardModel for TargetDistanceModel {
    fn shape(&self) -> (usize, usize) {
        self.target.shape()
    }

    fn evaluate(&self, code: &LatentCode) -> Result<(f64, Array2<f64>)> {
        if code.shape() != self.shape() {
            return Err(Error::dims(format!("{:?}", self.shape()), format!("{:?}", code.shape())));
        }
        let diff = &code.expanded - &self.target.expanded;
        let loss = diff.iter().map(|v| v * v).sum();
        Ok((loss, diff * 2.0))
    }
}

/// `G` is a fixed linear map from the flattened code (row-major) to `R^P`, and
/// `D` the squared Euclidean distance to a target vector.
#[derive(Debug, Clone)]
pub struct LinearForwardModel {
    map: Array2<f64>,
    target: Array1<f64>,
    shape: (usize, usize),
}

impl LinearForwardModel {
    pub fn new(map: Array2<f64>, target: Array1<f64>, shape: (usize, usize)) -> Result<Self> {
        if map.ncols() != shape.0 * shape.1 {
            return Err(Error::dims(shape.0 * shape.1, map.ncols()));
        }
        if map.nrows() != target.len() {
            return Err(Error::dims(map.nrows(), target.len()));
        }
        if map.iter().chain(target.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forward model parameter".into()));
        }
        Ok(Self { map, target, shape })
    }

    /// Gaussian map with entries of variance `1/outputs`, seeded.
    pub fn random<R: Rng + ?Sized>(
        shape: (usize, usize),
        outputs: usize,
        target: Array1<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let scale = 1.0 / (outputs as f64).sqrt();
        let map =
            Array2::from_shape_simple_fn((outputs, shape.0 * shape.1), || scale * rng.sample::<f64, _>(StandardNormal));
        Self::new(map, target, shape)
    }

    pub fn map(&self) -> &Array2<f64> {
        &self.map
    }

    pub fn target(&self) -> &Array1<f64> {
        &self.target
    }

    /// `G(code)`.
    pub fn render(&self, code: &LatentCode) -> Array1<f64> {
        self.map.dot(&Array1::from(code.to_flat()))
    }
}

impl ForwardModel for LinearForwardModel {
    fn shape(&self) -> (usize, usize) {
        self.shape
    }

    fn evaluate(&self, code: &LatentCode) -> Result<(f64, Array2<f64>)> {
        if code.shape() != self.shape {
            return Err(Error::dims(format!("{:?}", self.shape), format!("{:?}", code.shape())));
        }
        let residual = self.render(code) - &self.target;
        let loss = residual.dot(&residual);
        let grad = self.map.t().dot(&residual) * 2.0;
        let grad = grad.into_shape_with_order(self.shape).map_err(|e| Error::Shape(e.to_string()))?;
        Ok((loss, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub lambda: f64,
    pub step_size: f64,
    pub max_iters: usize,
    pub grad_tolerance: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self { lambda: 0.1, step_size: 1.0, max_iters: 1000, grad_tolerance: 1e-8 }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig("lambda must be a nonnegative real".into()));
        }
        self.descent().validate()
    }

    fn descent(&self) -> DescentConfig {
        DescentConfig {
            step_size: self.step_size,
            max_iters: self.max_iters,
            grad_tolerance: self.grad_tolerance,
            ..DescentConfig::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub code: LatentCode,
    /// Total objective before the first step and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Reconstruction loss plus `lambda` times the row-deviation penalty.
pub struct RegularizedObjective<'a, M: ForwardModel + ?Sized> {
    model: &'a M,
    lambda: f64,
}

impl<'a, M: ForwardModel + ?Sized> RegularizedObjective<'a, M> {
    pub fn new(model: &'a M, lambda: f64) -> Self {
        Self { model, lambda }
    }

    pub fn total(&self, code: &LatentCode) -> Result<(f64, Array2<f64>)> {
        let (loss, mut grad) = self.model.evaluate(code)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteObjective);
        }
        if grad.dim() != code.shape() {
            return Err(Error::dims(format!("{:?}", code.shape()), format!("{:?}", grad.dim())));
        }
        if self.lambda == 0.0 {
            return Ok((loss, grad));
        }
        let penalty = deviation_penalty(code);
        grad.scaled_add(self.lambda, &deviation_penalty_grad(code));
        Ok((loss + self.lambda * penalty, grad))
    }
}

impl<M: ForwardModel + ?Sized> Objective for RegularizedObjective<'_, M> {
    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (l, d) = self.model.shape();
        let code = LatentCode::from_flat(l, d, x.to_vec()).map_err(|e| match e {
            Error::NonFinite(_) => Error::NonFiniteObjective,
            other => other,
        })?;
        let (v, g) = self.total(&code)?;
        Ok((v, g.into_iter().collect()))
    }
}

/// Projects onto the latent space by gradient descent with backtracking on
/// `model loss + lambda * deviation_penalty`.
pub fn project<M: ForwardModel + ?Sized>(model: &M, init: &LatentCode, cfg: &ProjectionConfig) -> Result<Projection> {
    cfg.validate()?;
    if init.shape() != model.shape() {
        return Err(Error::dims(format!("{:?}", model.shape()), format!("{:?}", init.shape())));
    }
    let objective = RegularizedObjective::new(model, cfg.lambda);
    let out = optim::minimize(&objective, init.to_flat(), &cfg.descent())?;
    let (l, d) = init.shape();
    Ok(Projection {
        code: LatentCode::from_flat(l, d, out.x)?,
        trace: out.trace,
        iterations: out.iterations,
        converged: out.converged,
    })
}
