//! Confounded synthetic populations with known ground truth.
//!
//! Every identity owns two samples. A sample's latent rows are standard
//! Gaussian and share an identity component, so two images of one person sit
//! near each other in latent space. Attributes are linear in the standardized
//! restricted latent vector plus noise, coupled through the Cholesky factor
//! of a target correlation matrix. Attribute 0 thresholded at zero becomes
//! the binary matching attribute, and covariates load on the same latent
//! direction with weight `confounder_strength`. Recognition embeddings are a
//! random linear image of the identity component plus per-sample noise.
//!
//! Stored latent and embedding values are rounded to `f32` so that a dataset
//! survives [`save_dataset`](crate::dataset::save_dataset) and
//! [`load_dataset`](crate::dataset::load_dataset) bit for bit.

use indexmap::IndexMap;
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::benchmark::EmbeddingTable;
use crate::dataset::{CovariateSpec, Dataset, Sample};
use crate::disentangle::{gram_schmidt, AttributeMatrix};
use crate::error::{Error, Result};
use crate::latent::{restricted_projection, LatentCode};
use crate::matching::MatchSet;

const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub levels: usize,
    pub dims: usize,
    pub n_attrs: usize,
    /// Target attribute correlation matrix; identity when absent.
    pub attr_corr: Option<Vec<Vec<f64>>>,
    pub confounder_strength: f64,
    /// Attribute and covariate noise, relative to the unit latent signal.
    pub noise_sd: f64,
    pub seed: u64,
    pub n_binary_covariates: usize,
    pub n_real_covariates: usize,
    pub facerec_dim: usize,
    /// Per-sample recognition-embedding noise; each coordinate has
    /// variance `facerec_noise^2 / facerec_dim`.
    pub facerec_noise: f64,
    /// Share of latent variance that is specific to the sample rather than
    /// the identity.
    pub sample_weight: f64,
    /// Share of each row's variance that is not shared across rows.
    pub row_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            levels: 4,
            dims: 16,
            n_attrs: 2,
            attr_corr: None,
            confounder_strength: 1.0,
            noise_sd: 0.5,
            seed: 0,
            n_binary_covariates: 3,
            n_real_covariates: 2,
            facerec_dim: 128,
            facerec_noise: 0.2,
            sample_weight: 0.5,
            row_noise: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn n_covariates(&self) -> usize {
        self.n_binary_covariates + self.n_real_covariates
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n < 2 {
            return bad("n must be at least 2");
        }
        if self.levels == 0 || self.dims == 0 || self.n_attrs == 0 || self.facerec_dim == 0 {
            return bad("levels, dims, n_attrs and facerec_dim must be positive");
        }
        if self.n_attrs + self.n_covariates() > self.dims {
            return bad("dims must be at least n_attrs plus the number of covariates");
        }
        for (name, v) in [
            ("confounder_strength", self.confounder_strength),
            ("noise_sd", self.noise_sd),
            ("facerec_noise", self.facerec_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and nonnegative")));
            }
        }
        for (name, v) in [("sample_weight", self.sample_weight), ("row_noise", self.row_noise)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn correlation(&self) -> Array2<f64> {
        match &self.attr_corr {
            None => Array2::eye(self.n_attrs),
            Some(rows) => {
                let k = rows.len();
                Array2::from_shape_fn((k, k), |(i, j)| rows[i].get(j).copied().unwrap_or(f64::NAN))
            }
        }
    }

    pub fn covariate_names(&self) -> Vec<String> {
        (0..self.n_binary_covariates)
            .map(|k| format!("bin{k}"))
            .chain((0..self.n_real_covariates).map(|k| format!("real{k}")))
            .collect()
    }
}

/// Lower-triangular `C` with `C Cᵀ = corr`. Zero pivots (within tolerance)
/// are allowed, so singular but semidefinite matrices factor.
pub fn cholesky_psd(corr: &Array2<f64>) -> Result<Array2<f64>> {
    let k = corr.nrows();
    if corr.ncols() != k {
        return Err(Error::dims(k, corr.ncols()));
    }
    for i in 0..k {
        if (corr[[i, i]] - 1.0).abs() > PSD_TOLERANCE {
            return Err(Error::InvalidConfig("correlation matrix needs a unit diagonal".into()));
        }
        for j in 0..i {
            let (a, b) = (corr[[i, j]], corr[[j, i]]);
            if !a.is_finite() || (a - b).abs() > PSD_TOLERANCE {
                return Err(Error::InvalidConfig("correlation matrix must be symmetric".into()));
            }
        }
    }
    let mut c = Array2::<f64>::zeros((k, k));
    for j in 0..k {
        let pivot = corr[[j, j]] - (0..j).map(|m| c[[j, m]] * c[[j, m]]).sum::<f64>();
        if pivot < -PSD_TOLERANCE {
            return Err(Error::NotPsd);
        }
        let d = pivot.max(0.0).sqrt();
        c[[j, j]] = d;
        for i in j + 1..k {
            let off = corr[[i, j]] - (0..j).map(|m| c[[i, m]] * c[[j, m]]).sum::<f64>();
            if d <= PSD_TOLERANCE {
                if off.abs() > 1e-8 {
                    return Err(Error::NotPsd);
                }
            } else {
                c[[i, j]] = off / d;
            }
        }
    }
    Ok(c)
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Everything the generator knows that the dataset does not carry.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Orthonormal latent directions: attribute factors first, then one per
    /// covariate.
    pub directions: Array2<f64>,
    /// Standard deviation of each restricted coordinate.
    pub restricted_sd: f64,
    /// Cholesky factor of the attribute correlation.
    pub cholesky: Array2<f64>,
    pub noise_sd: f64,
    /// Continuous attributes, one row per sample in dataset order.
    pub attributes: AttributeMatrix,
}

impl GroundTruth {
    /// Value of the matching attribute's latent factor for a restricted vector.
    pub fn factor(&self, restricted: ArrayView1<f64>) -> f64 {
        self.directions.row(0).dot(&restricted) / self.restricted_sd
    }

    /// True probability that the matching attribute is 1.
    pub fn propensity(&self, restricted: ArrayView1<f64>) -> f64 {
        let f = self.factor(restricted);
        if self.noise_sd == 0.0 {
            return if f > 0.0 {
                1.0
            } else if f < 0.0 {
                0.0
            } else {
                0.5
            };
        }
        normal_cdf(f / self.noise_sd)
    }

    /// Bayes-optimal label under the true propensity.
    pub fn bayes_label(&self, restricted: ArrayView1<f64>) -> u8 {
        u8::from(self.factor(restricted) > 0.0)
    }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Draws a dataset and its ground truth. Output depends only on `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    let corr = cfg.correlation();
    if corr.nrows() != cfg.n_attrs {
        return Err(Error::dims(cfg.n_attrs, corr.nrows()));
    }
    let chol = cholesky_psd(&corr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let n_dirs = cfg.n_attrs + cfg.n_covariates();
    let raw = Array2::from_shape_simple_fn((n_dirs, cfg.dims), || gaussian(&mut rng));
    let directions = gram_schmidt(&raw)?;
    let face_map = Array2::from_shape_simple_fn((cfg.facerec_dim, cfg.dims), || gaussian(&mut rng))
        / ((cfg.facerec_dim * cfg.dims) as f64).sqrt();

    let n_ids = cfg.n.div_ceil(2);
    let (w, r) = (cfg.sample_weight, cfg.row_noise);
    let face_scale = cfg.facerec_noise / (cfg.facerec_dim as f64).sqrt();
    let mut latents = Vec::with_capacity(cfg.n);
    let mut faces = Vec::with_capacity(cfg.n);
    for id in 0..n_ids {
        let u = Array1::from_shape_simple_fn(cfg.dims, || gaussian(&mut rng));
        let center = face_map.dot(&u);
        for _ in 0..2.min(cfg.n - 2 * id) {
            let v = Array1::from_shape_simple_fn(cfg.dims, || gaussian(&mut rng));
            let base = &u * (1.0 - w).sqrt() + &v * w.sqrt();
            let rows = Array2::from_shape_fn((cfg.levels, cfg.dims), |(_, d)| base[d]) * (1.0 - r * r).sqrt()
                + Array2::from_shape_simple_fn((cfg.levels, cfg.dims), || r * gaussian(&mut rng));
            latents.push((id, LatentCode::new(rows.mapv(round_f32))?));
            let face: Vec<f64> = center.iter().map(|c| round_f32(c + face_scale * gaussian(&mut rng))).collect();
            faces.push(face);
        }
    }

    let restricted_sd = ((1.0 - r * r) + r * r / cfg.levels as f64).sqrt();
    let tau = cfg.noise_sd;
    let attr_norm = (1.0 + tau * tau).sqrt();
    let mut attributes = Array2::zeros((cfg.n, cfg.n_attrs));
    let mut samples = Vec::with_capacity(cfg.n);
    let names = cfg.covariate_names();
    for (i, ((id, latent), facerec)) in latents.into_iter().zip(faces).enumerate() {
        let zbar = restricted_projection(&latent) / restricted_sd;
        let factors = directions.dot(&zbar);
        let indep: Array1<f64> =
            (0..cfg.n_attrs).map(|k| (factors[k] + tau * gaussian(&mut rng)) / attr_norm).collect();
        let a = chol.dot(&indep);
        attributes.row_mut(i).assign(&a);
        let mut covariates = IndexMap::new();
        for (k, name) in names.iter().enumerate() {
            let signal = cfg.confounder_strength * factors[0] + factors[cfg.n_attrs + k] + tau * gaussian(&mut rng);
            let value = if k < cfg.n_binary_covariates { f64::from(u8::from(signal > 0.0)) } else { signal };
            covariates.insert(name.clone(), value);
        }
        samples.push(Sample {
            sample_id: format!("s{i:06}"),
            identity_id: format!("id{id:06}"),
            latent,
            facerec,
            attribute: u8::from(a[0] > 0.0),
            covariates,
            default_attrs_ok: true,
        });
    }

    let specs = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            if k < cfg.n_binary_covariates {
                CovariateSpec::binary(name.clone())
            } else {
                CovariateSpec::real(name.clone())
            }
        })
        .collect();
    let ds = Dataset::new(samples, specs)?;
    let truth = GroundTruth {
        directions,
        restricted_sd,
        cholesky: chol,
        noise_sd: tau,
        attributes: AttributeMatrix::unnamed(attributes)?,
    };
    Ok((ds, truth))
}

/// Regression task whose targets are squares of latent projections:
/// `A_j = (z·v_j)^2 - 1` with unit `v_j`, plus Gaussian noise. No linear
/// map predicts it better than the mean.
pub fn quadratic_task(
    n: usize,
    n_z: usize,
    n_a: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<(Array2<f64>, AttributeMatrix)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = Array2::from_shape_simple_fn((n_a, n_z), || gaussian(&mut rng));
    let dirs = gram_schmidt(&raw)?;
    let z = Array2::from_shape_simple_fn((n, n_z), || gaussian(&mut rng));
    let proj = z.dot(&dirs.t());
    let a = proj.mapv(|p| p * p - 1.0) + Array2::from_shape_simple_fn((n, n_a), || noise_sd * gaussian(&mut rng));
    Ok((z, AttributeMatrix::unnamed(a)?))
}

/// Recognition embeddings with a planted same-identity distance gap.
///
/// For every pair in `ms`, each reference gets a random identity center and
/// its test sample sits at distance `base + jitter` from it in a random
/// direction, plus `delta` when the test sample has attribute 0. Samples that
/// are neither tests nor references get their own random vector. The expected
/// group-0 minus group-1 mean distance is therefore `delta`.
pub fn offset_embeddings(
    ds: &Dataset,
    ms: &MatchSet,
    dim: usize,
    base: f64,
    jitter_sd: f64,
    delta: f64,
    seed: u64,
) -> Result<EmbeddingTable> {
    if dim == 0 {
        return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors: IndexMap<String, Vec<f64>> = IndexMap::new();
    for p in &ms.pairs {
        for (test, reference) in [(&p.id_a, &p.ref_a), (&p.id_b, &p.ref_b)] {
            let reference =
                reference.as_ref().ok_or_else(|| Error::MissingReference(p.id_a.clone(), p.id_b.clone()))?;
            let group = ds.get(test)?.attribute;
            let center = Array1::from_shape_simple_fn(dim, || gaussian(&mut rng));
            let mut dir = Array1::from_shape_simple_fn(dim, || gaussian(&mut rng));
            dir /= dir.dot(&dir).sqrt();
            let radius = base + jitter_sd * gaussian(&mut rng) + if group == 0 { delta } else { 0.0 };
            let point = &center + &(dir * radius.abs());
            vectors.insert(reference.clone(), center.to_vec());
            vectors.insert(test.clone(), point.to_vec());
        }
    }
    for s in ds.samples() {
        if !vectors.contains_key(&s.sample_id) {
            vectors.insert(s.sample_id.clone(), (0..dim).map(|_| gaussian(&mut rng)).collect());
        }
    }
    EmbeddingTable::new("planted", vectors)
}

/// Empirical Pearson correlation matrix of the columns of `m`.
pub fn empirical_correlation(m: &Array2<f64>) -> Array2<f64> {
    let k = m.ncols();
    let centered = m - &m.mean_axis(Axis(0)).expect("nonempty");
    let cov = centered.t().dot(&centered);
    Array2::from_shape_fn((k, k), |(i, j)| cov[[i, j]] / (cov[[i, i]] * cov[[j, j]]).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small() -> SynthConfig {
        SynthConfig { n: 200, seed: 11, ..SynthConfig::default() }
    }

    #[test]
    fn same_seed_same_dataset() {
        let (a, _) = generate(&small()).unwrap();
        let (b, _) = generate(&small()).unwrap();
        assert_eq!(a, b);
        let (c, _) = generate(&SynthConfig { seed: 12, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn two_samples_per_identity() {
        let (ds, _) = generate(&SynthConfig { n: 7, ..small() }).unwrap();
        let sizes: Vec<usize> = ds.identity_index().values().map(Vec::len).collect();
        assert_eq!(sizes, vec![2, 2, 2, 1]);
    }

    #[test]
    fn cholesky_reconstructs() {
        let corr = array![[1.0, 0.8, 0.2], [0.8, 1.0, 0.1], [0.2, 0.1, 1.0]];
        let c = cholesky_psd(&corr).unwrap();
        let back = c.dot(&c.t());
        assert!(back.iter().zip(&corr).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(c[[0, 1]], 0.0);
    }

    #[test]
    fn singular_psd_factors() {
        let corr = array![[1.0, 1.0], [1.0, 1.0]];
        let c = cholesky_psd(&corr).unwrap();
        assert_eq!(c, array![[1.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn indefinite_is_rejected() {
        let corr = array![[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]];
        assert!(matches!(cholesky_psd(&corr), Err(Error::NotPsd)));
        let cfg = SynthConfig {
            n_attrs: 3,
            attr_corr: Some(vec![vec![1.0, 0.9, -0.9], vec![0.9, 1.0, 0.9], vec![-0.9, 0.9, 1.0]]),
            ..small()
        };
        assert!(matches!(generate(&cfg), Err(Error::NotPsd)));
    }

    #[test]
    fn asymmetric_is_invalid() {
        let corr = array![[1.0, 0.5], [0.4, 1.0]];
        assert!(matches!(cholesky_psd(&corr), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn normal_cdf_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.96) - 0.975).abs() < 1e-4);
    }

    #[test]
    fn too_few_dims_is_invalid() {
        let cfg = SynthConfig { dims: 4, ..small() };
        assert!(matches!(generate(&cfg), Err(Error::InvalidConfig(_))));
    }
}
