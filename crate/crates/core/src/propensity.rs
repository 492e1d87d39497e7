//! Propensity scores from restricted latent vectors and sequential caliper
//! matching on those scores.

use std::collections::HashSet;

use indexmap::IndexMap;
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::latent::restricted_projection;
use crate::matching::{reference_candidates, MatchConstraints, MatchPair, MatchSet};
use crate::optim::{self, DescentConfig, Objective};

pub const DEFAULT_CALIPER: f64 = 0.1;
pub const DEFAULT_L2: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub l2: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl PropensityModel {
    pub fn logit(&self, x: ArrayView1<f64>) -> f64 {
        x.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>() + self.intercept
    }

    pub fn score(&self, x: ArrayView1<f64>) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn dims(&self) -> usize {
        self.weights.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub l2: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { l2: DEFAULT_L2, max_iters: 2000, tol: 1e-6 }
    }
}

/// Mean cross-entropy plus `(l2 / 2) * ||weights||^2`; the intercept is the
/// last parameter and is not penalized.
pub struct LogisticObjective<'a> {
    features: &'a Array2<f64>,
    labels: Array1<f64>,
    l2: f64,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(features: &'a Array2<f64>, labels: &[u8], l2: f64) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::dims(features.nrows(), labels.len()));
        }
        Ok(Self { features, labels: labels.iter().map(|&y| y as f64).collect(), l2 })
    }

    fn logits(&self, params: &[f64]) -> Array1<f64> {
        let d = self.features.ncols();
        let w = ArrayView1::from(&params[..d]);
        self.features.dot(&w) + params[d]
    }
}

impl Objective for LogisticObjective<'_> {
    fn value_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.features.ncols();
        let n = self.features.nrows() as f64;
        let z = self.logits(params);
        let mut loss = 0.0;
        let mut resid = Array1::zeros(z.len());
        for ((r, &zi), &yi) in resid.iter_mut().zip(&z).zip(&self.labels) {
            loss += softplus(zi) - yi * zi;
            *r = (sigmoid(zi) - yi) / n;
        }
        let w = &params[..d];
        let penalty: f64 = w.iter().map(|v| v * v).sum::<f64>() * self.l2 / 2.0;
        let mut grad: Vec<f64> = self.features.t().dot(&resid).to_vec();
        for (g, wi) in grad.iter_mut().zip(w) {
            *g += self.l2 * wi;
        }
        grad.push(resid.sum());
        Ok((loss / n + penalty, grad))
    }

    fn value(&self, params: &[f64]) -> Result<f64> {
        let d = self.features.ncols();
        let z = self.logits(params);
        let loss: f64 = z.iter().zip(&self.labels).map(|(&zi, &yi)| softplus(zi) - yi * zi).sum();
        let penalty: f64 = params[..d].iter().map(|v| v * v).sum::<f64>() * self.l2 / 2.0;
        Ok(loss / self.features.nrows() as f64 + penalty)
    }
}

/// Fits an L2-regularized logistic regression by gradient descent with
/// backtracking, starting from zero.
pub fn fit_logistic(features: &Array2<f64>, labels: &[u8], cfg: &LogisticConfig) -> Result<PropensityModel> {
    if features.nrows() < 2 {
        return Err(Error::Shape("logistic regression needs at least two rows".into()));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::InvalidConfig("labels must be 0 or 1".into()));
    }
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::SingleClass);
    }
    if !(cfg.l2 >= 0.0) {
        return Err(Error::InvalidConfig("l2 must be nonnegative".into()));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logistic features".into()));
    }
    let objective = LogisticObjective::new(features, labels, cfg.l2)?;
    let d = features.ncols();
    let descent =
        DescentConfig { step_size: 1.0, max_iters: cfg.max_iters, grad_tolerance: cfg.tol, ..DescentConfig::default() };
    let out = optim::minimize(&objective, vec![0.0; d + 1], &descent).map_err(|e| match e {
        Error::NonFiniteObjective => Error::NonFinite("logistic objective".into()),
        other => other,
    })?;
    let mut params = out.x;
    let intercept = params.pop().expect("intercept present");
    Ok(PropensityModel { weights: params, intercept, l2: cfg.l2 })
}

/// Score of each sample's restricted latent vector, in dataset order.
pub fn propensity_scores(m: &PropensityModel, ds: &Dataset) -> Result<IndexMap<String, f64>> {
    if let Some((_, d)) = ds.latent_shape() {
        if d != m.dims() {
            return Err(Error::Shape(format!("model expects {} dims, latent codes have {d}", m.dims())));
        }
    }
    Ok(ds.samples().iter().map(|s| (s.sample_id.clone(), m.score(restricted_projection(&s.latent).view()))).collect())
}

/// Stratified fold assignment: each class is shuffled with `seed` and dealt
/// round-robin across folds.
pub fn stratified_folds(labels: &[u8], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut offset = 0;
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            assignment[i] = (k + offset) % folds;
        }
        // Continue dealing where the first class stopped so small folds stay balanced.
        offset = (offset + labels.iter().filter(|&&y| y == class).count()) % folds;
    }
    assignment
}

fn fold_fits(
    features: &Array2<f64>,
    labels: &[u8],
    folds: usize,
    cfg: &LogisticConfig,
    seed: u64,
) -> Result<(Vec<usize>, Vec<PropensityModel>)> {
    if folds < 2 {
        return Err(Error::InvalidConfig("folds must be at least 2".into()));
    }
    if features.nrows() != labels.len() {
        return Err(Error::dims(features.nrows(), labels.len()));
    }
    let assignment = stratified_folds(labels, folds, seed);
    let models = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] != f).collect();
            let test_count = labels.len() - train.len();
            if train.is_empty() || test_count == 0 {
                return Err(Error::FoldDegenerate(f));
            }
            let x = features.select(Axis(0), &train);
            let y: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
            fit_logistic(&x, &y, cfg).map_err(|e| match e {
                Error::SingleClass | Error::Shape(_) => Error::FoldDegenerate(f),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((assignment, models))
}

/// Mean held-out accuracy (score > 0.5 versus label) over stratified folds.
pub fn cross_validate(
    features: &Array2<f64>,
    labels: &[u8],
    folds: usize,
    cfg: &LogisticConfig,
    seed: u64,
) -> Result<f64> {
    let (assignment, models) = fold_fits(features, labels, folds, cfg, seed)?;
    let mut total = 0.0;
    for (f, m) in models.iter().enumerate() {
        let test: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] == f).collect();
        let correct = test.iter().filter(|&&i| (m.score(features.row(i)) > 0.5) == (labels[i] == 1)).count();
        total += correct as f64 / test.len() as f64;
    }
    Ok(total / folds as f64)
}

/// Out-of-fold propensity scores: each sample is scored by the model that did
/// not see it during training.
pub fn cross_fitted_scores(
    ds: &Dataset,
    folds: usize,
    cfg: &LogisticConfig,
    seed: u64,
) -> Result<IndexMap<String, f64>> {
    let features = ds.restricted_matrix();
    let labels = ds.attributes();
    let (assignment, models) = fold_fits(&features, &labels, folds, cfg, seed)?;
    Ok(ds
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.sample_id.clone(), models[assignment[i]].score(features.row(i))))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaliperConfig {
    pub caliper: f64,
    pub seed: u64,
    /// Optional recognition-distance and reference constraints; off by default.
    #[serde(default)]
    pub constraints: MatchConstraints,
}

impl Default for CaliperConfig {
    fn default() -> Self {
        Self { caliper: DEFAULT_CALIPER, seed: 0, constraints: MatchConstraints::default() }
    }
}

/// Sequential nearest-score matching within a caliper.
///
/// The smaller attribute group (group 0 on a tie) is visited in a seeded random
/// order. Each query takes the unmatched opposite-group sample with the
/// closest score (ties by sample id) if the gap is within the caliper;
/// otherwise the query is discarded. Accepted pairs retire both identities.
pub fn caliper_match(scores: &IndexMap<String, f64>, ds: &Dataset, cfg: &CaliperConfig) -> Result<MatchSet> {
    if !(cfg.caliper > 0.0) {
        return Err(Error::InvalidConfig("caliper must be positive".into()));
    }
    cfg.constraints.validate()?;
    let samples = ds.samples();
    let score_of = |i: usize| -> Result<f64> {
        scores.get(&samples[i].sample_id).copied().ok_or_else(|| Error::UnknownId(samples[i].sample_id.clone()))
    };
    let mut groups: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, s) in samples.iter().enumerate() {
        groups[s.attribute as usize].push(i);
    }
    for g in &mut groups {
        g.sort_by(|&a, &b| samples[a].sample_id.cmp(&samples[b].sample_id));
    }
    let query_group = if groups[1].len() < groups[0].len() { 1 } else { 0 };
    let mut queries = groups[query_group].clone();
    let pool = &groups[1 - query_group];
    let pool_scores = pool.iter().map(|&j| score_of(j)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    queries.shuffle(&mut rng);

    let c = &cfg.constraints;
    let has_ref: Vec<bool> =
        samples.iter().map(|s| !c.require_references || !reference_candidates(s, ds, c).is_empty()).collect();
    let mut taken = vec![false; pool.len()];
    let mut retired: HashSet<&str> = HashSet::new();
    let mut pairs = Vec::new();
    for q in queries {
        let qs = &samples[q];
        if retired.contains(qs.identity_id.as_str()) || !has_ref[q] {
            continue;
        }
        let q_score = score_of(q)?;
        let mut best: Option<(f64, usize)> = None;
        for (k, &j) in pool.iter().enumerate() {
            let s = &samples[j];
            if taken[k] || !has_ref[j] || s.identity_id == qs.identity_id || retired.contains(s.identity_id.as_str()) {
                continue;
            }
            if let Some(t) = c.facerec_threshold {
                if crate::matching::euclidean(&qs.facerec, &s.facerec) > t {
                    continue;
                }
            }
            let gap = (pool_scores[k] - q_score).abs();
            // Pool is sorted by id, so strict comparison keeps the smallest id on ties.
            if best.is_none_or(|(g, _)| gap < g) {
                best = Some((gap, k));
            }
        }
        let Some((gap, k)) = best else { continue };
        if gap > cfg.caliper {
            continue;
        }
        taken[k] = true;
        let j = pool[k];
        retired.insert(qs.identity_id.as_str());
        retired.insert(samples[j].identity_id.as_str());
        let (a, b) = if qs.attribute == 0 { (q, j) } else { (j, q) };
        let mut pair = MatchPair {
            id_a: samples[a].sample_id.clone(),
            id_b: samples[b].sample_id.clone(),
            distance: gap,
            ref_a: None,
            ref_b: None,
        };
        if c.require_references {
            let (ra, rb) = crate::matching::select_references(&pair, ds, &crate::matching::facerec_difficulty, c)?;
            pair.ref_a = Some(ra);
            pair.ref_b = Some(rb);
        }
        pairs.push(pair);
    }

    let mut set = MatchSet::new(pairs);
    set.provenance.insert("method".into(), "propensity_caliper".into());
    set.provenance.insert("caliper".into(), cfg.caliper.into());
    set.provenance.insert("seed".into(), cfg.seed.into());
    set.provenance.insert("constraints".into(), serde_json::to_value(c).expect("serializable"));
    Ok(set)
}

/// Mean score of each attribute group over the listed samples.
pub fn group_mean_scores(scores: &IndexMap<String, f64>, ds: &Dataset, ids: &[String]) -> Result<(f64, f64)> {
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for id in ids {
        let s = ds.get(id)?;
        let v = scores.get(id).ok_or_else(|| Error::UnknownId(id.clone()))?;
        sums[s.attribute as usize] += v;
        counts[s.attribute as usize] += 1;
    }
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyGroup(g as u8));
    }
    Ok((sums[0] / counts[0] as f64, sums[1] / counts[1] as f64))
}
