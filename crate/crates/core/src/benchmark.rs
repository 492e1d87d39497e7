//! Recognition bias benchmarking on matched pairs.
//!
//! Each matched sample is compared with its reference image (another sample
//! of the same person) in the embedding space of a recognition model. The
//! per-group mean of these same-identity distances, and the difference
//! between the two group means, summarize how much harder the model finds
//! one group.
//!
//! Differences are always `mean(group 0) - mean(group 1)`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matching::{euclidean, MatchSet};
use crate::stats;

pub const DIFFERENCE_CONVENTION: &str = "mean(group 0) - mean(group 1)";

/// Embedding vectors of one recognition model, keyed by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    model_name: String,
    dims: usize,
    vectors: IndexMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(model_name: impl Into<String>, vectors: IndexMap<String, Vec<f64>>) -> Result<Self> {
        let dims = vectors.values().next().map_or(0, Vec::len);
        for (id, v) in &vectors {
            if v.len() != dims {
                return Err(Error::dims(dims, v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("embedding of `{id}`")));
            }
        }
        Ok(Self { model_name: model_name.into(), dims, vectors })
    }

    /// Parses `sample_id,v1,v2,...` rows. A first row whose second field is
    /// not numeric is taken as a header.
    pub fn from_csv_str(model_name: impl Into<String>, text: &str) -> Result<Self> {
        let model_name = model_name.into();
        let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut vectors = IndexMap::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::parse(&model_name, e))?;
            if record.is_empty() || (record.len() == 1 && record[0].is_empty()) {
                continue;
            }
            if line == 0 && record.get(1).is_some_and(|c| c.parse::<f64>().is_err()) {
                continue;
            }
            let id = record[0].to_string();
            let v = record
                .iter()
                .skip(1)
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|e| Error::parse(format!("{model_name} row {}", line + 1), format!("`{c}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if vectors.insert(id.clone(), v).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        Self::new(model_name, vectors)
    }

    /// Loads a CSV table; the model is named after the file stem.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name =
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string());
        Self::from_csv_str(name, &text)
    }

    /// Uses each sample's stored recognition embedding.
    pub fn from_dataset(model_name: impl Into<String>, ds: &Dataset) -> Result<Self> {
        let vectors = ds.samples().iter().map(|s| (s.sample_id.clone(), s.facerec.clone())).collect();
        Self::new(model_name, vectors)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for (id, v) in &self.vectors {
            out.push_str(id);
            for x in v {
                out.push(',');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, sample_id: &str) -> Result<&[f64]> {
        self.vectors.get(sample_id).map(Vec::as_slice).ok_or_else(|| Error::MissingEmbedding(sample_id.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    #[default]
    Euclidean,
    /// `1 - cos(angle)`.
    Cosine,
}

impl DistanceKind {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Self::Euclidean => euclidean(a, b),
            Self::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

/// Test/reference distances split by the test sample's attribute group.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupDistances {
    pub group0: Vec<f64>,
    pub group1: Vec<f64>,
}

fn split_by_group(
    ds: &Dataset,
    table: &EmbeddingTable,
    kind: DistanceKind,
    pairs: &[(&str, &str)],
) -> Result<GroupDistances> {
    let measured = pairs
        .par_iter()
        .map(|&(test, reference)| {
            let group = ds.get(test)?.attribute;
            let d = kind.distance(table.get(test)?, table.get(reference)?);
            Ok((group, d))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = GroupDistances::default();
    for (group, d) in measured {
        if group == 0 {
            out.group0.push(d);
        } else {
            out.group1.push(d);
        }
    }
    Ok(out)
}

/// Distance between every matched sample and its reference, assigned to the
/// group of the matched sample.
pub fn same_identity_distances(
    ms: &MatchSet,
    ds: &Dataset,
    table: &EmbeddingTable,
    kind: DistanceKind,
) -> Result<GroupDistances> {
    let mut pairs = Vec::with_capacity(2 * ms.len());
    for p in &ms.pairs {
        let (Some(ra), Some(rb)) = (&p.ref_a, &p.ref_b) else {
            return Err(Error::MissingReference(p.id_a.clone(), p.id_b.clone()));
        };
        pairs.push((p.id_a.as_str(), ra.as_str()));
        pairs.push((p.id_b.as_str(), rb.as_str()));
    }
    split_by_group(ds, table, kind, &pairs)
}

/// Pairs every sample that has another sample of its identity with one such
/// sample drawn at random. Samples are visited in id order, so the draw
/// depends only on the dataset contents and `seed`.
pub fn random_reference_pairs(ds: &Dataset, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<&str> = ds.samples().iter().map(|s| s.sample_id.as_str()).collect();
    order.sort_unstable();
    let mut out = Vec::new();
    for id in order {
        let s = ds.get(id).expect("listed sample");
        let mut others: Vec<&str> =
            ds.identity_index()[&s.identity_id].iter().map(String::as_str).filter(|o| *o != id).collect();
        others.sort_unstable();
        if let Some(r) = others.choose(&mut rng) {
            out.push((id.to_string(), r.to_string()));
        }
    }
    out
}

/// Same-identity distances over the whole dataset with random references.
pub fn unmatched_distances(
    ds: &Dataset,
    table: &EmbeddingTable,
    kind: DistanceKind,
    seed: u64,
) -> Result<GroupDistances> {
    let pairs = random_reference_pairs(ds, seed);
    let refs: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    split_by_group(ds, table, kind, &refs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub mean0: f64,
    pub mean1: f64,
    pub difference: f64,
    pub sem0: f64,
    pub sem1: f64,
}

/// Mean over a sorted copy, so the result does not depend on input order.
fn ordered_mean_sem(xs: &[f64]) -> (f64, f64) {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    (stats::mean(&sorted), stats::sem(&sorted))
}

/// `mean(d0) - mean(d1)` with the standard error of each mean.
pub fn bias_gap(d0: &[f64], d1: &[f64]) -> Result<Gap> {
    if d0.is_empty() {
        return Err(Error::EmptyGroup(0));
    }
    if d1.is_empty() {
        return Err(Error::EmptyGroup(1));
    }
    let (mean0, sem0) = ordered_mean_sem(d0);
    let (mean1, sem1) = ordered_mean_sem(d1);
    Ok(Gap { mean0, mean1, difference: mean0 - mean1, sem0, sem1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBias {
    pub mean_dist_group0: f64,
    pub mean_dist_group1: f64,
    pub difference: f64,
    pub sem_group0: f64,
    pub sem_group1: f64,
    pub n_group0: usize,
    pub n_group1: usize,
}

impl ModelBias {
    fn from_distances(d: &GroupDistances) -> Result<Self> {
        let g = bias_gap(&d.group0, &d.group1)?;
        Ok(Self {
            mean_dist_group0: g.mean0,
            mean_dist_group1: g.mean1,
            difference: g.difference,
            sem_group0: g.sem0,
            sem_group1: g.sem1,
            n_group0: d.group0.len(),
            n_group1: d.group1.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    /// Per model, in the order given.
    pub models: IndexMap<String, ModelBias>,
    pub provenance: BTreeMap<String, serde_json::Value>,
}

fn base_provenance(kind: DistanceKind) -> BTreeMap<String, serde_json::Value> {
    let mut p = BTreeMap::new();
    p.insert("difference".into(), DIFFERENCE_CONVENTION.into());
    p.insert("distance".into(), serde_json::to_value(kind).expect("serializable"));
    p
}

fn unique_models(tables: &[EmbeddingTable]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for t in tables {
        if !seen.insert(t.model_name()) {
            return Err(Error::InvalidConfig(format!("model `{}` given twice", t.model_name())));
        }
    }
    Ok(())
}

/// Bias of each model on the matched pairs and their references.
pub fn bias_report(ms: &MatchSet, ds: &Dataset, tables: &[EmbeddingTable], kind: DistanceKind) -> Result<BiasReport> {
    unique_models(tables)?;
    let mut models = IndexMap::new();
    for t in tables {
        let d = same_identity_distances(ms, ds, t, kind)?;
        models.insert(t.model_name().to_string(), ModelBias::from_distances(&d)?);
    }
    let mut provenance = base_provenance(kind);
    provenance.insert("condition".into(), "matched".into());
    provenance.insert("n_pairs".into(), ms.len().into());
    Ok(BiasReport { models, provenance })
}

/// Bias of each model on the full dataset with seeded random references.
pub fn unmatched_report(ds: &Dataset, tables: &[EmbeddingTable], kind: DistanceKind, seed: u64) -> Result<BiasReport> {
    unique_models(tables)?;
    let mut models = IndexMap::new();
    for t in tables {
        let d = unmatched_distances(ds, t, kind, seed)?;
        models.insert(t.model_name().to_string(), ModelBias::from_distances(&d)?);
    }
    let mut provenance = base_provenance(kind);
    provenance.insert("condition".into(), "original".into());
    provenance.insert("seed".into(), seed.into());
    Ok(BiasReport { models, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::sample;
    use crate::matching::MatchPair;
    use approx::assert_abs_diff_eq;

    fn fixture() -> (Dataset, MatchSet, EmbeddingTable) {
        let ds = Dataset::new(
            vec![
                sample("a1", "p", 0, &[0.0]),
                sample("a2", "p", 0, &[0.0]),
                sample("b1", "q", 1, &[0.0]),
                sample("b2", "q", 1, &[0.0]),
                sample("c1", "r", 0, &[0.0]),
                sample("c2", "r", 0, &[0.0]),
                sample("d1", "s", 1, &[0.0]),
                sample("d2", "s", 1, &[0.0]),
            ],
            vec![],
        )
        .unwrap();
        let pair = |a: &str, ra: &str, b: &str, rb: &str| MatchPair {
            id_a: a.into(),
            id_b: b.into(),
            distance: 0.0,
            ref_a: Some(ra.into()),
            ref_b: Some(rb.into()),
        };
        let ms = MatchSet::new(vec![pair("a1", "a2", "b1", "b2"), pair("c1", "c2", "d1", "d2")]);
        let text = "sample_id,x,y\na1,0,0\na2,3,4\nb1,1,1\nb2,1,2\nc1,0,0\nc2,0,0\nd1,2,0\nd2,0,0\n";
        (ds, ms, EmbeddingTable::from_csv_str("m", text).unwrap())
    }

    #[test]
    fn hand_computed_distances() {
        let (ds, ms, t) = fixture();
        let d = same_identity_distances(&ms, &ds, &t, DistanceKind::Euclidean).unwrap();
        assert_eq!(d.group0, vec![5.0, 0.0]);
        assert_eq!(d.group1, vec![1.0, 2.0]);
        let g = bias_gap(&d.group0, &d.group1).unwrap();
        assert_eq!(g.difference, 2.5 - 1.5);
    }

    #[test]
    fn unit_offset_gives_unit_distance() {
        let t = EmbeddingTable::from_csv_str("m", "x,0.5,2\ny,1.5,2\n").unwrap();
        assert_eq!(DistanceKind::Euclidean.distance(t.get("x").unwrap(), t.get("y").unwrap()), 1.0);
        assert_eq!(DistanceKind::Euclidean.distance(t.get("x").unwrap(), t.get("x").unwrap()), 0.0);
    }

    #[test]
    fn cosine_distance() {
        assert_abs_diff_eq!(DistanceKind::Cosine.distance(&[1.0, 0.0], &[0.0, 2.0]), 1.0);
        assert_abs_diff_eq!(DistanceKind::Cosine.distance(&[1.0, 1.0], &[2.0, 2.0]), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gap_cases() {
        let g = bias_gap(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g.difference, 0.0);
        assert_abs_diff_eq!(g.sem0, 1.0 / 3f64.sqrt(), epsilon = 1e-12);
        let g = bias_gap(&[0.6], &[0.5]).unwrap();
        assert_abs_diff_eq!(g.difference, 0.1, epsilon = 1e-15);
        assert!(matches!(bias_gap(&[], &[1.0]), Err(Error::EmptyGroup(0))));
        assert!(matches!(bias_gap(&[1.0], &[]), Err(Error::EmptyGroup(1))));
    }

    #[test]
    fn missing_inputs() {
        let (ds, mut ms, t) = fixture();
        let partial = EmbeddingTable::from_csv_str("m", "a1,0\n").unwrap();
        assert!(matches!(
            same_identity_distances(&ms, &ds, &partial, DistanceKind::Euclidean),
            Err(Error::MissingEmbedding(_))
        ));
        ms.pairs[1].ref_b = None;
        assert!(matches!(
            same_identity_distances(&ms, &ds, &t, DistanceKind::Euclidean),
            Err(Error::MissingReference(_, _))
        ));
    }

    #[test]
    fn report_ignores_pair_order() {
        let (ds, mut ms, t) = fixture();
        let r1 = bias_report(&ms, &ds, std::slice::from_ref(&t), DistanceKind::Euclidean).unwrap();
        ms.pairs.reverse();
        let r2 = bias_report(&ms, &ds, &[t], DistanceKind::Euclidean).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn random_references_are_same_identity() {
        let (ds, _, t) = fixture();
        let pairs = random_reference_pairs(&ds, 3);
        assert_eq!(pairs.len(), 8);
        for (a, b) in &pairs {
            assert_ne!(a, b);
            assert_eq!(ds.get(a).unwrap().identity_id, ds.get(b).unwrap().identity_id);
        }
        let r = unmatched_report(&ds, &[t], DistanceKind::Euclidean, 3).unwrap();
        assert_eq!(r.models["m"].n_group0 + r.models["m"].n_group1, 8);
    }

    #[test]
    fn inconsistent_table_rejected() {
        assert!(EmbeddingTable::from_csv_str("m", "a,1,2\nb,1\n").is_err());
        assert!(matches!(EmbeddingTable::from_csv_str("m", "a,1\na,2\n"), Err(Error::DuplicateId(_))));
    }
}
