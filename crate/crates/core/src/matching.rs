//! Latent-distance matching across a binary attribute.
//!
//! Pairs always join one sample from each attribute group and never share an
//! identity. Two optional constraints narrow the candidate set: recognition
//! embeddings within a Euclidean threshold, and the existence of a valid
//! reference image (another sample of the same identity) on both sides.
//!
//! [`greedy_match`] accepts the globally closest feasible pair first, then
//! retires every sample of both identities before picking the next one.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::latent::frobenius;

pub const DEFAULT_FACEREC_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchConstraints {
    /// Maximum Euclidean distance between recognition embeddings of a pair.
    pub facerec_threshold: Option<f64>,
    /// Both members must have a valid reference image.
    pub require_references: bool,
    /// References must pass the default-attributes filter.
    pub require_default_attrs: bool,
}

impl MatchConstraints {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.facerec_threshold {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfig("facerec_threshold must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    /// Member with attribute 0.
    pub id_a: String,
    /// Member with attribute 1.
    pub id_b: String,
    pub distance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_b: Option<String>,
}

impl MatchPair {
    pub fn has_references(&self) -> bool {
        self.ref_a.is_some() && self.ref_b.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub pairs: Vec<MatchPair>,
    /// Snapshot of the configuration that produced the pairs.
    pub provenance: BTreeMap<String, serde_json::Value>,
}

impl MatchSet {
    pub fn new(pairs: Vec<MatchPair>) -> Self {
        Self { pairs, provenance: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Matched members (not references) of the given attribute group.
    pub fn members(&self, group: u8) -> Vec<String> {
        self.pairs.iter().map(|p| if group == 0 { p.id_a.clone() } else { p.id_b.clone() }).collect()
    }

    /// Checks the structural invariants against `ds`: opposite attributes,
    /// distinct identities, no sample or identity reused, references valid.
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        let mut used = HashSet::new();
        let mut identities = HashSet::new();
        for p in &self.pairs {
            let a = ds.get(&p.id_a)?;
            let b = ds.get(&p.id_b)?;
            if a.attribute != 0 || b.attribute != 1 {
                return Err(Error::InvalidConfig(format!(
                    "pair ({}, {}) does not join attribute 0 with attribute 1",
                    p.id_a, p.id_b
                )));
            }
            if a.identity_id == b.identity_id {
                return Err(Error::InvalidConfig(format!(
                    "pair ({}, {}) shares identity {}",
                    p.id_a, p.id_b, a.identity_id
                )));
            }
            for (member, reference) in [(a, &p.ref_a), (b, &p.ref_b)] {
                if let Some(r) = reference {
                    let rs = ds.get(r)?;
                    if rs.identity_id != member.identity_id || rs.sample_id == member.sample_id {
                        return Err(Error::InvalidConfig(format!(
                            "reference {r} is not a distinct sample of {}",
                            member.identity_id
                        )));
                    }
                }
            }
            let ids = [Some(&p.id_a), Some(&p.id_b), p.ref_a.as_ref(), p.ref_b.as_ref()];
            for id in ids.into_iter().flatten() {
                if !used.insert(id.clone()) {
                    return Err(Error::InvalidConfig(format!("sample {id} used twice")));
                }
            }
            for ident in [&a.identity_id, &b.identity_id] {
                if !identities.insert(ident.clone()) {
                    return Err(Error::InvalidConfig(format!("identity {ident} used twice")));
                }
            }
        }
        Ok(())
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    frobenius(a, b)
}

/// Default reference difficulty: Euclidean distance between recognition embeddings.
pub fn facerec_difficulty(reference: &Sample, test: &Sample) -> f64 {
    euclidean(&reference.facerec, &test.facerec)
}

/// Candidate reference images for `member`: other samples of its identity,
/// filtered by the default-attributes flag when required.
pub fn reference_candidates<'a>(member: &Sample, ds: &'a Dataset, c: &MatchConstraints) -> Vec<&'a Sample> {
    ds.identity_index()
        .get(&member.identity_id)
        .into_iter()
        .flatten()
        .filter(|id| **id != member.sample_id)
        .filter_map(|id| ds.get(id).ok())
        .filter(|s| !c.require_default_attrs || s.default_attrs_ok)
        .collect()
}

/// Per-sample facts reused across the pair scan.
struct Index<'a> {
    ds: &'a Dataset,
    /// Position of each sample in lexicographic sample-id order.
    rank: Vec<u32>,
    identity: Vec<u32>,
    has_reference: Vec<bool>,
}

impl<'a> Index<'a> {
    fn new(ds: &'a Dataset, c: &MatchConstraints) -> Self {
        let samples = ds.samples();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by(|&a, &b| samples[a].sample_id.cmp(&samples[b].sample_id));
        let mut rank = vec![0u32; samples.len()];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r as u32;
        }
        let identity =
            samples.iter().map(|s| ds.identity_index().get_index_of(&s.identity_id).unwrap() as u32).collect();
        let has_reference =
            samples.iter().map(|s| !c.require_references || !reference_candidates(s, ds, c).is_empty()).collect();
        Self { ds, rank, identity, has_reference }
    }

    /// Cross-group constraints other than the attribute test.
    fn feasible(&self, i: usize, j: usize, c: &MatchConstraints) -> bool {
        let samples = self.ds.samples();
        if self.identity[i] == self.identity[j] {
            return false;
        }
        if !(self.has_reference[i] && self.has_reference[j]) {
            return false;
        }
        match c.facerec_threshold {
            Some(t) => euclidean(&samples[i].facerec, &samples[j].facerec) <= t,
            None => true,
        }
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        let s = self.ds.samples();
        frobenius(s[i].latent.as_slice(), s[j].latent.as_slice())
    }
}

/// Nearest feasible opposite-attribute sample to `query`, ties broken by
/// sample id. Samples in `excluded` are skipped.
pub fn find_match(
    query: &str,
    ds: &Dataset,
    c: &MatchConstraints,
    excluded: &HashSet<String>,
) -> Result<Option<(String, f64)>> {
    c.validate()?;
    let qi = ds.position(query)?;
    let index = Index::new(ds, c);
    let q = &ds.samples()[qi];
    let mut best: Option<(f64, &str)> = None;
    for (j, s) in ds.samples().iter().enumerate() {
        if s.attribute == q.attribute || excluded.contains(&s.sample_id) || !index.feasible(qi, j, c) {
            continue;
        }
        let d = index.distance(qi, j);
        let better = match best {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && s.sample_id.as_str() < bid),
        };
        if better {
            best = Some((d, &s.sample_id));
        }
    }
    Ok(best.map(|(d, id)| (id.to_string(), d)))
}

/// Greedy smallest-distance-first matching with identity removal, using the
/// recognition-embedding distance as reference difficulty.
pub fn greedy_match(ds: &Dataset, c: &MatchConstraints, n_pairs: Option<usize>) -> Result<MatchSet> {
    greedy_match_with(ds, c, n_pairs, &facerec_difficulty)
}

/// [`greedy_match`] with a caller-supplied reference difficulty.
///
/// All feasible cross-group pairs are sorted by `(distance, id_a, id_b)` and
/// scanned once; a pair is skipped when either identity has already been
/// retired, which reproduces re-sorting the remaining pool after each step.
pub fn greedy_match_with(
    ds: &Dataset,
    c: &MatchConstraints,
    n_pairs: Option<usize>,
    difficulty: &(dyn Fn(&Sample, &Sample) -> f64 + Sync),
) -> Result<MatchSet> {
    c.validate()?;
    let index = Index::new(ds, c);
    let samples = ds.samples();
    let group0: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].attribute == 0).collect();
    let group1: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].attribute == 1).collect();

    let mut candidates: Vec<(f64, u32, u32, u32, u32)> = group0
        .par_iter()
        .flat_map_iter(|&i| {
            let index = &index;
            group1
                .iter()
                .filter(move |&&j| index.feasible(i, j, c))
                .map(move |&j| (index.distance(i, j), index.rank[i], index.rank[j], i as u32, j as u32))
        })
        .collect();
    candidates.par_sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let limit = n_pairs.unwrap_or(usize::MAX);
    let mut retired = vec![false; ds.identity_index().len()];
    let mut pairs = Vec::new();
    for &(distance, _, _, i, j) in &candidates {
        if pairs.len() >= limit {
            break;
        }
        let (i, j) = (i as usize, j as usize);
        let (ii, ij) = (index.identity[i] as usize, index.identity[j] as usize);
        if retired[ii] || retired[ij] {
            continue;
        }
        retired[ii] = true;
        retired[ij] = true;
        let mut pair = MatchPair {
            id_a: samples[i].sample_id.clone(),
            id_b: samples[j].sample_id.clone(),
            distance,
            ref_a: None,
            ref_b: None,
        };
        if c.require_references {
            let (ra, rb) = select_references(&pair, ds, difficulty, c)?;
            pair.ref_a = Some(ra);
            pair.ref_b = Some(rb);
        }
        pairs.push(pair);
    }

    let mut set = MatchSet::new(pairs);
    set.provenance.insert("method".into(), "greedy_latent_distance".into());
    set.provenance.insert("constraints".into(), serde_json::to_value(c).expect("serializable"));
    set.provenance.insert("n_pairs".into(), n_pairs.map_or(serde_json::Value::Null, |n| n.into()));
    Ok(set)
}

/// Chooses one reference per side so that the two reference-to-test
/// difficulties are as close to equal as possible. Ties go to the
/// lexicographically smallest `(ref_a, ref_b)`.
pub fn select_references(
    pair: &MatchPair,
    ds: &Dataset,
    difficulty: &dyn Fn(&Sample, &Sample) -> f64,
    c: &MatchConstraints,
) -> Result<(String, String)> {
    let a = ds.get(&pair.id_a)?;
    let b = ds.get(&pair.id_b)?;
    let score = |member: &Sample| -> Result<Vec<(f64, &str)>> {
        let mut v: Vec<(f64, &str)> = reference_candidates(member, ds, c)
            .into_iter()
            .map(|r| (difficulty(r, member), r.sample_id.as_str()))
            .collect();
        if v.is_empty() {
            return Err(Error::NoValidReference(member.sample_id.clone()));
        }
        v.sort_by(|x, y| x.1.cmp(y.1));
        Ok(v)
    };
    let cand_a = score(a)?;
    let cand_b = score(b)?;
    let mut best: Option<(f64, &str, &str)> = None;
    for &(da, ra) in &cand_a {
        for &(db, rb) in &cand_b {
            let gap = (da - db).abs();
            if best.is_none_or(|(g, _, _)| gap < g) {
                best = Some((gap, ra, rb));
            }
        }
    }
    let (_, ra, rb) = best.expect("both candidate lists are non-empty");
    Ok((ra.to_string(), rb.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Metric {
    /// Frobenius distance between expanded latent codes.
    Gan,
    /// Euclidean distance between recognition embeddings.
    Facerec,
    /// Latent distance over candidates within a recognition-distance threshold.
    Combined { threshold: f64 },
}

/// The `k` samples nearest to `query` (excluding itself), ordered by distance
/// and then sample id.
pub fn knn_retrieve(query: &str, ds: &Dataset, k: usize, metric: Metric) -> Result<Vec<(String, f64)>> {
    let qi = ds.position(query)?;
    let hits = knn_positions(qi, ds, k, metric)?;
    Ok(hits.into_iter().map(|(j, d)| (ds.samples()[j].sample_id.clone(), d)).collect())
}

pub(crate) fn knn_positions(qi: usize, ds: &Dataset, k: usize, metric: Metric) -> Result<Vec<(usize, f64)>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    let samples = ds.samples();
    let q = &samples[qi];
    let mut hits: Vec<(usize, f64)> = samples
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != qi)
        .filter_map(|(j, s)| match metric {
            Metric::Gan => Some((j, frobenius(q.latent.as_slice(), s.latent.as_slice()))),
            Metric::Facerec => Some((j, euclidean(&q.facerec, &s.facerec))),
            Metric::Combined { threshold } => (euclidean(&q.facerec, &s.facerec) <= threshold)
                .then(|| (j, frobenius(q.latent.as_slice(), s.latent.as_slice()))),
        })
        .collect();
    if hits.len() < k {
        return Err(Error::InsufficientCandidates { requested: k, available: hits.len() });
    }
    hits.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| samples[a.0].sample_id.cmp(&samples[b.0].sample_id)));
    hits.truncate(k);
    Ok(hits)
}
