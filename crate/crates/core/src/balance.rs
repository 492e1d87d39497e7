//! Covariate balance diagnostics for matched subsets.
//!
//! Binary covariates are summarized as proportions with Wilson score
//! intervals; real covariates as means with a normal interval of
//! `1.96 * SEM`. Gaps are absolute differences of group means.

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CovariateKind, Dataset};
use crate::error::{Error, Result};
use crate::matching::{knn_positions, MatchSet, Metric};
use crate::stats;

pub const Z_95: f64 = 1.96;
/// Pre-matching gaps at or below this leave the reduction undefined.
pub const GAP_EPSILON: f64 = 1e-12;
pub const MAX_INTERSECTIONAL_COVARIATES: usize = 4;

/// Wilson score interval for `successes` out of `n`, clamped to `[0, 1]`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> Result<(f64, f64)> {
    if n == 0 || successes > n {
        return Err(Error::InvalidCount { successes, n });
    }
    if !(z > 0.0) {
        return Err(Error::InvalidConfig("z must be positive".into()));
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == n { 1.0 } else { (center + half).min(1.0) };
    Ok((lo, hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: usize,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

fn summarize(values: &[f64], kind: CovariateKind, group: u8) -> Result<GroupSummary> {
    if values.is_empty() {
        return Err(Error::EmptyGroup(group));
    }
    let n = values.len();
    let mean = stats::mean(values);
    let (lo, hi) = match kind {
        CovariateKind::Binary => {
            let k = values.iter().filter(|&&v| v == 1.0).count() as u64;
            wilson_interval(k, n as u64, Z_95)?
        }
        CovariateKind::Real => {
            let half = Z_95 * stats::sem(values);
            (mean - half, mean + half)
        }
    };
    Ok(GroupSummary { n, mean, lo, hi })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageBalance {
    pub group0: GroupSummary,
    pub group1: GroupSummary,
    /// `|mean_group1 - mean_group0|`
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateBalance {
    pub name: String,
    pub kind: CovariateKind,
    pub original: StageBalance,
    pub matched: StageBalance,
    /// `1 - gap_after / gap_before`; `None` when the original gap is ~0.
    pub gap_reduction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub covariates: Vec<CovariateBalance>,
}

/// One tidy row for plotting: covariate, group, stage, mean, lo, hi.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub covariate: String,
    pub group: u8,
    pub stage: String,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl BalanceReport {
    pub fn get(&self, name: &str) -> Option<&CovariateBalance> {
        self.covariates.iter().find(|c| c.name == name)
    }

    pub fn plot_rows(&self) -> Vec<PlotRow> {
        let mut rows = Vec::new();
        for c in &self.covariates {
            for (stage, s) in [("original", &c.original), ("matched", &c.matched)] {
                for (group, g) in [(0u8, &s.group0), (1, &s.group1)] {
                    rows.push(PlotRow {
                        covariate: c.name.clone(),
                        group,
                        stage: stage.to_string(),
                        mean: g.mean,
                        lo: g.lo,
                        hi: g.hi,
                    });
                }
            }
        }
        rows
    }
}

/// Per-group balance of one covariate over the listed samples.
pub fn stage_balance(ds: &Dataset, ids: &[String], covariate: &str) -> Result<StageBalance> {
    let spec = ds.covariate_spec(covariate)?;
    let mut values: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for id in ids {
        let s = ds.get(id)?;
        values[s.attribute as usize].push(s.covariate(covariate)?);
    }
    let group0 = summarize(&values[0], spec.kind, 0)?;
    let group1 = summarize(&values[1], spec.kind, 1)?;
    let gap = (group1.mean - group0.mean).abs();
    Ok(StageBalance { group0, group1, gap })
}

fn all_ids(ds: &Dataset) -> Vec<String> {
    ds.samples().iter().map(|s| s.sample_id.clone()).collect()
}

/// Balance of every covariate in the full dataset versus the members of `subset`.
pub fn balance_report(ds: &Dataset, subset: &MatchSet) -> Result<BalanceReport> {
    let mut matched_ids = subset.members(0);
    matched_ids.extend(subset.members(1));
    balance_report_ids(ds, &matched_ids)
}

/// [`balance_report`] for an explicit list of selected sample ids.
pub fn balance_report_ids(ds: &Dataset, selected: &[String]) -> Result<BalanceReport> {
    let everyone = all_ids(ds);
    let covariates = ds
        .covariate_specs()
        .par_iter()
        .map(|spec| {
            let original = stage_balance(ds, &everyone, &spec.name)?;
            let matched = stage_balance(ds, selected, &spec.name)?;
            let gap_reduction = (original.gap > GAP_EPSILON).then(|| 1.0 - matched.gap / original.gap);
            Ok(CovariateBalance { name: spec.name.clone(), kind: spec.kind, original, matched, gap_reduction })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BalanceReport { covariates })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionalCell {
    /// Covariate values defining the cell, aligned with the report's covariates.
    pub values: Vec<u8>,
    pub count0: usize,
    pub count1: usize,
    pub proportion0: f64,
    pub proportion1: f64,
    pub ci0: (f64, f64),
    pub ci1: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionalReport {
    pub covariates: Vec<String>,
    pub n0: usize,
    pub n1: usize,
    /// Keyed like `young=1&black=0`, in binary-counting order of the values.
    pub cells: IndexMap<String, IntersectionalCell>,
}

/// Joint distribution of up to four binary covariates within each attribute
/// group. `ids = None` uses the whole dataset.
pub fn intersectional_report(
    ds: &Dataset,
    ids: Option<&[String]>,
    covariates: &[&str],
) -> Result<IntersectionalReport> {
    if covariates.is_empty() || covariates.len() > MAX_INTERSECTIONAL_COVARIATES {
        return Err(Error::InvalidConfig(format!(
            "intersectional reports take 1 to {MAX_INTERSECTIONAL_COVARIATES} covariates"
        )));
    }
    for name in covariates {
        if ds.covariate_spec(name)?.kind != CovariateKind::Binary {
            return Err(Error::NonBinaryCovariate(name.to_string()));
        }
    }
    let everyone;
    let ids = match ids {
        Some(ids) => ids,
        None => {
            everyone = all_ids(ds);
            &everyone
        }
    };
    let n_cells = 1usize << covariates.len();
    let mut counts = vec![[0usize; 2]; n_cells];
    let mut totals = [0usize; 2];
    for id in ids {
        let s = ds.get(id)?;
        let mut cell = 0;
        for (bit, name) in covariates.iter().enumerate() {
            if s.covariate(name)? == 1.0 {
                cell |= 1 << (covariates.len() - 1 - bit);
            }
        }
        counts[cell][s.attribute as usize] += 1;
        totals[s.attribute as usize] += 1;
    }
    for (g, &t) in totals.iter().enumerate() {
        if t == 0 {
            return Err(Error::EmptyGroup(g as u8));
        }
    }
    let mut cells = IndexMap::with_capacity(n_cells);
    for (cell, c) in counts.iter().enumerate() {
        let values: Vec<u8> =
            (0..covariates.len()).map(|bit| ((cell >> (covariates.len() - 1 - bit)) & 1) as u8).collect();
        let key = covariates.iter().zip(&values).map(|(n, v)| format!("{n}={v}")).collect::<Vec<_>>().join("&");
        cells.insert(
            key,
            IntersectionalCell {
                count0: c[0],
                count1: c[1],
                proportion0: c[0] as f64 / totals[0] as f64,
                proportion1: c[1] as f64 / totals[1] as f64,
                ci0: wilson_interval(c[0] as u64, totals[0] as u64, Z_95)?,
                ci1: wilson_interval(c[1] as u64, totals[1] as u64, Z_95)?,
                values,
            },
        );
    }
    Ok(IntersectionalReport {
        covariates: covariates.iter().map(|s| s.to_string()).collect(),
        n0: totals[0],
        n1: totals[1],
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeError {
    pub kind: CovariateKind,
    /// Mean absolute error for real covariates, percentage disagreeing for binary.
    pub mean: f64,
    pub sem: f64,
}

/// How well nearest neighbors under `metric` preserve each covariate.
///
/// For every sample the `k` nearest other samples are retrieved; the
/// per-sample error is the mean absolute difference (real) or the percentage
/// of neighbors with a different value (binary). Errors are averaged over
/// samples with their standard error.
pub fn knn_attribute_errors(
    ds: &Dataset,
    metric: Metric,
    k: usize,
    attributes: &[&str],
) -> Result<IndexMap<String, AttributeError>> {
    let kinds = attributes.iter().map(|a| ds.covariate_spec(a).map(|s| s.kind)).collect::<Result<Vec<_>>>()?;
    let samples = ds.samples();
    let per_sample: Vec<Vec<f64>> = (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let neighbors = knn_positions(i, ds, k, metric)?;
            attributes
                .iter()
                .zip(&kinds)
                .map(|(name, kind)| {
                    let own = samples[i].covariate(name)?;
                    let mut acc = 0.0;
                    for &(j, _) in &neighbors {
                        let other = samples[j].covariate(name)?;
                        acc += match kind {
                            CovariateKind::Real => (own - other).abs(),
                            CovariateKind::Binary => 100.0 * f64::from(u8::from(own != other)),
                        };
                    }
                    Ok(acc / neighbors.len() as f64)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = IndexMap::new();
    for (a, (name, kind)) in attributes.iter().zip(&kinds).enumerate() {
        let errs: Vec<f64> = per_sample.iter().map(|v| v[a]).collect();
        out.insert(name.to_string(), AttributeError { kind: *kind, mean: stats::mean(&errs), sem: stats::sem(&errs) });
    }
    Ok(out)
}
