//! The whole workflow through files: generate a population, write it as a
//! manifest, load it back, match, and save JSON reports to a directory
//! (first argument, default `./matchlab-demo`).

use std::collections::BTreeMap;
use std::path::PathBuf;

use matchlab::balance::balance_report;
use matchlab::benchmark::{bias_report, DistanceKind, EmbeddingTable};
use matchlab::dataset::{load_dataset, save_dataset};
use matchlab::matching::{greedy_match, MatchConstraints};
use matchlab::report::{dataset_hash, write_json, Envelope};
use matchlab::synth::{generate, SynthConfig};

fn main() -> matchlab::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "matchlab-demo".into()));
    let cfg = SynthConfig { n: 500, seed: 5, ..SynthConfig::default() };
    let (ds, _) = generate(&cfg)?;
    let manifest = save_dataset(&ds, &out.join("data"))?;
    let ds = load_dataset(&manifest)?;

    let inputs = BTreeMap::from([("dataset".to_string(), dataset_hash(&ds))]);
    let c = MatchConstraints { require_references: true, ..Default::default() };
    let ms = greedy_match(&ds, &c, None)?;
    let balance = balance_report(&ds, &ms)?;
    let bias = bias_report(&ms, &ds, &[EmbeddingTable::from_dataset("facerec", &ds)?], DistanceKind::Euclidean)?;

    write_json(&out.join("match.json"), &Envelope::new("match", &c, inputs.clone(), &ms))?;
    write_json(&out.join("balance.json"), &Envelope::new("balance", &c, inputs.clone(), &balance))?;
    write_json(&out.join("bias.json"), &Envelope::new("benchmark", &c, inputs, &bias))?;
    println!("{} samples, {} pairs; reports in {}", ds.len(), ms.len(), out.display());
    Ok(())
}
