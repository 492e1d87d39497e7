//! Plants a known same-identity distance gap in a recognition embedding and
//! reads it back from the matched sample, next to the built-in embeddings.
//! The `original` row pairs every sample with a random same-identity
//! reference instead of using the matches.

use matchlab::benchmark::{bias_report, unmatched_report, DistanceKind, EmbeddingTable};
use matchlab::matching::{greedy_match, MatchConstraints};
use matchlab::synth::{generate, offset_embeddings, SynthConfig};

fn main() -> matchlab::Result<()> {
    let (ds, _) = generate(&SynthConfig { n: 2000, seed: 9, ..SynthConfig::default() })?;
    let ms = greedy_match(&ds, &MatchConstraints { require_references: true, ..Default::default() }, None)?;
    let tables = [EmbeddingTable::from_dataset("facerec", &ds)?, offset_embeddings(&ds, &ms, 64, 0.5, 0.1, 0.05, 1)?];
    let matched = bias_report(&ms, &ds, &tables, DistanceKind::Euclidean)?;
    let original = unmatched_report(&ds, &tables[..1], DistanceKind::Euclidean, 0)?;
    let rows = matched.models.iter().map(|(n, m)| (n.as_str(), "matched", m));
    let rows = rows.chain(original.models.iter().map(|(n, m)| (n.as_str(), "original", m)));
    for (name, condition, m) in rows {
        println!(
            "{name:<8} {condition:<9} group0 {:.4} ± {:.4}  group1 {:.4} ± {:.4}  difference {:+.4}",
            m.mean_dist_group0, m.sem_group0, m.mean_dist_group1, m.sem_group1, m.difference
        );
    }
    Ok(())
}
