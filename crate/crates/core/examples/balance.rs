//! Covariate balance before and after greedy matching, plus a joint table
//! over two binary covariates.

use matchlab::balance::{balance_report, intersectional_report};
use matchlab::matching::{greedy_match, MatchConstraints};
use matchlab::synth::{generate, SynthConfig};

fn main() -> matchlab::Result<()> {
    let (ds, _) =
        generate(&SynthConfig { n: 2000, levels: 2, dims: 8, n_attrs: 1, seed: 3, ..SynthConfig::default() })?;
    let ms = greedy_match(&ds, &MatchConstraints::default(), Some(200))?;
    let report = balance_report(&ds, &ms)?;

    println!("{:<8} {:>16} {:>16} {:>10}", "", "original", "matched", "reduction");
    for c in &report.covariates {
        let fmt = |s: &matchlab::balance::StageBalance| format!("{:.3} / {:.3}", s.group0.mean, s.group1.mean);
        let red = c.gap_reduction.map_or("n/a".to_string(), |r| format!("{:.0}%", 100.0 * r));
        println!("{:<8} {:>16} {:>16} {:>10}", c.name, fmt(&c.original), fmt(&c.matched), red);
    }

    let ids: Vec<String> = ms.members(0).into_iter().chain(ms.members(1)).collect();
    let joint = intersectional_report(&ds, Some(&ids), &["bin0", "bin1"])?;
    println!("\nmatched sample, joint proportions:");
    for (cell, v) in &joint.cells {
        println!("  {cell:<16} group0 {:.3}  group1 {:.3}", v.proportion0, v.proportion1);
    }
    Ok(())
}
