//! Greedy latent-distance matching on a synthetic population, with and
//! without reference-image and recognition-distance constraints.

use matchlab::matching::{greedy_match, MatchConstraints};
use matchlab::synth::{generate, SynthConfig};

fn main() -> matchlab::Result<()> {
    let (ds, _) = generate(&SynthConfig { n: 600, seed: 1, ..SynthConfig::default() })?;
    let settings = [
        ("unconstrained", MatchConstraints::default()),
        ("with references", MatchConstraints { require_references: true, ..MatchConstraints::default() }),
        (
            "references + facerec <= 1.2",
            MatchConstraints { require_references: true, facerec_threshold: Some(1.2), ..MatchConstraints::default() },
        ),
    ];
    for (label, c) in settings {
        let ms = greedy_match(&ds, &c, None)?;
        let mean = ms.pairs.iter().map(|p| p.distance).sum::<f64>() / ms.len().max(1) as f64;
        println!("{label:<30} {:>4} pairs, mean latent distance {mean:.3}", ms.len());
    }

    let ms = greedy_match(&ds, &MatchConstraints { require_references: true, ..Default::default() }, Some(5))?;
    println!("\nclosest five:");
    for p in &ms.pairs {
        println!(
            "  {} ~ {}  d={:.3}  refs {} / {}",
            p.id_a,
            p.id_b,
            p.distance,
            p.ref_a.as_deref().unwrap_or("-"),
            p.ref_b.as_deref().unwrap_or("-")
        );
    }
    Ok(())
}
