//! Logistic propensity model on restricted latents, cross-validated, then
//! caliper matching at several widths.

use matchlab::propensity::{
    caliper_match, cross_validate, fit_logistic, group_mean_scores, propensity_scores, CaliperConfig, LogisticConfig,
};
use matchlab::synth::{generate, SynthConfig};

fn main() -> matchlab::Result<()> {
    let (ds, _) =
        generate(&SynthConfig { n: 2000, levels: 2, dims: 8, n_attrs: 1, seed: 4, ..SynthConfig::default() })?;
    let x = ds.restricted_matrix();
    let y = ds.attributes();
    let cfg = LogisticConfig::default();
    let model = fit_logistic(&x, &y, &cfg)?;
    println!("5-fold accuracy: {:.3}", cross_validate(&x, &y, 5, &cfg, 0)?);

    let scores = propensity_scores(&model, &ds)?;
    let everyone: Vec<String> = ds.samples().iter().map(|s| s.sample_id.clone()).collect();
    let (o0, o1) = group_mean_scores(&scores, &ds, &everyone)?;
    println!("mean score before matching: {o0:.3} vs {o1:.3}");

    for caliper in [0.01, 0.05, 0.1, 0.2] {
        let ms = caliper_match(&scores, &ds, &CaliperConfig { caliper, ..CaliperConfig::default() })?;
        let ids: Vec<String> = ms.members(0).into_iter().chain(ms.members(1)).collect();
        let (m0, m1) = group_mean_scores(&scores, &ds, &ids)?;
        println!("caliper {caliper:<5} {:>4} pairs, mean score {m0:.3} vs {m1:.3}", ms.len());
    }
    Ok(())
}
