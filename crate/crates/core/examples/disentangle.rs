//! Sweeps the correlation penalty for a linear attribute mapper on correlated
//! synthetic attributes: held-out prediction correlations fall as the penalty
//! grows, at some cost in error.

use matchlab::disentangle::{lambda_sweep, TrainConfig};
use matchlab::synth::{generate, SynthConfig};

fn main() -> matchlab::Result<()> {
    let k = 4;
    let corr = (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.6 }).collect()).collect();
    let cfg = SynthConfig {
        n: 3000,
        levels: 1,
        dims: 32,
        n_attrs: k,
        attr_corr: Some(corr),
        seed: 2,
        ..SynthConfig::default()
    };
    let (ds, truth) = generate(&cfg)?;
    let runs = lambda_sweep(
        &ds.restricted_matrix(),
        &truth.attributes,
        None,
        &TrainConfig::default(),
        &[0.0, 0.1, 1.0, 10.0],
    )?;
    println!("{:>7} {:>10} {:>14}", "lambda", "test mse", "mean |rho|");
    for r in runs {
        println!("{:>7} {:>10.4} {:>14.4}", r.lambda, r.test.mse, r.test.mean_abs_corr);
    }
    Ok(())
}
