//! Projects a target through a random linear forward model and shows how the
//! deviation penalty pulls the expanded code toward its restricted form.

use matchlab::latent::{deviation_penalty, project, LatentCode, LinearForwardModel, ProjectionConfig};
use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> matchlab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (levels, dims) = (4, 8);
    let target = Array1::from(LatentCode::random(1, 48, &mut rng)?.to_flat());
    let model = LinearForwardModel::random((levels, dims), 48, target, &mut rng)?;
    let init = LatentCode::zeros(levels, dims)?;

    println!("{:>8} {:>12} {:>12} {:>6}", "lambda", "objective", "penalty", "iters");
    for lambda in [0.0, 0.01, 0.1, 1.0, 10.0] {
        let cfg = ProjectionConfig { lambda, max_iters: 20_000, ..ProjectionConfig::default() };
        let out = project(&model, &init, &cfg)?;
        println!(
            "{lambda:>8} {:>12.5} {:>12.5} {:>6}",
            out.trace.last().unwrap(),
            deviation_penalty(&out.code),
            out.iterations
        );
    }
    Ok(())
}
