#![allow(dead_code)]

use std::collections::HashSet;

use indexmap::IndexMap;
use matchlab::dataset::{CovariateSpec, Dataset, Sample};
use matchlab::latent::LatentCode;
use matchlab::matching::{euclidean, reference_candidates, MatchConstraints};
use matchlab::optim::Objective;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sample(id: &str, identity: &str, attribute: u8, latent: Vec<f64>, facerec: Vec<f64>) -> Sample {
    Sample {
        sample_id: id.into(),
        identity_id: identity.into(),
        latent: LatentCode::from_rows(&[latent]).unwrap(),
        facerec,
        attribute,
        covariates: IndexMap::new(),
        default_attrs_ok: true,
    }
}

/// Random small dataset. Latents sit on an integer grid so distance ties are
/// common; identities are shared by a few samples; some samples fail the
/// default-attributes flag.
pub fn random_dataset(seed: u64, max_n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_n);
    let n_ids = rng.random_range(1..=n.div_ceil(2).max(1));
    let samples = (0..n)
        .map(|i| {
            let latent = (0..2).map(|_| rng.random_range(0..4) as f64).collect();
            let facerec = (0..2).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut s = sample(
                &format!("s{i:03}"),
                &format!("p{}", rng.random_range(0..n_ids)),
                rng.random_range(0..2),
                latent,
                facerec,
            );
            s.default_attrs_ok = rng.random_bool(0.8);
            s.covariates.insert("c".into(), f64::from(u8::from(rng.random_bool(0.5))));
            s
        })
        .collect();
    Dataset::new(samples, vec![CovariateSpec::binary("c")]).unwrap()
}

/// Reference simulation of greedy matching: at every step collect all
/// feasible cross-group pairs among the remaining samples, sort them, take
/// the first and drop both identities.
pub fn brute_force_greedy(ds: &Dataset, c: &MatchConstraints, limit: Option<usize>) -> Vec<(String, String, f64)> {
    let mut alive: HashSet<String> = ds.samples().iter().map(|s| s.identity_id.clone()).collect();
    let mut out = Vec::new();
    loop {
        if limit.is_some_and(|l| out.len() >= l) {
            break;
        }
        let mut feasible = Vec::new();
        for a in ds.samples().iter().filter(|s| s.attribute == 0 && alive.contains(&s.identity_id)) {
            for b in ds.samples().iter().filter(|s| s.attribute == 1 && alive.contains(&s.identity_id)) {
                if a.identity_id == b.identity_id {
                    continue;
                }
                if let Some(t) = c.facerec_threshold {
                    if euclidean(&a.facerec, &b.facerec) > t {
                        continue;
                    }
                }
                if c.require_references
                    && (reference_candidates(a, ds, c).is_empty() || reference_candidates(b, ds, c).is_empty())
                {
                    continue;
                }
                let d = euclidean(a.latent.as_slice(), b.latent.as_slice());
                feasible.push((d, a.sample_id.clone(), b.sample_id.clone()));
            }
        }
        feasible.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let Some((d, a, b)) = feasible.into_iter().next() else { break };
        alive.remove(&ds.get(&a).unwrap().identity_id);
        alive.remove(&ds.get(&b).unwrap().identity_id);
        out.push((a, b, d));
    }
    out
}

/// Largest relative error between the analytic gradient and central finite
/// differences, with the denominator floored at `floor`.
pub fn gradient_check(f: &dyn Objective, x: &[f64], h: f64, floor: f64) -> f64 {
    let (_, grad) = f.value_and_grad(x).unwrap();
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        xp[k] = x[k] + h;
        let up = f.value(&xp).unwrap();
        xp[k] = x[k] - h;
        let down = f.value(&xp).unwrap();
        xp[k] = x[k];
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - grad[k]).abs() / grad[k].abs().max(fd.abs()).max(floor);
        worst = worst.max(rel);
    }
    worst
}

pub fn matchlab() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_matchlab"))
}

/// Runs `matchlab` in `dir` and returns (exit code, stderr).
pub fn run_in(dir: &std::path::Path, args: &[&str]) -> (i32, String) {
    let out = matchlab().current_dir(dir).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

/// Report files written by [`run_pipeline`], with the command that wrote each.
pub const PIPELINE_REPORTS: [(&str, &str); 7] = [
    ("data/synth.json", "synth"),
    ("match.json", "match"),
    ("propensity.json", "propensity"),
    ("balance.json", "balance"),
    ("balance_caliper.json", "balance"),
    ("bias.json", "benchmark"),
    ("disentangle.json", "disentangle"),
];

/// synth, match, propensity, balance, benchmark and disentangle in `dir`,
/// all with relative paths. Returns each report with its timestamp removed,
/// plus the plot-data and metrics CSVs verbatim.
pub fn run_pipeline(
    dir: &std::path::Path,
    n: usize,
    seed: u64,
    threads: usize,
) -> std::collections::BTreeMap<String, String> {
    std::fs::write(dir.join("synth.json"), format!("{{\"n\": {n}, \"dims\": 12, \"levels\": 2}}")).unwrap();
    let seed = seed.to_string();
    let threads = threads.to_string();
    let steps: [&[&str]; 7] = [
        &["synth", "--config", "synth.json", "--out-dir", "data"],
        &["match", "--manifest", "data/manifest.csv", "--require-references", "--out", "match.json"],
        &["propensity", "--manifest", "data/manifest.csv", "--out", "propensity.json", "--scores-out", "scores.csv"],
        &[
            "balance",
            "--manifest",
            "data/manifest.csv",
            "--matches",
            "match.json",
            "--out",
            "balance.json",
            "--plot-data",
            "balance.csv",
            "--intersectional",
            "bin0,bin1",
            "--knn-attrs",
            "bin0,real0",
        ],
        &[
            "balance",
            "--manifest",
            "data/manifest.csv",
            "--matches",
            "propensity.json",
            "--out",
            "balance_caliper.json",
        ],
        &["benchmark", "--manifest", "data/manifest.csv", "--matches", "match.json", "--out", "bias.json"],
        &[
            "disentangle",
            "--latents",
            "data/latents.csv",
            "--attrs",
            "data/attributes.csv",
            "--sweep",
            "0,0.1",
            "--max-iters",
            "200",
            "--out",
            "metrics.csv",
            "--report",
            "disentangle.json",
        ],
    ];
    for step in steps {
        let mut args: Vec<&str> = vec!["--seed", &seed, "--threads", &threads];
        args.extend_from_slice(step);
        let (code, err) = run_in(dir, &args);
        assert_eq!(code, 0, "{args:?}: {err}");
    }
    let mut out = std::collections::BTreeMap::new();
    for (file, _) in PIPELINE_REPORTS {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join(file)).unwrap()).unwrap();
        out.insert(file.to_string(), serde_json::to_string(&matchlab::report::canonical(v)).unwrap());
    }
    for file in ["balance.csv", "metrics.csv", "scores.csv", "data/manifest.csv"] {
        out.insert(file.to_string(), std::fs::read_to_string(dir.join(file)).unwrap());
    }
    out
}
