mod common;

use std::collections::HashSet;

use indexmap::IndexMap;
use matchlab::dataset::Dataset;
use matchlab::propensity::{
    caliper_match, cross_validate, fit_logistic, CaliperConfig, LogisticConfig, LogisticObjective,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn logistic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Array2::from_shape_simple_fn((30, 4), || rng.sample::<f64, _>(StandardNormal));
    let y: Vec<u8> = (0..30).map(|i| (i % 3 == 0) as u8).collect();
    let obj = LogisticObjective::new(&x, &y, 0.3).unwrap();
    for _ in 0..100 {
        let p: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        assert!(common::gradient_check(&obj, &p, 1e-5, 1e-6) < 1e-4);
    }
}

#[test]
fn noise_labels_score_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Array2::from_shape_simple_fn((400, 3), || rng.sample::<f64, _>(StandardNormal));
    let mut y: Vec<u8> = (0..400).map(|i| (i % 2) as u8).collect();
    y.shuffle(&mut rng);
    let acc = cross_validate(&x, &y, 5, &LogisticConfig::default(), 1).unwrap();
    assert!((0.35..=0.65).contains(&acc), "{acc}");
}

#[test]
fn separable_data_cross_validates() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Array2::from_shape_simple_fn((300, 5), || rng.sample::<f64, _>(StandardNormal));
    let y: Vec<u8> = x.rows().into_iter().map(|r| u8::from(r[0] - 0.5 * r[3] > 0.0)).collect();
    let acc = cross_validate(&x, &y, 5, &LogisticConfig::default(), 1).unwrap();
    assert!(acc >= 0.95, "{acc}");
    let m = fit_logistic(&x, &y, &LogisticConfig::default()).unwrap();
    let correct = (0..300).filter(|&i| (m.score(x.row(i)) > 0.5) == (y[i] == 1)).count();
    assert!(correct >= 295);
}

/// Direct transcription of the sequential rule.
fn caliper_oracle(scores: &IndexMap<String, f64>, ds: &Dataset, caliper: f64, seed: u64) -> Vec<(String, String, f64)> {
    let mut g: [Vec<&str>; 2] = [vec![], vec![]];
    for s in ds.samples() {
        g[s.attribute as usize].push(&s.sample_id);
    }
    g[0].sort();
    g[1].sort();
    let small = if g[1].len() < g[0].len() { 1 } else { 0 };
    let mut queries = g[small].clone();
    queries.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut used_ids: HashSet<String> = HashSet::new();
    let mut taken: HashSet<&str> = HashSet::new();
    let mut out = vec![];
    for q in queries {
        let qi = ds.get(q).unwrap().identity_id.clone();
        if used_ids.contains(&qi) {
            continue;
        }
        let mut cands: Vec<(f64, &str)> = g[1 - small]
            .iter()
            .filter(|c| !taken.contains(**c))
            .filter(|c| {
                let ci = &ds.get(c).unwrap().identity_id;
                *ci != qi && !used_ids.contains(ci)
            })
            .map(|c| ((scores[*c] - scores[q]).abs(), *c))
            .collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        let Some(&(gap, c)) = cands.first() else { continue };
        if gap > caliper {
            continue;
        }
        taken.insert(c);
        used_ids.insert(qi);
        used_ids.insert(ds.get(c).unwrap().identity_id.clone());
        let (a, b) = if small == 0 { (q, c) } else { (c, q) };
        out.push((a.to_string(), b.to_string(), gap));
    }
    out
}

fn random_scores(ds: &Dataset, seed: u64, coarse: bool) -> IndexMap<String, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ds.samples()
        .iter()
        .map(|s| {
            let v = if coarse { rng.random_range(0..10) as f64 / 10.0 } else { rng.random_range(0.0..1.0) };
            (s.sample_id.clone(), v)
        })
        .collect()
}

fn run(scores: &IndexMap<String, f64>, ds: &Dataset, caliper: f64, seed: u64) -> Vec<(String, String, f64)> {
    let cfg = CaliperConfig { caliper, seed, ..CaliperConfig::default() };
    caliper_match(scores, ds, &cfg).unwrap().pairs.into_iter().map(|p| (p.id_a, p.id_b, p.distance)).collect()
}

#[test]
fn ten_sample_fixture_matches_simulation() {
    let ds = common::random_dataset(77, 10);
    let scores = random_scores(&ds, 1, false);
    for seed in 0..5 {
        assert_eq!(run(&scores, &ds, 0.2, seed), caliper_oracle(&scores, &ds, 0.2, seed));
    }
}

#[test]
fn caliper_agrees_with_simulation() {
    for seed in 0..200 {
        let ds = common::random_dataset(seed, 40);
        let scores = random_scores(&ds, seed, seed % 2 == 0);
        for caliper in [0.05, 0.1, 0.3] {
            assert_eq!(run(&scores, &ds, caliper, seed), caliper_oracle(&scores, &ds, caliper, seed));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pairs_respect_caliper_and_are_valid(seed in 0u64..100_000, caliper in 0.001f64..0.5) {
        let ds = common::random_dataset(seed, 40);
        let scores = random_scores(&ds, seed, false);
        let cfg = CaliperConfig { caliper, seed, ..CaliperConfig::default() };
        let ms = caliper_match(&scores, &ds, &cfg).unwrap();
        ms.validate(&ds).unwrap();
        for p in &ms.pairs {
            prop_assert!((scores[&p.id_a] - scores[&p.id_b]).abs() <= caliper);
        }
        prop_assert_eq!(&ms, &caliper_match(&scores, &ds, &cfg).unwrap());
    }

    // Widening can cost pairs (see below) but never more than half.
    #[test]
    fn wider_caliper_keeps_half(seed in 0u64..100_000) {
        let ds = common::random_dataset(seed, 40);
        let scores = random_scores(&ds, seed, false);
        let counts: Vec<usize> = [0.01, 0.05, 0.1, 0.2].iter().map(|&c| run(&scores, &ds, c, seed).len()).collect();
        for i in 0..counts.len() {
            for j in i + 1..counts.len() {
                prop_assert!(2 * counts[j] >= counts[i], "{:?}", counts);
            }
        }
    }
}

// q_a accepted under the wide caliper takes x and retires identity P, so q_b
// and q_c both go unmatched. Under the narrow caliper q_a is rejected and the
// other two match.
#[test]
fn wider_caliper_can_cost_pairs() {
    let ds = Dataset::new(
        vec![
            common::sample("q_a", "P", 1, vec![0.0], vec![]),
            common::sample("q_b", "Q", 1, vec![0.0], vec![]),
            common::sample("q_c", "P", 1, vec![0.0], vec![]),
            common::sample("x", "X", 0, vec![0.0], vec![]),
            common::sample("z", "Z", 0, vec![0.0], vec![]),
            common::sample("w", "W", 0, vec![0.0], vec![]),
            common::sample("v", "V", 0, vec![0.0], vec![]),
        ],
        vec![],
    )
    .unwrap();
    let scores: IndexMap<String, f64> =
        [("q_a", 0.5), ("q_b", 0.7), ("q_c", 0.9), ("x", 0.62), ("z", 0.9), ("w", 0.0), ("v", 0.05)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
    // the narrow caliper gives two pairs whatever the query order
    for seed in 0..20 {
        assert_eq!(run(&scores, &ds, 0.1, seed).len(), 2);
    }
    // a seed that puts q_a first
    let seed = (0..100)
        .find(|&s| {
            let mut q = ["q_a", "q_b", "q_c"];
            q.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
            q[0] == "q_a"
        })
        .unwrap();
    let wide = run(&scores, &ds, 0.15, seed);
    assert_eq!(wide, caliper_oracle(&scores, &ds, 0.15, seed));
    assert_eq!(wide.len(), 1);
    assert_eq!((wide[0].0.as_str(), wide[0].1.as_str()), ("x", "q_a"));
}
