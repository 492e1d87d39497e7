use matchlab::benchmark::{bias_gap, bias_report, same_identity_distances, DistanceKind};
use matchlab::matching::{greedy_match, MatchConstraints, MatchSet};
use matchlab::synth::{generate, offset_embeddings, SynthConfig};
use proptest::prelude::*;

fn matched(seed: u64) -> (matchlab::dataset::Dataset, MatchSet) {
    let (ds, _) = generate(&SynthConfig { n: 1200, seed, ..SynthConfig::default() }).unwrap();
    let c = MatchConstraints { require_references: true, ..MatchConstraints::default() };
    let ms = greedy_match(&ds, &c, None).unwrap();
    (ds, ms)
}

#[test]
fn planted_offset_is_recovered() {
    let (ds, ms) = matched(1);
    assert!(ms.len() > 100);
    for delta in [0.0, 0.05, -0.05, 0.2] {
        let table = offset_embeddings(&ds, &ms, 32, 0.5, 0.1, delta, 2).unwrap();
        let r = bias_report(&ms, &ds, &[table], DistanceKind::Euclidean).unwrap();
        let m = &r.models["planted"];
        let tol = 2.0 * (m.sem_group0 + m.sem_group1);
        assert!((m.difference - delta).abs() <= tol, "delta {delta}: {} ± {tol}", m.difference);
    }
}

#[test]
fn report_ignores_pair_order() {
    let (ds, ms) = matched(3);
    let table = offset_embeddings(&ds, &ms, 16, 0.5, 0.1, 0.05, 4).unwrap();
    let forward = bias_report(&ms, &ds, std::slice::from_ref(&table), DistanceKind::Euclidean).unwrap();
    let mut reversed = ms.clone();
    reversed.pairs.reverse();
    let backward = bias_report(&reversed, &ds, &[table], DistanceKind::Euclidean).unwrap();
    assert_eq!(forward, backward);
}

#[test]
fn pairs_without_references_are_rejected() {
    let (ds, _) = generate(&SynthConfig { n: 100, seed: 5, ..SynthConfig::default() }).unwrap();
    let ms = greedy_match(&ds, &MatchConstraints::default(), Some(3)).unwrap();
    let table = matchlab::benchmark::EmbeddingTable::from_dataset("facerec", &ds).unwrap();
    assert!(matches!(
        same_identity_distances(&ms, &ds, &table, DistanceKind::Euclidean),
        Err(matchlab::Error::MissingReference(..))
    ));
}

proptest! {
    #[test]
    fn swapping_groups_negates_the_gap(
        d0 in prop::collection::vec(0.0f64..10.0, 1..40),
        d1 in prop::collection::vec(0.0f64..10.0, 1..40),
    ) {
        let g = bias_gap(&d0, &d1).unwrap();
        let h = bias_gap(&d1, &d0).unwrap();
        prop_assert_eq!(g.difference, -h.difference);
        prop_assert_eq!((g.sem0, g.sem1), (h.sem1, h.sem0));
    }

    #[test]
    fn gap_ignores_list_order(mut d0 in prop::collection::vec(0.0f64..10.0, 1..40), d1 in prop::collection::vec(0.0f64..10.0, 1..40)) {
        let g = bias_gap(&d0, &d1).unwrap();
        d0.reverse();
        prop_assert_eq!(g, bias_gap(&d0, &d1).unwrap());
    }
}
