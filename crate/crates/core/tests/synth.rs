use matchlab::dataset::Dataset;
use matchlab::latent::restricted_projection;
use matchlab::matching::euclidean;
use matchlab::stats;
use matchlab::synth::{empirical_correlation, generate, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn same_seed_same_dataset() {
    let cfg = SynthConfig { n: 300, seed: 9, ..SynthConfig::default() };
    let (a, ta) = generate(&cfg).unwrap();
    let (b, tb) = generate(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta.attributes, tb.attributes);
    let (c, _) = generate(&SynthConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn identity_correlation_gives_uncorrelated_attributes() {
    let cfg = SynthConfig { n: 5000, n_attrs: 4, seed: 1, ..SynthConfig::default() };
    let (_, truth) = generate(&cfg).unwrap();
    let r = empirical_correlation(&truth.attributes.values().to_owned());
    for i in 0..4 {
        for j in 0..i {
            assert!(r[[i, j]].abs() < 0.05, "rho[{i}][{j}] = {}", r[[i, j]]);
        }
    }
}

#[test]
fn target_correlation_is_reached() {
    let cfg = SynthConfig {
        n: 5000,
        n_attrs: 2,
        attr_corr: Some(vec![vec![1.0, 0.8], vec![0.8, 1.0]]),
        seed: 2,
        ..SynthConfig::default()
    };
    let (_, truth) = generate(&cfg).unwrap();
    let r = empirical_correlation(&truth.attributes.values().to_owned())[[0, 1]];
    assert!((0.75..=0.85).contains(&r), "{r}");
}

fn gap_and_sem(ds: &Dataset, name: &str) -> (f64, f64) {
    let mut g: [Vec<f64>; 2] = [vec![], vec![]];
    for s in ds.samples() {
        g[s.attribute as usize].push(s.covariates[name]);
    }
    let gap = stats::mean(&g[1]) - stats::mean(&g[0]);
    let sem = (stats::sem(&g[0]).powi(2) + stats::sem(&g[1]).powi(2)).sqrt();
    (gap, sem)
}

#[test]
fn no_confounding_means_no_gap() {
    let cfg = SynthConfig { n: 3000, confounder_strength: 0.0, seed: 5, ..SynthConfig::default() };
    let (ds, _) = generate(&cfg).unwrap();
    for name in cfg.covariate_names() {
        let (gap, sem) = gap_and_sem(&ds, &name);
        assert!(gap.abs() < 3.0 * sem, "{name}: {gap} vs {sem}");
    }
    let confounded = SynthConfig { confounder_strength: 1.0, ..cfg.clone() };
    let (ds, _) = generate(&confounded).unwrap();
    for name in cfg.covariate_names() {
        let (gap, sem) = gap_and_sem(&ds, &name);
        assert!(gap > 3.0 * sem, "{name}: {gap} vs {sem}");
    }
}

#[test]
fn recognition_embeddings_cluster_by_identity() {
    let cfg = SynthConfig { n: 1000, seed: 6, ..SynthConfig::default() };
    let (ds, _) = generate(&cfg).unwrap();
    let samples = ds.samples();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trials = 5000;
    let mut good = 0;
    for _ in 0..trials {
        let anchor = &samples[rng.random_range(0..samples.len())];
        let partner = ds.identity_index()[&anchor.identity_id]
            .iter()
            .find(|id| **id != anchor.sample_id)
            .map(|id| ds.get(id).unwrap())
            .unwrap();
        let other = loop {
            let o = &samples[rng.random_range(0..samples.len())];
            if o.identity_id != anchor.identity_id {
                break o;
            }
        };
        if euclidean(&anchor.facerec, &partner.facerec) < euclidean(&anchor.facerec, &other.facerec) {
            good += 1;
        }
    }
    assert!(good as f64 >= 0.99 * trials as f64, "{good}/{trials}");
}

#[test]
fn true_propensity_recovers_noiseless_labels() {
    let cfg = SynthConfig { n: 800, noise_sd: 0.0, seed: 7, ..SynthConfig::default() };
    let (ds, truth) = generate(&cfg).unwrap();
    for s in ds.samples() {
        let z = restricted_projection(&s.latent);
        assert_eq!(truth.bayes_label(z.view()), s.attribute);
        assert_eq!(truth.propensity(z.view()), f64::from(s.attribute));
    }
}

#[test]
fn bayes_label_follows_the_propensity() {
    let cfg = SynthConfig { n: 2000, noise_sd: 0.5, seed: 8, ..SynthConfig::default() };
    let (ds, truth) = generate(&cfg).unwrap();
    let mut correct = 0;
    let mut expected = 0.0;
    for s in ds.samples() {
        let z = restricted_projection(&s.latent);
        let p = truth.propensity(z.view());
        assert_eq!(truth.bayes_label(z.view()) == 1, p > 0.5);
        correct += usize::from(truth.bayes_label(z.view()) == s.attribute);
        expected += p.max(1.0 - p);
    }
    // accuracy of the Bayes rule sits at its own expected value
    let n = ds.len() as f64;
    let acc = correct as f64 / n;
    assert!((acc - expected / n).abs() < 4.0 * (0.25 / n).sqrt(), "{acc} vs {}", expected / n);
}
