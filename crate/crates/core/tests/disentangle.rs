mod common;

use matchlab::disentangle::{
    disentangle_loss, disentangle_loss_grad, edit_direction, gram_schmidt, mapper_loss_grad, orthogonalized,
    train_mapper, AttributeMapper, AttributeMatrix, CorrelationPrior, MapperKind, Split, TrainConfig,
};
use matchlab::optim::{DescentConfig, Objective};
use matchlab::synth::{empirical_correlation, quadratic_task};
use matchlab::Result;
use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

/// The loss as a function of the flattened predictions.
struct OverPredictions<'a> {
    a: &'a AttributeMatrix,
    shape: (usize, usize),
    lambda: f64,
    prior: Option<&'a CorrelationPrior>,
    squared: bool,
}

impl Objective for OverPredictions<'_> {
    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let a_hat = Array2::from_shape_vec(self.shape, x.to_vec()).unwrap();
        let (parts, g) = disentangle_loss_grad(self.a, &a_hat, self.lambda, self.prior, self.squared)?;
        Ok((parts.total, g.iter().copied().collect()))
    }
}

/// The loss as a function of a mapper's parameters.
struct OverParams<'a> {
    mapper: &'a AttributeMapper,
    z: &'a Array2<f64>,
    a: &'a AttributeMatrix,
    lambda: f64,
}

impl Objective for OverParams<'_> {
    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let m = self.mapper.with_params(x.to_vec())?;
        mapper_loss_grad(&m, self.z.view(), self.a, self.lambda, None, false)
    }
}

fn smooth_region(a_hat: &Array2<f64>) -> bool {
    let r = empirical_correlation(a_hat);
    (0..r.nrows()).all(|i| (0..i).all(|j| r[[i, j]].abs() > 0.05))
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, k) = (25, 4);
    let a = AttributeMatrix::unnamed(gaussian(&mut rng, (n, k))).unwrap();
    let prior = CorrelationPrior::new().with(2, 0, 0.3).unwrap();
    let mut checked = 0;
    while checked < 100 {
        // a shared component keeps every pairwise correlation away from 0
        let shared = gaussian(&mut rng, (n, 1));
        let a_hat = gaussian(&mut rng, (n, k)) + &shared * 1.5;
        if !smooth_region(&a_hat) {
            continue;
        }
        let squared = checked % 2 == 1;
        let f =
            OverPredictions { a: &a, shape: (n, k), lambda: 0.7, prior: (checked % 3 == 0).then_some(&prior), squared };
        let x: Vec<f64> = a_hat.iter().copied().collect();
        let err = common::gradient_check(&f, &x, 1e-6, 1e-6);
        assert!(err < 1e-4, "point {checked}: {err}");
        checked += 1;
    }
}

#[test]
fn mapper_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z = gaussian(&mut rng, (30, 5));
    let a = AttributeMatrix::unnamed(gaussian(&mut rng, (30, 3))).unwrap();
    for (seed, kind) in [(0, MapperKind::Linear), (1, MapperKind::Mlp { hidden: 6 })] {
        let mapper = AttributeMapper::init(kind, 5, 3, seed).unwrap();
        for trial in 0..10 {
            let x: Vec<f64> = mapper.params().iter().map(|p| p + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
            let pred = mapper.with_params(x.clone()).unwrap().predict(z.view()).unwrap();
            if !smooth_region(&pred) {
                continue;
            }
            let f = OverParams { mapper: &mapper, z: &z, a: &a, lambda: 0.5 };
            let err = common::gradient_check(&f, &x, 1e-6, 1e-5);
            assert!(err < 1e-4, "{kind:?} trial {trial}: {err}");
        }
    }
}

#[test]
fn correlation_term_ignores_positive_affine_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = AttributeMatrix::unnamed(gaussian(&mut rng, (40, 3))).unwrap();
    let a_hat = gaussian(&mut rng, (40, 3));
    let base = disentangle_loss(&a, &a_hat, 1.0, None).unwrap().corr_term;
    for _ in 0..20 {
        let scale = Array1::from_shape_simple_fn(3, || rng.random_range(0.01..100.0));
        let shift = Array1::from_shape_simple_fn(3, || rng.random_range(-50.0..50.0));
        let moved = &a_hat * &scale + &shift;
        let c = disentangle_loss(&a, &moved, 1.0, None).unwrap().corr_term;
        assert!((c - base).abs() < 1e-10);
    }
}

#[test]
fn unpenalized_linear_mapper_is_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, nz, na) = (400, 5, 3);
    let z = gaussian(&mut rng, (n, nz));
    let w = gaussian(&mut rng, (na, nz));
    let a = z.dot(&w.t()) + 0.5 + gaussian(&mut rng, (n, na)) * 0.2;
    let attrs = AttributeMatrix::unnamed(a.clone()).unwrap();
    let cfg = TrainConfig {
        lambda: 0.0,
        split: Split::Fraction(0.7),
        descent: DescentConfig { max_iters: 20_000, grad_tolerance: 1e-12, ..DescentConfig::default() },
        seed: 5,
        ..TrainConfig::default()
    };
    let (mapper, _) = train_mapper(&z, &attrs, None, &cfg).unwrap();

    let (train, _) = cfg.split.indices(n, cfg.seed).unwrap();
    let zt = z.select(Axis(0), &train);
    let at = a.select(Axis(0), &train);
    let design = DMatrix::from_fn(train.len(), nz + 1, |i, j| if j < nz { zt[[i, j]] } else { 1.0 });
    let target = DMatrix::from_fn(train.len(), na, |i, j| at[[i, j]]);
    let coef = design.svd(true, true).solve(&target, 1e-14).unwrap();

    let (fw, fb) = mapper.linear_parts().unwrap();
    for k in 0..na {
        for j in 0..nz {
            assert!((fw[[k, j]] - coef[(j, k)]).abs() < 1e-4, "w[{k}][{j}]");
        }
        assert!((fb[k] - coef[(nz, k)]).abs() < 1e-4, "b[{k}]");
    }
}

#[test]
fn exact_linear_data_is_fit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z = gaussian(&mut rng, (300, 4));
    let a = z.dot(&gaussian(&mut rng, (2, 4)).t());
    let attrs = AttributeMatrix::unnamed(a).unwrap();
    let cfg = TrainConfig {
        lambda: 0.0,
        squared_mse: true,
        descent: DescentConfig { max_iters: 20_000, grad_tolerance: 1e-10, ..DescentConfig::default() },
        ..TrainConfig::default()
    };
    let (_, m) = train_mapper(&z, &attrs, None, &cfg).unwrap();
    assert!(m.test.mse < 1e-4, "{}", m.test.mse);
}

#[test]
fn gram_schmidt_gives_orthonormal_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..50 {
        let rows = rng.random_range(1..8);
        let cols = rows + rng.random_range(0..10);
        let w = gaussian(&mut rng, (rows, cols));
        let q = gram_schmidt(&w).unwrap();
        let gram = q.dot(&q.t());
        let err = (&gram - &Array2::<f64>::eye(rows)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-10, "trial {trial}: {err}");
    }
}

#[test]
fn orthogonalized_projections_decorrelate() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let first = gaussian(&mut rng, (1, 16));
    let mut w = Array2::zeros((3, 16));
    for k in 0..3 {
        let row = &first.row(0) + &(gaussian(&mut rng, (1, 16)).row(0).to_owned() * 0.5);
        w.row_mut(k).assign(&row);
    }
    let z = gaussian(&mut rng, (5000, 16));
    let raw = empirical_correlation(&z.dot(&w.t()));
    let q = gram_schmidt(&w).unwrap();
    let ortho = empirical_correlation(&z.dot(&q.t()));
    for i in 0..3 {
        for j in 0..i {
            assert!(raw[[i, j]].abs() > 0.5, "raw {}", raw[[i, j]]);
            assert!(ortho[[i, j]].abs() < 0.05, "orthogonalized {}", ortho[[i, j]]);
        }
    }
}

#[test]
fn edits_along_orthogonal_rows_leave_other_attributes_alone() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mapper =
        AttributeMapper::linear(gaussian(&mut rng, (4, 10)), Array1::from_vec(vec![0.1, -0.2, 0.3, 0.0])).unwrap();
    let mapper = orthogonalized(&mapper).unwrap();
    for _ in 0..20 {
        let z = gaussian(&mut rng, (1, 10));
        let before = mapper.predict(z.view()).unwrap();
        let j = rng.random_range(0..4);
        let delta = rng.random_range(-3.0..3.0);
        let edited = edit_direction(z.row(0), &mapper, j, delta).unwrap();
        let after = mapper.predict(edited.view().insert_axis(Axis(0))).unwrap();
        for k in 0..4 {
            let change = after[[0, k]] - before[[0, k]];
            let want = if k == j { delta } else { 0.0 };
            assert!((change - want).abs() < 1e-10, "attr {k}: {change}");
        }
    }
}

#[test]
fn mlp_beats_linear_on_quadratic_targets() {
    let (z, a) = quadratic_task(2000, 6, 2, 0.1, 10).unwrap();
    let descent = DescentConfig { max_iters: 3000, grad_tolerance: 1e-8, ..DescentConfig::default() };
    let base = TrainConfig { lambda: 0.0, squared_mse: true, descent, seed: 1, ..TrainConfig::default() };
    let (_, lin) = train_mapper(&z, &a, None, &base).unwrap();
    let mlp_cfg = TrainConfig { kind: MapperKind::Mlp { hidden: 32 }, ..base };
    let (_, mlp) = train_mapper(&z, &a, None, &mlp_cfg).unwrap();
    assert!(mlp.test.mse <= 0.8 * lin.test.mse, "mlp {} vs linear {}", mlp.test.mse, lin.test.mse);
}
