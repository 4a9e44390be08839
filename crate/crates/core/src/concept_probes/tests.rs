use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data_synth::{generate, DatasetKind, DatasetSpec};
use crate::model_zoo::{ModelKind, WidthConfig};
use crate::robustness_metrics::{invariance_score, EstimatorMode};
use crate::symmetry::SymmetryGroup;

fn clusters(n: usize, seed: u64, gap: f64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let pos = i % 2 == 0;
            let c = if pos { gap } else { -gap };
            (vec![c + rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.3 * c], pos)
        })
        .unzip()
}

/// Two concentric circles of radius 1 and 0.5 with evenly spaced angles and
/// small noise, inner circle positive.
fn circles(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = n / 2;
    (0..2 * per)
        .map(|i| {
            let inner = i % 2 == 0;
            let r = if inner { 0.5 } else { 1.0 };
            let t = std::f64::consts::TAU * (i / 2) as f64 / per as f64;
            let noise = |rng: &mut ChaCha8Rng| rng.random_range(-0.08..0.08);
            (vec![r * t.cos() + noise(&mut rng), r * t.sin() + noise(&mut rng)], inner)
        })
        .unzip()
}

/// Leave-one-out nearest-neighbour accuracy.
fn one_nn_accuracy(xs: &[Vec<f64>], ys: &[bool]) -> f64 {
    let hits = (0..xs.len())
        .filter(|&i| {
            let nn = (0..xs.len())
                .filter(|&j| j != i)
                .min_by(|&a, &b| {
                    let d = |j: usize| xs[i].iter().zip(&xs[j]).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
                    d(a).total_cmp(&d(b))
                })
                .unwrap();
            ys[nn] == ys[i]
        })
        .count();
    hits as f64 / xs.len() as f64
}

fn accuracy(c: &ConceptClassifier, xs: &[Vec<f64>], ys: &[bool]) -> f64 {
    xs.iter().zip(ys).filter(|(x, &y)| c.predict(x).unwrap() == y).count() as f64 / ys.len() as f64
}

#[test]
fn cav_separates_clusters() {
    let (xs, ys) = clusters(200, 1, 1.5);
    let c = fit_cav(&xs, &ys, CavConfig::default()).unwrap();
    assert_eq!(c.train_accuracy(), 1.0);
    assert_eq!(c.kind(), ProbeKind::Cav);
}

#[test]
fn degenerate_concept_sets_are_rejected() {
    let (xs, _) = clusters(10, 0, 1.0);
    assert!(matches!(fit_cav(&xs, &[true; 10], CavConfig::default()), Err(Error::DegenerateData(_))));
    assert!(fit_car(&xs, &[false; 10], CarConfig::default()).is_err());
    let same = vec![vec![1.0, 2.0]; 6];
    let ys = [true, false, true, false, true, false];
    assert!(matches!(fit_cav(&same, &ys, CavConfig::default()), Err(Error::DegenerateData(_))));
}

#[test]
fn car_handles_concentric_circles() {
    let (xs, ys) = circles(300, 2);
    assert!(one_nn_accuracy(&xs, &ys) >= 0.95);
    let car = fit_car(&xs, &ys, CarConfig::default()).unwrap();
    assert!(car.train_accuracy() >= 0.95, "car {}", car.train_accuracy());
    let cav = fit_cav(&xs, &ys, CavConfig::default()).unwrap();
    assert!(cav.train_accuracy() <= 0.6, "cav {}", cav.train_accuracy());
    let (tx, ty) = circles(200, 3);
    assert!(accuracy(&car, &tx, &ty) >= 0.95);
}

#[test]
fn car_is_perfect_on_separated_clusters() {
    let (xs, ys) = clusters(100, 4, 4.0);
    let car = fit_car(&xs, &ys, CarConfig::default()).unwrap();
    assert_eq!(car.train_accuracy(), 1.0);
}

#[test]
fn svm_dual_solution_is_feasible() {
    let (xs, ys) = circles(120, 5);
    let cfg = SmoConfig::default();
    let svm = Svm::fit(&xs, &ys, 0.5, cfg).unwrap();
    assert!(svm.coef.iter().all(|c| c.abs() <= cfg.c_reg + 1e-12 && *c != 0.0));
    assert!(svm.coef.iter().sum::<f64>().abs() <= 1e-9);
    let tight = SmoConfig { max_iter: 3, tol: 1e-12, ..cfg };
    assert!(matches!(Svm::fit(&xs, &ys, 0.5, tight), Err(Error::SmoNotConverged { .. })));
}

#[test]
fn default_gamma_is_near_the_best_on_a_grid() {
    let (xs, ys) = circles(200, 6);
    let (vx, vy) = circles(400, 7);
    let pca = Pca::fit(&xs, CAR_PCA_DIM).unwrap();
    let g0 = default_gamma(&xs.iter().map(|x| pca.project(x)).collect::<Vec<_>>());
    let val = |gamma: f64| {
        let c = fit_car(&xs, &ys, CarConfig { gamma: Some(gamma), ..CarConfig::default() }).unwrap();
        accuracy(&c, &vx, &vy)
    };
    let best = [0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0]
        .into_iter()
        .map(|m| val(g0 * m))
        .fold(0.0, f64::max);
    assert!(val(g0) >= best - 0.02, "default {} vs best {best}", val(g0));
}

#[test]
fn pca_projection_is_deterministic_and_orthonormal() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let xs: Vec<Vec<f64>> = (0..50).map(|_| (0..14).map(|j| rng.random_range(-1.0..1.0) * (j + 1) as f64).collect()).collect();
    let pca = Pca::fit(&xs, CAR_PCA_DIM).unwrap();
    assert_eq!(pca.dim(), 10);
    let once: Vec<Vec<f64>> = xs.iter().map(|x| pca.project(x)).collect();
    let twice: Vec<Vec<f64>> = xs.iter().map(|x| pca.project(x)).collect();
    assert_eq!(once, twice);
    let gram = &pca.components * pca.components.transpose();
    for i in 0..10 {
        for j in 0..10 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((gram[(i, j)] - want).abs() < 1e-10);
        }
    }
    // Small inputs keep their own dimension.
    assert_eq!(Pca::fit(&[vec![0.0, 1.0], vec![1.0, 0.0]], CAR_PCA_DIM).unwrap().dim(), 2);
}

#[test]
fn wide_pca_matches_the_covariance_eigenvectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xs: Vec<Vec<f64>> = (0..20).map(|_| (0..30).map(|j| rng.random_range(-1.0..1.0) * (30 - j) as f64).collect()).collect();
    let pca = Pca::fit(&xs, 5).unwrap();
    let n = xs.len() as f64;
    let mean: Vec<f64> = (0..30).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let c = DMatrix::from_fn(20, 30, |i, j| xs[i][j] - mean[j]);
    let cov = c.transpose() * &c / n;
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    for r in 0..5 {
        let u = pca.components.row(r).transpose();
        // u is a unit eigenvector of the covariance for the r-th eigenvalue.
        assert!((u.norm() - 1.0).abs() < 1e-10);
        let ev = (c.transpose() * &c / n * &u - &u * vals[r]).norm();
        assert!(ev < 1e-8 * vals[0], "component {r}: {ev}");
    }
    let same = vec![vec![1.0; 30]; 5];
    assert!(matches!(Pca::fit(&same, 5), Err(Error::DegenerateData(_))));
}

#[test]
fn constant_positive_classifier_predicts_every_concept() {
    let c = ConceptClassifier::Cav {
        weights: vec![0.0; 4],
        bias: 0.5,
        train_accuracy: 1.0,
    };
    assert_eq!(predict_concepts(&[c.clone(), c.clone()], &[1.0, -2.0, 3.0, 0.0]).unwrap(), vec![true, true]);
    assert!(matches!(c.predict(&[1.0]), Err(Error::DimMismatch { .. })));
}

fn ecg_setup() -> (Model, Vec<(Vec<Signal>, Vec<bool>)>, Vec<Signal>) {
    let data = generate(&DatasetSpec::new(DatasetKind::ecg_like(), 120, 20, 3)).unwrap();
    let kind = ModelKind::AllCnn1d;
    let model = Model::build(kind, WidthConfig::for_dataset(kind, &data.spec.kind), 5).unwrap();
    let sets = concept_sets(&data.train, 60).unwrap();
    let test = data.test.iter().map(|s| s.x.clone()).collect();
    (model, sets, test)
}

#[test]
fn concept_sets_are_balanced() {
    let data = generate(&DatasetSpec::new(DatasetKind::ecg_like(), 120, 4, 3)).unwrap();
    let sets = concept_sets(&data.train, 40).unwrap();
    assert_eq!(sets.len(), data.concept_names().len());
    for (xs, ys) in &sets {
        assert_eq!(xs.len(), ys.len());
        assert!(ys.iter().filter(|&&y| y).count() <= 20);
        assert!(ys.iter().filter(|&&y| !y).count() <= 20);
    }
}

#[test]
fn invariant_tap_probes_are_exactly_invariant() {
    let (model, sets, test) = ecg_setup();
    for kind in [ProbeKind::Cav, ProbeKind::Car] {
        let probe = ConceptProbe::fit(&model, Tap::Inv, kind, &sets, 1).unwrap();
        for x in &test[..5] {
            let group = SymmetryGroup::for_signal(DatasetKind::ecg_like().group_kind(), x).unwrap();
            let s = invariance_score(&probe, &group, x, None, EstimatorMode::Exact).unwrap();
            assert_eq!(s.value, 1.0, "{}", probe.name());
        }
    }
}

#[test]
fn equivariant_tap_probe_flips_somewhere() {
    let (model, sets, test) = ecg_setup();
    let probe = ConceptProbe::fit(&model, Tap::Equiv, ProbeKind::Cav, &sets, 1).unwrap();
    let group = SymmetryGroup::for_signal(DatasetKind::ecg_like().group_kind(), &test[0]).unwrap();
    let flipped = test.iter().any(|x| {
        let base = probe.explain(x).unwrap().presence();
        group
            .enumerate()
            .unwrap()
            .iter()
            .any(|g| probe.explain(&group.act(g, x).unwrap()).unwrap().presence() != base)
    });
    assert!(flipped);
}

#[test]
fn probes_round_trip_through_the_container() {
    let (model, sets, test) = ecg_setup();
    let dir = tempfile::tempdir().unwrap();
    for kind in [ProbeKind::Cav, ProbeKind::Car] {
        let probe = ConceptProbe::fit(&model, Tap::Inv, kind, &sets, 2).unwrap();
        let path = dir.path().join(format!("{}.eqx", kind.name()));
        probe.save(&path).unwrap();
        let back = ConceptProbe::load(&model, &path).unwrap();
        assert_eq!(back.classifiers(), probe.classifiers());
        for x in &test {
            assert_eq!(back.scores(x).unwrap(), probe.scores(x).unwrap());
        }
        let other = Model::build(ModelKind::FlattenCnn1d, WidthConfig::for_dataset(ModelKind::FlattenCnn1d, &DatasetKind::ecg_like()), 0).unwrap();
        assert!(ConceptProbe::load(&other, &path).is_err());
    }
}
