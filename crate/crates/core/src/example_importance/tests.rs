use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data_synth::DatasetKind;
use crate::model_zoo::{ModelKind, WidthConfig};
use crate::robustness_metrics::{similarity, SimilarityKind};
use crate::symmetry::SymmetryGroup;
use crate::tensor_engine::Tensor;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_head(hidden: usize, classes: usize, seed: u64) -> LinearHead {
    let mut r = rng(seed);
    let w = (0..hidden * classes).map(|_| r.random_range(-1.0..1.0)).collect();
    let b = (0..classes).map(|_| r.random_range(-0.5..0.5)).collect();
    LinearHead::new(&Tensor::new(vec![hidden, classes], w).unwrap(), &Tensor::vector(b)).unwrap()
}

fn head_from_theta(theta: &[f64], hidden: usize, classes: usize) -> LinearHead {
    let (w, b) = theta.split_at(hidden * classes);
    LinearHead::new(&Tensor::new(vec![hidden, classes], w.to_vec()).unwrap(), &Tensor::vector(b.to_vec())).unwrap()
}

fn theta(head: &LinearHead, hidden: usize, classes: usize) -> Vec<f64> {
    // The bias gradient at h = 0 with p = softmax(b) recovers b only up to a
    // shift, so read the parameters back through unit representations.
    let mut t = vec![0.0; hidden * classes + classes];
    let b = head.logits(&vec![0.0; hidden]).unwrap();
    for i in 0..hidden {
        let mut e = vec![0.0; hidden];
        e[i] = 1.0;
        let z = head.logits(&e).unwrap();
        for c in 0..classes {
            t[i * classes + c] = z[c] - b[c];
        }
    }
    t[hidden * classes..].copy_from_slice(&b);
    t
}

fn random_reps(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n).map(|_| (0..d).map(|_| r.random_range(-1.5..1.5)).collect()).collect()
}

/// Dense Hessian of the mean training loss by second differences of the
/// loss value alone.
fn fd_hessian(th: &[f64], reps: &[Vec<f64>], labels: &[usize], hidden: usize, classes: usize) -> DMatrix<f64> {
    let h = 1e-4;
    let dim = th.len();
    let loss = |t: &[f64]| {
        let head = head_from_theta(t, hidden, classes);
        reps.iter().zip(labels).map(|(r, &y)| head.loss(r, y).unwrap()).sum::<f64>() / reps.len() as f64
    };
    let mut m = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let at = |si: f64, sj: f64| {
                let mut t = th.to_vec();
                t[i] += si * h;
                t[j] += sj * h;
                loss(&t)
            };
            m[(i, j)] = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h);
        }
    }
    m
}

fn dense_influence(
    head: &LinearHead,
    reps: &[Vec<f64>],
    labels: &[usize],
    rep_x: &[f64],
    y: usize,
    damping: f64,
) -> Vec<f64> {
    let (hidden, classes) = (head.hidden(), head.classes());
    let th = theta(head, hidden, classes);
    let hess = fd_hessian(&th, reps, labels, hidden, classes);
    let a = hess + DMatrix::identity(th.len(), th.len()) * damping;
    let g = DVector::from_vec(head.loss_gradient(rep_x, y).unwrap());
    let s = a.lu().solve(&g).unwrap();
    reps.iter()
        .zip(labels)
        .map(|(r, &l)| DVector::from_vec(head.loss_gradient(r, l).unwrap()).dot(&s))
        .collect()
}

fn ecg_model(kind: ModelKind, seed: u64) -> Model {
    Model::build(kind, WidthConfig::for_dataset(kind, &DatasetKind::ecg_like()), seed).unwrap()
}

fn random_signals(shape: &crate::symmetry::DomainShape, n: usize, seed: u64) -> Vec<Signal> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| Signal::new(shape.clone(), (0..shape.len()).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap())
        .collect()
}

fn subset(kind: &DatasetKind, n: usize, seed: u64) -> TrainSubset {
    let shape = kind.input_shape().unwrap();
    let xs = random_signals(&shape, n, seed);
    TrainSubset::new(xs.into_iter().enumerate().map(|(i, x)| (x, i % kind.classes())).collect()).unwrap()
}

#[test]
fn analytic_hessian_matches_second_differences() {
    let (hidden, classes) = (3, 2);
    let head = random_head(hidden, classes, 1);
    let reps = random_reps(10, hidden, 2);
    let labels: Vec<usize> = (0..10).map(|i| i % classes).collect();
    let probs: Vec<Vec<f64>> = reps.iter().map(|r| head.probabilities(r).unwrap()).collect();
    let th = theta(&head, hidden, classes);
    let dense = fd_hessian(&th, &reps, &labels, hidden, classes);
    for j in 0..head.dim() {
        let mut e = vec![0.0; head.dim()];
        e[j] = 1.0;
        let col = head.hessian_vector_product(&reps, &probs, &e);
        for i in 0..head.dim() {
            assert!((col[i] - dense[(i, j)]).abs() <= 1e-6, "H[{i},{j}]: {} vs {}", col[i], dense[(i, j)]);
        }
    }
}

#[test]
fn influence_matches_dense_solve() {
    let (hidden, classes) = (3, 2);
    let head = random_head(hidden, classes, 3);
    let reps = random_reps(10, hidden, 4);
    let labels: Vec<usize> = (0..10).map(|i| i % classes).collect();
    for damping in [1e-2, 1.0] {
        let k = 6;
        let y = labels[k];
        let got = influence_scores(&head, &reps, &labels, &reps[k], y, damping).unwrap();
        let want = dense_influence(&head, &reps, &labels, &reps[k], y, damping);
        let scale = want.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-5 * scale, "{g} vs {w}");
        }
        // The query is training example k, whose representation is unique.
        assert_eq!(argmax(&got), k);
        assert_eq!(argmax(&want), k);
    }
}

#[test]
fn influence_approaches_scaled_gradient_products_for_large_damping() {
    let (hidden, classes) = (4, 3);
    let head = random_head(hidden, classes, 5);
    let reps = random_reps(10, hidden, 6);
    let labels: Vec<usize> = (0..10).map(|i| i % classes).collect();
    let rep_x = random_reps(1, hidden, 7).remove(0);
    let lambda = 1e4;
    let got = influence_scores(&head, &reps, &labels, &rep_x, 1, lambda).unwrap();
    let dense = dense_influence(&head, &reps, &labels, &rep_x, 1, lambda);
    let g = head.loss_gradient(&rep_x, 1).unwrap();
    for ((n, s), d) in got.iter().enumerate().zip(&dense) {
        let gn = head.loss_gradient(&reps[n], labels[n]).unwrap();
        let plain = gn.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() / lambda;
        assert!((s - plain).abs() <= 0.01 * plain.abs(), "{s} vs {plain}");
        assert!((d - plain).abs() <= 0.01 * plain.abs());
    }
}

#[test]
fn influence_rejects_bad_damping_and_reports_cg_failure() {
    let head = random_head(2, 2, 0);
    let reps = random_reps(3, 2, 0);
    assert!(influence_scores(&head, &reps, &[0, 1, 0], &reps[0], 0, 0.0).is_err());
    let err = conjugate_gradient(|v| v.iter().enumerate().map(|(i, a)| (i + 1) as f64 * 1e3 * a).collect(), &[1.0; 50], 1e-14, 2);
    assert!(matches!(err, Err(Error::CgNotConverged { iterations: 2, .. })));
}

#[test]
fn tracin_hand_built_orthogonal_case() {
    let train = vec![vec![2.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 3.0]];
    for k in 0..3 {
        let scores = tracin_scores(&[(0.5, train.clone(), train[k].clone())]).unwrap();
        let own = 0.5 * train[k].iter().map(|v| v * v).sum::<f64>();
        assert_eq!(scores[k], own);
        for (n, s) in scores.iter().enumerate() {
            if n != k {
                assert_eq!(*s, 0.0);
            }
        }
    }
    let scores = tracin_scores(&[(0.0, train.clone(), train[0].clone())]).unwrap();
    assert!(scores.iter().all(|&s| s == 0.0));
    // Checkpoints add up.
    let two = tracin_scores(&[(0.5, train.clone(), train[1].clone()), (0.25, train.clone(), train[1].clone())]).unwrap();
    assert_eq!(two[1], 0.75);
    assert!(tracin_scores(&[]).is_err());
}

#[test]
fn tracin_rejects_mismatched_checkpoints() {
    let data = DatasetKind::ecg_like();
    let sub = subset(&data, 4, 0);
    let a = ecg_model(ModelKind::AllCnn1d, 0);
    let b = ecg_model(ModelKind::FlattenCnn1d, 0);
    assert!(TracInExplainer::new(vec![(a.clone(), 1e-3), (b, 1e-3)], &sub).is_err());
    assert!(TracInExplainer::new(vec![], &sub).is_err());
    let e = TracInExplainer::new(vec![(a.clone(), 0.0)], &sub).unwrap();
    let x = &random_signals(&data.input_shape().unwrap(), 1, 9)[0];
    assert!(e.explain(x).unwrap().as_slice().iter().all(|&s| s == 0.0));
}

#[test]
fn loss_based_scores_are_invariant_for_invariant_models() {
    let data = DatasetKind::ecg_like();
    let sub = subset(&data, 12, 1);
    let m0 = ecg_model(ModelKind::AllCnn1d, 2);
    let m1 = ecg_model(ModelKind::AllCnn1d, 3);
    let influence = InfluenceExplainer::new(&m1, &sub, DEFAULT_DAMPING).unwrap();
    let tracin = TracInExplainer::new(vec![(m0, 1e-3), (m1.clone(), 1e-3)], &sub).unwrap();
    let shape = data.input_shape().unwrap();
    let group = SymmetryGroup::new(data.group_kind(), shape.clone()).unwrap();
    for x in random_signals(&shape, 3, 5) {
        for e in [&influence as &dyn Explainer, &tracin] {
            let base = e.explain(&x).unwrap();
            for g in group.enumerate().unwrap() {
                let moved = e.explain(&group.act(&g, &x).unwrap()).unwrap();
                let s = similarity(SimilarityKind::Cosine, base.as_slice(), moved.as_slice()).unwrap();
                assert!((s - 1.0).abs() <= 1e-9, "{}: {s}", e.name());
            }
        }
    }
}

/// Exact minimizer of `‖r − Σ wₙ rowₙ‖²` over the simplex by enumerating
/// active sets and solving each equality-constrained subproblem.
fn qp_oracle(rows: &[Vec<f64>], r: &[f64]) -> Vec<f64> {
    let n = rows.len();
    let mut best = (f64::INFINITY, vec![]);
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let s = support.len();
        // KKT system [2AᵀA 1; 1ᵀ 0][w; μ] = [2Aᵀr; 1].
        let mut kkt = DMatrix::zeros(s + 1, s + 1);
        let mut rhs = DVector::zeros(s + 1);
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                kkt[(a, b)] = 2.0 * rows[i].iter().zip(&rows[j]).map(|(p, q)| p * q).sum::<f64>();
            }
            kkt[(a, s)] = 1.0;
            kkt[(s, a)] = 1.0;
            rhs[a] = 2.0 * rows[i].iter().zip(r).map(|(p, q)| p * q).sum::<f64>();
        }
        rhs[s] = 1.0;
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        if (0..s).any(|a| sol[a] < -1e-12) {
            continue;
        }
        let mut w = vec![0.0; n];
        for (a, &i) in support.iter().enumerate() {
            w[i] = sol[a];
        }
        let obj: f64 = (0..r.len())
            .map(|d| (r[d] - (0..n).map(|i| w[i] * rows[i][d]).sum::<f64>()).powi(2))
            .sum();
        if obj < best.0 - 1e-15 {
            best = (obj, w);
        }
    }
    best.1
}

fn qp_rows() -> Vec<Vec<f64>> {
    vec![
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![1.0, 1.0, 1.0],
        vec![-1.0, 0.5, 0.2],
    ]
}

#[test]
fn simplex_recovers_a_row() {
    let rows = qp_rows();
    for k in 0..rows.len() {
        let oracle = qp_oracle(&rows, &rows[k]);
        assert!(oracle[k] > 0.999);
        let fit = simplex_weights(&rows, &rows[k], DEFAULT_SIMPLEX_EPOCHS, DEFAULT_SIMPLEX_LR).unwrap();
        assert!(fit.weights[k] >= 0.99, "row {k}: {:?}", fit.weights);
        assert!(fit.converged);
    }
}

#[test]
fn simplex_splits_a_midpoint() {
    let rows = qp_rows();
    let mid: Vec<f64> = rows[0].iter().zip(&rows[1]).map(|(a, b)| (a + b) / 2.0).collect();
    let oracle = qp_oracle(&rows, &mid);
    assert!((oracle[0] - 0.5).abs() < 1e-9 && (oracle[1] - 0.5).abs() < 1e-9);
    let fit = simplex_weights(&rows, &mid, DEFAULT_SIMPLEX_EPOCHS, DEFAULT_SIMPLEX_LR).unwrap();
    for (w, o) in fit.weights.iter().zip(&oracle) {
        assert!((w - o).abs() <= 0.05, "{:?} vs {oracle:?}", fit.weights);
    }
}

#[test]
fn simplex_with_identical_rows_reports_the_distance() {
    let rows = vec![vec![1.0, -2.0, 0.5]; 4];
    let x = [0.0, 1.0, 2.0];
    let fit = simplex_weights(&rows, &x, 200, 0.1).unwrap();
    let want = ((1.0f64).powi(2) + 3.0f64.powi(2) + 1.5f64.powi(2)).sqrt();
    assert!((fit.residual - want).abs() <= 1e-12);
    assert!(simplex_weights(&rows, &[], 10, 0.1).is_err());
    assert!(simplex_weights(&rows, &[1.0], 10, 0.1).is_err());
}

#[test]
fn representation_similarity_examples() {
    let rows = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
    assert_eq!(representation_similarity(&rows, &rows[1]).unwrap(), vec![0.0, 1.0, 0.0]);
    assert_eq!(representation_similarity(&rows, &[0.0; 3]).unwrap(), vec![0.0; 3]);
    assert!(representation_similarity(&rows, &[0.0; 2]).is_err());
}

#[test]
fn representation_methods_follow_the_tap() {
    let data = DatasetKind::point_clouds();
    let kind = ModelKind::DeepSet;
    let model = Model::build(kind, WidthConfig::for_dataset(kind, &data), 4).unwrap();
    let sub = subset(&data, 20, 2);
    let shape = data.input_shape().unwrap();
    let group = SymmetryGroup::new(data.group_kind(), shape.clone()).unwrap();
    let inv_sim = RepresentationSimilarityExplainer::new(&model, &sub, Tap::Inv).unwrap();
    let inv_simplex = SimplexExplainer::new(&model, &sub, Tap::Inv, 300, DEFAULT_SIMPLEX_LR).unwrap();
    let equiv_sim = RepresentationSimilarityExplainer::new(&model, &sub, Tap::Equiv).unwrap();
    let mut violated = false;
    for x in random_signals(&shape, 2, 8) {
        let base_sim = inv_sim.explain(&x).unwrap();
        let base_simplex = inv_simplex.explain(&x).unwrap();
        let base_equiv = equiv_sim.explain(&x).unwrap();
        for g in group.sample(3, 6, true).unwrap() {
            let gx = group.act(&g, &x).unwrap();
            let s = similarity(SimilarityKind::Cosine, base_sim.as_slice(), inv_sim.explain(&gx).unwrap().as_slice()).unwrap();
            assert!((s - 1.0).abs() <= 1e-9);
            let moved = inv_simplex.explain(&gx).unwrap();
            let s = similarity(SimilarityKind::Cosine, base_simplex.as_slice(), moved.as_slice()).unwrap();
            assert!(s >= 0.999);
            assert_eq!(argmax(base_simplex.as_slice()), argmax(moved.as_slice()));
            let e = similarity(SimilarityKind::Cosine, base_equiv.as_slice(), equiv_sim.explain(&gx).unwrap().as_slice()).unwrap();
            violated |= e < 1.0 - 1e-6;
        }
    }
    assert!(violated);
}

#[test]
fn subset_needs_two_examples() {
    let x = Signal::zeros(DatasetKind::ecg_like().input_shape().unwrap());
    assert!(TrainSubset::new(vec![(x.clone(), 0)]).is_err());
    assert_eq!(TrainSubset::new(vec![(x.clone(), 0), (x, 1)]).unwrap().len(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn simplex_weights_lie_on_the_simplex(seed in any::<u64>(), n in 2usize..8, d in 1usize..5) {
        let rows = random_reps(n, d, seed);
        let x = random_reps(1, d, seed ^ 1).remove(0);
        let fit = simplex_weights(&rows, &x, 100, 0.1).unwrap();
        prop_assert!(fit.weights.iter().all(|&w| w >= 0.0));
        prop_assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(fit.residual.is_finite());
    }
}
