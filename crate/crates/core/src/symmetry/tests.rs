use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cyclic(t: usize) -> SymmetryGroup {
    SymmetryGroup::new(GroupKind::Cyclic { len: t }, DomainShape::new(vec![t], 1).unwrap()).unwrap()
}

fn symmetric(n: usize, channels: usize) -> SymmetryGroup {
    SymmetryGroup::new(
        GroupKind::Symmetric { n },
        DomainShape::new(vec![n], channels).unwrap(),
    )
    .unwrap()
}

fn d4(side: usize) -> SymmetryGroup {
    SymmetryGroup::new(
        GroupKind::Dihedral4 { side },
        DomainShape::new(vec![side, side], 1).unwrap(),
    )
    .unwrap()
}

fn signal(axes: Vec<usize>, channels: usize, values: Vec<f64>) -> Signal {
    Signal::new(DomainShape::new(axes, channels).unwrap(), values).unwrap()
}

fn random_signal(shape: &DomainShape, rng: &mut ChaCha8Rng) -> Signal {
    let values = (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Signal::new(shape.clone(), values).unwrap()
}

#[test]
fn cyclic_compose_examples() {
    let g = cyclic(4);
    let s = |k| g.parse_element(&format!("shift:{k}")).unwrap();
    assert_eq!(g.compose(&s(1), &s(2)).unwrap(), s(3));
    assert_eq!(g.compose(&s(3), &s(1)).unwrap(), g.identity());
}

#[test]
fn symmetric_compose_example() {
    let g = symmetric(3, 1);
    let a = g.parse_element("perm:1,2,0").unwrap();
    let b = g.parse_element("perm:2,0,1").unwrap();
    assert_eq!(g.compose(&a, &b).unwrap().to_string(), "perm:0,1,2");
}

#[test]
fn compose_rejects_foreign_elements() {
    let g4 = cyclic(4);
    let g8 = cyclic(8);
    let e = g8.parse_element("shift:5").unwrap();
    let err = g4.compose(&g4.identity(), &e).unwrap_err();
    assert!(matches!(err, Error::GroupMismatch { .. }), "{err}");
}

#[test]
fn inverse_examples() {
    let g = cyclic(8);
    assert_eq!(g.inverse(&g.parse_element("shift:3").unwrap()).unwrap().to_string(), "shift:5");

    let d = d4(3);
    let rot90 = d.parse_element("d4:1,0").unwrap();
    assert_eq!(d.inverse(&rot90).unwrap().to_string(), "d4:3,0");

    let s = symmetric(4, 1);
    let p = s.parse_element("perm:1,2,3,0").unwrap();
    assert_eq!(s.inverse(&p).unwrap().to_string(), "perm:3,0,1,2");
}

#[test]
fn enumerate_orders() {
    let c = cyclic(32).enumerate().unwrap();
    assert_eq!(c.len(), 32);
    assert_eq!(c[0], cyclic(32).identity());

    let d = d4(4).enumerate().unwrap();
    assert_eq!(d.len(), 8);
    assert_eq!(d[0], d4(4).identity());
    let distinct: std::collections::HashSet<_> = d.iter().collect();
    assert_eq!(distinct.len(), 8);

    let s4 = symmetric(4, 1).enumerate().unwrap();
    assert_eq!(s4.len(), 24);
    assert_eq!(s4[0].to_string(), "perm:0,1,2,3");

    let err = symmetric(32, 1).enumerate().unwrap_err();
    match err {
        Error::OrderTooLarge { order, cap } => {
            assert_eq!(order, "32!");
            assert_eq!(cap, 4096);
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn enumeration_cap_is_configurable() {
    let g = cyclic(32).with_enumeration_cap(16);
    assert!(g.enumerate().is_err());
}

#[test]
fn sample_examples() {
    let big = symmetric(1000, 1);
    let s = big.sample(7, 50, false).unwrap();
    assert_eq!(s.len(), 50);
    for g in &s {
        big.check_member(g).unwrap();
    }
    assert_eq!(big.sample(7, 50, false).unwrap(), s, "deterministic given seed");

    assert!(cyclic(4).sample(1, 0, false).unwrap().is_empty());

    let mut full: Vec<String> = cyclic(4)
        .sample(3, 4, true)
        .unwrap()
        .iter()
        .map(|g| g.to_string())
        .collect();
    full.sort();
    assert_eq!(full, ["shift:0", "shift:1", "shift:2", "shift:3"]);

    assert!(matches!(
        cyclic(4).sample(3, 5, true),
        Err(Error::SampleTooLarge { .. })
    ));
}

#[test]
fn sample_without_replacement_on_large_group_is_distinct() {
    let g = symmetric(12, 1);
    let s = g.sample(11, 200, true).unwrap();
    let distinct: std::collections::HashSet<_> = s.iter().collect();
    assert_eq!(distinct.len(), 200);
}

#[test]
fn sample_with_replacement_is_roughly_uniform() {
    let g = cyclic(4);
    let s = g.sample(5, 8000, false).unwrap();
    let mut counts = [0usize; 4];
    for e in &s {
        if let ElementParams::Shift(k) = e.params() {
            counts[*k] += 1;
        }
    }
    for c in counts {
        assert!((1800..2200).contains(&c), "{counts:?}");
    }
}

#[test]
fn act_examples() {
    let g = cyclic(4);
    let x = signal(vec![4], 1, vec![1.0, 2.0, 3.0, 4.0]);
    let y = g.act(&g.parse_element("shift:1").unwrap(), &x).unwrap();
    assert_eq!(y.values(), &[4.0, 1.0, 2.0, 3.0]);
    assert_eq!(g.act(&g.identity(), &x).unwrap(), x);

    // [[a,b],[c,d]] rotated by a quarter turn → [[c,a],[d,b]].
    let d = d4(2);
    let (a, b, c, dd) = (1.0, 2.0, 3.0, 4.0);
    let img = signal(vec![2, 2], 1, vec![a, b, c, dd]);
    let rot = d.act(&d.parse_element("d4:1,0").unwrap(), &img).unwrap();
    assert_eq!(rot.values(), &[c, a, dd, b]);
}

#[test]
fn act_moves_channels_with_points() {
    let g = symmetric(3, 2);
    let x = signal(vec![3], 2, vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5]);
    let p = g.parse_element("perm:1,2,0").unwrap();
    let y = g.act(&p, &x).unwrap();
    // point 0 goes to 1, point 1 to 2, point 2 to 0
    assert_eq!(y.values(), &[2.0, 2.5, 0.0, 0.5, 1.0, 1.5]);
}

#[test]
fn act_permutes_adjacency_jointly() {
    let g = symmetric(3, 1);
    // edge 0-1 only
    let adj = vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let x = signal(vec![3], 1, vec![10.0, 11.0, 12.0]).with_adjacency(adj).unwrap();
    let p = g.parse_element("perm:2,0,1").unwrap();
    let y = g.act(&p, &x).unwrap();
    // node 0 → 2, node 1 → 0: edge becomes 2-0
    assert_eq!(y.values(), &[11.0, 12.0, 10.0]);
    let a = y.adjacency().unwrap();
    assert_eq!(a[2 * 3], 1.0);
    assert_eq!(a[2], 1.0);
    assert_eq!(a.iter().sum::<f64>(), 2.0);
}

#[test]
fn act_rejects_wrong_shape() {
    let g = cyclic(4);
    let x = signal(vec![5], 1, vec![0.0; 5]);
    assert!(matches!(
        g.act(&g.identity(), &x),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn group_rejects_incompatible_domain() {
    let r = SymmetryGroup::new(
        GroupKind::Dihedral4 { side: 3 },
        DomainShape::new(vec![3, 4], 1).unwrap(),
    );
    assert!(r.is_err());
}

#[test]
fn element_strings_round_trip() {
    let groups = [cyclic(8), d4(3), symmetric(5, 1)];
    for g in &groups {
        for e in g.sample(1, 20, false).unwrap() {
            assert_eq!(g.parse_element(&e.to_string()).unwrap(), e);
        }
    }
    let c2 = SymmetryGroup::new(
        GroupKind::Cyclic2d {
            width: 3,
            height: 5,
        },
        DomainShape::new(vec![3, 5], 1).unwrap(),
    )
    .unwrap();
    assert_eq!(c2.parse_element("shift2d:4,7").unwrap().to_string(), "shift2d:1,2");
    assert!(symmetric(3, 1).parse_element("perm:0,0,1").is_err());
}

fn check_axioms_exhaustive(g: &SymmetryGroup) {
    let all = g.enumerate().unwrap();
    let id = g.identity();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_signal(g.acts_on(), &mut rng);
    for a in &all {
        assert_eq!(&g.compose(&id, a).unwrap(), a);
        assert_eq!(&g.compose(a, &id).unwrap(), a);
        assert_eq!(g.compose(&g.inverse(a).unwrap(), a).unwrap(), id);
        for b in &all {
            let ab = g.compose(a, b).unwrap();
            // representation homomorphism, exact
            assert_eq!(
                g.act(&ab, &x).unwrap(),
                g.act(a, &g.act(b, &x).unwrap()).unwrap()
            );
        }
    }
    for a in all.iter().step_by(3) {
        for b in all.iter().step_by(2) {
            for c in all.iter().step_by(5) {
                let l = g.compose(a, &g.compose(b, c).unwrap()).unwrap();
                let r = g.compose(&g.compose(a, b).unwrap(), c).unwrap();
                assert_eq!(l, r);
            }
        }
    }
}

#[test]
fn axioms_hold_on_enumerable_groups() {
    check_axioms_exhaustive(&cyclic(12));
    check_axioms_exhaustive(&d4(3));
    check_axioms_exhaustive(&d4(4));
    check_axioms_exhaustive(&symmetric(4, 2));
    check_axioms_exhaustive(
        &SymmetryGroup::new(
            GroupKind::Cyclic2d {
                width: 4,
                height: 3,
            },
            DomainShape::new(vec![4, 3], 2).unwrap(),
        )
        .unwrap(),
    );
}

#[test]
fn axioms_on_random_symmetric_triples() {
    let g = symmetric(10, 1);
    let elems = g.sample(99, 3000, false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_signal(g.acts_on(), &mut rng);
    let id = g.identity();
    for t in elems.chunks(3) {
        let (a, b, c) = (&t[0], &t[1], &t[2]);
        let l = g.compose(a, &g.compose(b, c).unwrap()).unwrap();
        let r = g.compose(&g.compose(a, b).unwrap(), c).unwrap();
        assert_eq!(l, r);
        assert_eq!(&g.compose(&id, a).unwrap(), a);
        assert_eq!(g.compose(&g.inverse(a).unwrap(), a).unwrap(), id);
        assert_eq!(
            g.act(&g.compose(a, b).unwrap(), &x).unwrap(),
            g.act(a, &g.act(b, &x).unwrap()).unwrap()
        );
    }
}

#[test]
fn act_on_explanation_modes() {
    let g = cyclic(4);
    let s1 = g.parse_element("shift:1").unwrap();
    let attr = Explanation::Feature(signal(vec![4], 1, vec![1.0, 2.0, 3.0, 4.0]));
    let moved = act_on_explanation(&g, &s1, &attr, OutputAction::SameAsInput).unwrap();
    assert_eq!(moved.as_slice(), &[4.0, 1.0, 2.0, 3.0]);

    let ex = Explanation::Examples(vec![0.3, -1.0, 2.0]);
    assert_eq!(act_on_explanation(&g, &s1, &ex, OutputAction::Trivial).unwrap(), ex);

    let c = Explanation::concepts_from_presence(&[true, false, true, false]);
    let out = act_on_explanation(&g, &s1, &c, OutputAction::Trivial).unwrap();
    assert_eq!(out.presence().unwrap(), vec![true, false, true, false]);

    assert!(matches!(
        act_on_explanation(&g, &s1, &ex, OutputAction::SameAsInput),
        Err(Error::ActionMismatch { .. })
    ));
}

proptest! {
    #[test]
    fn act_is_an_orthogonal_permutation(seed in 0u64..10_000, n in 2usize..9, onehot in 0usize..64) {
        let g = symmetric(n, 2);
        let elem = g.sample(seed, 1, false).unwrap().remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_signal(g.acts_on(), &mut rng);
        let y = g.act(&elem, &x).unwrap();
        let sq = |s: &Signal| s.values().iter().map(|v| v * v).sum::<f64>();
        let mut xs = x.values().to_vec();
        let mut ys = y.values().to_vec();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        prop_assert_eq!(xs, ys);
        prop_assert!((sq(&x) - sq(&y)).abs() <= 1e-12 * sq(&x));

        let k = onehot % g.acts_on().len();
        let mut v = vec![0.0; g.acts_on().len()];
        v[k] = 1.0;
        let e = Signal::new(g.acts_on().clone(), v).unwrap();
        let ye = g.act(&elem, &e).unwrap();
        prop_assert_eq!(ye.values().iter().filter(|&&v| v == 1.0).count(), 1);
        prop_assert_eq!(ye.values().iter().filter(|&&v| v == 0.0).count(), e.values().len() - 1);
    }

    #[test]
    fn cyclic_shift_homomorphism(a in 0usize..32, b in 0usize..32, seed in 0u64..1000) {
        let g = cyclic(32);
        let ga = g.parse_element(&format!("shift:{a}")).unwrap();
        let gb = g.parse_element(&format!("shift:{b}")).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_signal(g.acts_on(), &mut rng);
        prop_assert_eq!(
            g.act(&g.compose(&ga, &gb).unwrap(), &x).unwrap(),
            g.act(&ga, &g.act(&gb, &x).unwrap()).unwrap()
        );
    }
}
