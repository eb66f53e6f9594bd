mod common;

use common::{close, naive_eval, naive_vector, random_invertible, rng, scalar};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use svta_kit::random::{alphabet, random_tree, random_wta};
use svta_kit::trees::{enumerate_contexts, enumerate_trees, parse_tree, Context, Tree};
use svta_kit::wta::{kron_vec, Tensor3, Wta, WtaFile};
use svta_kit::Error;

#[test]
fn scalar_evaluation() {
    let a = scalar(0.2, 0.5);
    let sigma = a.alphabet().clone();
    assert_eq!(a.evaluate(&parse_tree("a", &sigma).unwrap()).unwrap(), 0.5);
    assert!((a.evaluate(&parse_tree("(a a)", &sigma).unwrap()).unwrap() - 0.05).abs() < 1e-15);
    let xi = a.context_matrix(&Context::left(Context::Hole, Tree::leaf(0))).unwrap();
    assert!((xi[(0, 0)] - 0.1).abs() < 1e-15);
    assert_eq!(a.context_matrix(&Context::Hole).unwrap(), DMatrix::identity(1, 1));
}

#[test]
fn evaluation_matches_naive_recursion() {
    let mut r = rng(11);
    let a = random_wta(&mut r, 2, 2, 0.5);
    for _ in 0..50 {
        let t = random_tree(&mut r, 3, 2);
        let v = a.leaf_to_root_vector(&t).unwrap();
        let naive = naive_vector(&a, &t);
        for (x, y) in v.iter().zip(&naive) {
            assert!((x - y).abs() <= 1e-14 * y.abs().max(1.0));
        }
        assert!((a.evaluate(&t).unwrap() - naive_eval(&a, &t)).abs() <= 1e-14);
    }
}

#[test]
fn hankel_factorization_identity() {
    let mut r = rng(12);
    let a = random_wta(&mut r, 3, 2, 0.5);
    let sigma = a.alphabet().clone();
    let contexts = enumerate_contexts(&sigma, 3).unwrap();
    let trees = enumerate_trees(&sigma, 2).unwrap();
    for c in &contexts {
        let ac = a.context_vector(c).unwrap();
        for t in &trees {
            let lhs = ac.dot(&a.leaf_to_root_vector(t).unwrap());
            let rhs = naive_eval(&a, &c.substitute(t));
            assert!(close(lhs, rhs, 1e-12), "{lhs} vs {rhs}");
        }
    }
}

#[test]
fn context_matrices_compose() {
    let mut r = rng(13);
    let a = random_wta(&mut r, 3, 2, 0.5);
    let contexts = enumerate_contexts(a.alphabet(), 2).unwrap();
    for c in contexts.iter().step_by(3) {
        for d in contexts.iter().step_by(5) {
            let lhs = a.context_matrix(&c.compose(d)).unwrap();
            let rhs = a.context_matrix(c).unwrap() * a.context_matrix(d).unwrap();
            assert!((lhs - rhs).amax() <= 1e-13);
        }
    }
}

#[test]
fn conjugation_by_identity_and_scalar() {
    let a = scalar(0.2, 0.5);
    assert_eq!(a.conjugate(&DMatrix::identity(1, 1)).unwrap().max_abs_diff(&a), Some(0.0));
    let b = a.conjugate(&DMatrix::from_element(1, 1, 2.0)).unwrap();
    assert_eq!(b.alpha()[0], 2.0);
    assert_eq!(b.transition().get(0, 0, 0), 0.4);
    assert_eq!(b.terminal(0)[0], 0.25);
    for text in ["a", "(a a)"] {
        let t = parse_tree(text, a.alphabet()).unwrap();
        assert!(close(a.evaluate(&t).unwrap(), b.evaluate(&t).unwrap(), 1e-15));
    }
    assert!(matches!(a.conjugate(&DMatrix::zeros(1, 1)), Err(Error::SingularMatrix { .. })));
}

#[test]
fn conjugated_tree_vectors() {
    let mut r = rng(14);
    let a = random_wta(&mut r, 3, 2, 0.5);
    let q = random_invertible(&mut r, 3);
    let q_inv = q.clone().try_inverse().unwrap();
    let b = a.conjugate(&q).unwrap();
    for t in enumerate_trees(a.alphabet(), 3).unwrap() {
        let expected = &q_inv * a.leaf_to_root_vector(&t).unwrap();
        let got = b.leaf_to_root_vector(&t).unwrap();
        assert!((expected - got).amax() <= 1e-12);
    }
}

#[test]
fn kron_square_and_cross_pair() {
    let a = scalar(0.2, 0.5);
    let sq = a.kron_square().unwrap();
    assert_eq!(sq.evaluate(&Tree::leaf(0)).unwrap(), 0.25);

    let mut r = rng(15);
    let a = random_wta(&mut r, 3, 2, 0.5);
    let b = random_wta(&mut r, 2, 2, 0.5);
    let sq = a.kron_square().unwrap();
    let cross = a.cross_pair(&b).unwrap();
    assert_eq!(sq.max_abs_diff(&a.cross_pair(&a).unwrap()), Some(0.0));
    for _ in 0..50 {
        let t = random_tree(&mut r, 4, 2);
        let (fa, fb) = (naive_eval(&a, &t), naive_eval(&b, &t));
        assert!(close(sq.evaluate(&t).unwrap(), fa * fa, 1e-12));
        assert!(close(cross.evaluate(&t).unwrap(), fa * fb, 1e-12));
        let w = a.leaf_to_root_vector(&t).unwrap();
        assert!((sq.leaf_to_root_vector(&t).unwrap() - kron_vec(&w, &w)).amax() <= 1e-12);
    }
    let zero = Wta::new(
        b.alphabet().clone(),
        DVector::zeros(2),
        b.transition().clone(),
        b.terminals().to_vec(),
    )
    .unwrap();
    let z = a.cross_pair(&zero).unwrap();
    for t in enumerate_trees(a.alphabet(), 2).unwrap() {
        assert_eq!(z.evaluate(&t).unwrap(), 0.0);
    }
    let other = random_wta(&mut r, 2, 3, 0.5);
    assert!(matches!(a.cross_pair(&other), Err(Error::AlphabetMismatch)));
}

#[test]
fn truncation_keeps_leading_blocks() {
    let a = Wta::new(
        alphabet(1),
        DVector::from_vec(vec![1.0, 0.3]),
        Tensor3::from_fn([2, 2, 2], |i, j, k| (1 + i + 2 * j + 4 * k) as f64 / 100.0),
        vec![DVector::from_vec(vec![0.5, 0.1])],
    )
    .unwrap();
    assert_eq!(a.truncate(2).unwrap().max_abs_diff(&a), Some(0.0));
    let t = a.truncate(1).unwrap();
    assert_eq!(t.n(), 1);
    assert_eq!(t.alpha()[0], 1.0);
    assert_eq!(t.transition().get(0, 0, 0), 0.01);
    assert_eq!(t.terminal(0)[0], 0.5);
}

#[test]
fn gamma_scaling() {
    let a = scalar(0.2, 0.5);
    assert_eq!(a.scale_gamma(1.0).max_abs_diff(&a), Some(0.0));
    let t = parse_tree("(a a)", a.alphabet()).unwrap();
    assert!((a.scale_gamma(2.0).evaluate(&t).unwrap() - 0.1).abs() < 1e-15);

    let mut r = rng(16);
    let a = random_wta(&mut r, 3, 2, 0.5);
    let g = a.scale_gamma(1.7);
    for t in enumerate_trees(a.alphabet(), 4).unwrap() {
        let expected = 1.7f64.powi(t.size() as i32) * a.evaluate(&t).unwrap();
        assert!(close(g.evaluate(&t).unwrap(), expected, 1e-12));
    }
}

#[test]
fn construction_rejects_bad_parameters() {
    let bad_dims = Wta::new(
        alphabet(1),
        DVector::from_element(2, 1.0),
        Tensor3::zeros(1, 1, 1),
        vec![DVector::from_element(1, 0.5)],
    );
    assert!(matches!(bad_dims, Err(Error::InvalidAutomaton(_))));
    let nan = Wta::new(
        alphabet(1),
        DVector::from_element(1, f64::NAN),
        Tensor3::zeros(1, 1, 1),
        vec![DVector::from_element(1, 0.5)],
    );
    assert!(matches!(nan, Err(Error::InvalidAutomaton(_))));
}

#[test]
fn json_round_trip_is_exact() {
    let mut r = rng(17);
    let a = random_wta(&mut r, 3, 2, 0.5);
    let file = WtaFile {
        automaton: a.clone(),
        singular_values: Some(vec![0.3, 0.2, 0.1 / 3.0]),
        gamma: Some(2.4),
    };
    let back = WtaFile::from_json(&file.to_json()).unwrap();
    assert_eq!(back, file);
    assert_eq!(back.automaton.max_abs_diff(&a), Some(0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conjugation_preserves_the_series(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = 2 + (seed % 3) as usize;
        let a = random_wta(&mut r, n, 2, 0.5);
        let q = random_invertible(&mut r, n);
        let b = a.conjugate(&q).unwrap();
        for t in enumerate_trees(a.alphabet(), 5).unwrap().iter().step_by(7) {
            let (x, y) = (a.evaluate(t).unwrap(), b.evaluate(t).unwrap());
            prop_assert!((x - y).abs() <= 1e-8 * x.abs().max(y.abs()).max(1e-300));
        }
    }

    #[test]
    fn kron_square_is_pointwise_square(seed in any::<u64>(), size in 0usize..6) {
        let mut r = rng(seed);
        let a = random_wta(&mut r, 2, 2, 0.5);
        let t = random_tree(&mut r, size, 2);
        let f = a.evaluate(&t).unwrap();
        prop_assert!(close(a.kron_square().unwrap().evaluate(&t).unwrap(), f * f, 1e-12));
    }
}
