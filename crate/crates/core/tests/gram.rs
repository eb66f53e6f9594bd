mod common;

use common::{rng, scalar};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

use svta_kit::gram::{
    context_gram, cross_tree_gram, estimate_contraction, fixed_point_map, gram_matrices, graded_grams,
    jacobian_apply, jacobian_transpose_apply, max_convergent_gamma, reshape, tree_gram_fixed_point, vectorize,
    SolverOptions,
};
use svta_kit::random::random_wta;
use svta_kit::trees::{enumerate_contexts, enumerate_trees, Tree};
use svta_kit::wta::Wta;
use svta_kit::Error;

// Frozen closed forms for p = 0.2, c = 0.5: the smaller root of
// p^2 s^2 - s + c^2 = 0, then q = 1 / (1 - 2 p^2 s) and rho = 2 p^2 s.
const S_SCALAR: f64 = 0.25255128608411004;
const Q_SCALAR: f64 = 1.0206207261596576;
const RHO_SCALAR: f64 = 0.020204102886728803;

fn outer_sum(vectors: impl Iterator<Item = DVector<f64>>, n: usize) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(n, n);
    for v in vectors {
        acc += &v * v.transpose();
    }
    acc
}

fn tree_gram_by_enumeration(a: &Wta, trees: &[Tree]) -> DMatrix<f64> {
    outer_sum(trees.iter().map(|t| a.leaf_to_root_vector(t).unwrap()), a.n())
}

fn trees_up_to_depth(sigma: usize, depth: usize) -> Vec<Tree> {
    let mut level: Vec<Tree> = (0..sigma).map(Tree::leaf).collect();
    for _ in 0..depth {
        let mut next: Vec<Tree> = (0..sigma).map(Tree::leaf).collect();
        for l in &level {
            for r in &level {
                next.push(Tree::node(l.clone(), r.clone()));
            }
        }
        level = next;
    }
    level
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

#[test]
fn leaf_only_automaton() {
    let a = scalar(0.0, 0.5);
    let (s, report) = tree_gram_fixed_point(&a, &SolverOptions::default()).unwrap();
    assert_eq!(s[0], 0.25);
    assert!(report.iterations <= 2);
    assert_eq!(context_gram(&a, &s).unwrap()[0], 1.0);
    assert_eq!(estimate_contraction(&a, &s).rho, 0.0);
    assert!(matches!(
        max_convergent_gamma(&a, &SolverOptions::default()),
        Err(Error::NoUpperBracket { .. })
    ));
}

#[test]
fn scalar_closed_forms() {
    let a = scalar(0.2, 0.5);
    let opts = SolverOptions::default();
    let (s, report) = tree_gram_fixed_point(&a, &opts).unwrap();
    assert!((s[0] - S_SCALAR).abs() <= 1e-12);
    assert!(report.final_residual <= opts.tolerance);
    let q = context_gram(&a, &s).unwrap();
    assert!((q[0] - Q_SCALAR).abs() <= 1e-12);
    assert!((estimate_contraction(&a, &s).rho - RHO_SCALAR).abs() <= 1e-10);
    let g = gram_matrices(&a, &opts).unwrap();
    assert!((g.g_trees[(0, 0)] - S_SCALAR).abs() <= 1e-12);
    assert!((g.g_contexts[(0, 0)] - Q_SCALAR).abs() <= 1e-12);
    let gamma = max_convergent_gamma(&a, &opts).unwrap();
    assert!((4.99..=5.01).contains(&gamma));
}

#[test]
fn divergent_scalar() {
    let a = scalar(1.0, 1.0);
    let err = tree_gram_fixed_point(&a, &SolverOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
    // The Jacobian is 2 s here, so it reaches 1 once s >= 1/2; the iterates
    // pass that point on their way up.
    for seed in [0.5, 1.0, 7.0] {
        assert!(estimate_contraction(&a, &DVector::from_element(1, seed)).rho >= 1.0);
    }
}

#[test]
fn invalid_options() {
    let a = scalar(0.2, 0.5);
    let opts = SolverOptions {
        tolerance: -1.0,
        ..SolverOptions::default()
    };
    assert!(matches!(tree_gram_fixed_point(&a, &opts), Err(Error::InvalidOptions(_))));
}

#[test]
fn iterates_equal_depth_bounded_sums() {
    for (sigma, depth) in [(1usize, 4usize), (2, 3)] {
        let mut r = rng(20 + sigma as u64);
        let a = random_wta(&mut r, 2, sigma, 0.5);
        let mut s = DVector::zeros(4);
        for k in 0..=depth {
            s = fixed_point_map(&a, &s);
            let expected = tree_gram_by_enumeration(&a, &trees_up_to_depth(sigma, k));
            assert!((reshape(&s, 2) - expected).amax() <= 1e-13, "sigma {sigma}, depth {k}");
        }
    }
}

#[test]
fn graded_grams_match_enumeration() {
    let mut r = rng(22);
    let a = random_wta(&mut r, 2, 2, 0.5);
    let (trees, contexts) = graded_grams(&a, 4);
    let all_trees = enumerate_trees(a.alphabet(), 4).unwrap();
    let all_contexts = enumerate_contexts(a.alphabet(), 4).unwrap();
    for m in 0..=4 {
        let by_tree: Vec<Tree> = all_trees.iter().filter(|t| t.size() == m).cloned().collect();
        assert!((&trees[m] - tree_gram_by_enumeration(&a, &by_tree)).amax() <= 1e-13);
        let by_context = outer_sum(
            all_contexts
                .iter()
                .filter(|c| c.size() == m)
                .map(|c| a.context_vector(c).unwrap()),
            2,
        );
        assert!((&contexts[m] - by_context).amax() <= 1e-13);
    }
}

#[test]
fn tree_gram_dominates_partial_sums() {
    let mut r = rng(23);
    let a = random_wta(&mut r, 2, 1, 0.3);
    let g = gram_matrices(&a, &SolverOptions::default()).unwrap();
    let trees = enumerate_trees(a.alphabet(), 8).unwrap();
    let mut previous = f64::INFINITY;
    for k in 0..=8 {
        let subset: Vec<Tree> = trees.iter().filter(|t| t.size() <= k).cloned().collect();
        let gap = &g.g_trees - tree_gram_by_enumeration(&a, &subset);
        assert!(min_eigenvalue(&gap) >= -1e-12, "size {k}");
        assert!(gap.norm() <= previous);
        previous = gap.norm();
    }
    assert!(previous <= 1e-4 * g.g_trees.norm());
}

#[test]
fn context_gram_dominates_partial_sums() {
    let mut r = rng(24);
    let a = random_wta(&mut r, 2, 1, 0.3);
    let g = gram_matrices(&a, &SolverOptions::default()).unwrap();
    let contexts = enumerate_contexts(a.alphabet(), 8).unwrap();
    let mut gaps = Vec::new();
    for k in [2, 4, 6, 8] {
        let partial = outer_sum(
            contexts.iter().filter(|c| c.size() <= k).map(|c| a.context_vector(c).unwrap()),
            2,
        );
        let gap = &g.g_contexts - partial;
        assert!(min_eigenvalue(&gap) >= -1e-12, "size {k}");
        gaps.push(gap.norm());
    }
    for w in gaps.windows(2) {
        assert!(w[1] <= 0.5 * w[0], "{gaps:?}");
    }
    assert!(gaps[3] <= 1e-4 * g.g_contexts.norm());
}

#[test]
fn jacobian_adjoint() {
    let mut r = rng(25);
    let a = random_wta(&mut r, 3, 2, 0.5);
    let (s, _) = tree_gram_fixed_point(&a, &SolverOptions::default()).unwrap();
    let h = vectorize(&DMatrix::from_fn(3, 3, |i, j| (i as f64 - 0.7 * j as f64).sin()));
    let y = vectorize(&DMatrix::from_fn(3, 3, |i, j| (0.3 + i as f64 * j as f64).cos()));
    let lhs = jacobian_apply(&a, &s, &h).dot(&y);
    let rhs = h.dot(&jacobian_transpose_apply(&a, &s, &y));
    assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0));
}

#[test]
fn cross_gram_of_an_automaton_with_itself() {
    let mut r = rng(26);
    let a = random_wta(&mut r, 3, 2, 0.5);
    let opts = SolverOptions::default();
    let (s, _) = tree_gram_fixed_point(&a, &opts).unwrap();
    let (cross, _) = cross_tree_gram(&a, &a, &opts).unwrap();
    assert!((cross - reshape(&s, 3)).amax() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gram_pair_is_symmetric_psd_fixed_point(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = 2 + (seed % 3) as usize;
        let a = random_wta(&mut r, n, 1 + (seed % 2) as usize, 0.6);
        let opts = SolverOptions::default();
        let g = gram_matrices(&a, &opts).unwrap();
        for m in [&g.g_trees, &g.g_contexts] {
            prop_assert!((m - m.transpose()).norm() <= 1e-10);
            prop_assert!(min_eigenvalue(m) >= -1e-8 * m.trace());
        }
        let s = vectorize(&g.g_trees);
        prop_assert!((fixed_point_map(&a, &s) - &s).norm() <= 10.0 * opts.tolerance * s.norm().max(1.0));
    }

    #[test]
    fn residuals_contract_linearly(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_wta(&mut r, 2 + (seed % 2) as usize, 2, 0.8);
        let (s, report) = tree_gram_fixed_point(&a, &SolverOptions::default()).unwrap();
        let rho = estimate_contraction(&a, &s).rho;
        for (k, w) in report.residuals.windows(2).enumerate().skip(10) {
            if w[1] > 1e-11 {
                prop_assert!(w[1] / w[0] <= rho + 0.05, "step {}: {} vs {}", k, w[1] / w[0], rho);
            }
        }
    }
}
