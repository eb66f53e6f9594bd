#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svta_kit::trees::Tree;
use svta_kit::wta::{Tensor3, Wta};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// One-state automaton over `{a}` with transition `p` and leaf weight `c`.
pub fn scalar(p: f64, c: f64) -> Wta {
    Wta::new(
        svta_kit::random::alphabet(1),
        DVector::from_element(1, 1.0),
        Tensor3::from_vec([1, 1, 1], vec![p]).unwrap(),
        vec![DVector::from_element(1, c)],
    )
    .unwrap()
}

/// Bottom-up state vector by explicit index loops.
pub fn naive_vector(a: &Wta, t: &Tree) -> Vec<f64> {
    let n = a.n();
    match t {
        Tree::Leaf(s) => a.terminal(*s).iter().copied().collect(),
        Tree::Node(l, r) => {
            let x = naive_vector(a, l);
            let y = naive_vector(a, r);
            let mut out = vec![0.0; n];
            for (i, o) in out.iter_mut().enumerate() {
                for (j, xj) in x.iter().enumerate() {
                    for (k, yk) in y.iter().enumerate() {
                        *o += a.transition().get(i, j, k) * xj * yk;
                    }
                }
            }
            out
        }
    }
}

pub fn naive_eval(a: &Wta, t: &Tree) -> f64 {
    naive_vector(a, t).iter().zip(a.alpha().iter()).map(|(x, y)| x * y).sum()
}

/// A well-conditioned random matrix: identity plus a small perturbation.
pub fn random_invertible<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.4..0.4))
}

pub fn close(x: f64, y: f64, rel: f64) -> bool {
    (x - y).abs() <= rel * x.abs().max(y.abs()).max(1.0)
}
