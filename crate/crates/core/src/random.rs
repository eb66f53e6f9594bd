//! Seeded generators for random automata and grammars, used by the test
//! suites and diagnostics.

use nalgebra::DVector;
use rand::Rng;

use crate::gram::{estimate_contraction, tree_gram_fixed_point, SolverOptions};
use crate::grammar::Wcfg;
use crate::trees::{Alphabet, Tree};
use crate::wta::{Tensor3, Wta};

/// Symbols `a`, `b`, ... (then `s26`, `s27`, ...).
pub fn alphabet(size: usize) -> Alphabet {
    let symbols: Vec<String> = (0..size)
        .map(|i| {
            if i < 26 {
                ((b'a' + i as u8) as char).to_string()
            } else {
                format!("s{i}")
            }
        })
        .collect();
    Alphabet::new(&symbols).expect("generated symbols are valid")
}

/// A random automaton with entries in `[-1, 1]`, its transition tensor
/// shrunk until the fixed-point Jacobian has spectral radius below
/// `max_contraction`.
pub fn random_wta<R: Rng>(
    rng: &mut R,
    n: usize,
    alphabet_size: usize,
    max_contraction: f64,
) -> Wta {
    let sigma = alphabet(alphabet_size);
    let alpha = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let terminal: Vec<DVector<f64>> = (0..alphabet_size)
        .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let raw = Tensor3::from_fn([n, n, n], |_, _, _| rng.gen_range(-1.0..1.0));
    let opts = SolverOptions::default();
    let mut scale = 1.0 / n as f64;
    loop {
        let a = Wta::new(
            sigma.clone(),
            alpha.clone(),
            raw.scale(scale),
            terminal.clone(),
        )
        .expect("consistent dimensions");
        if let Ok((s, _)) = tree_gram_fixed_point(&a, &opts) {
            if estimate_contraction(&a, &s).rho < max_contraction {
                return a;
            }
        }
        scale *= 0.7;
    }
}

/// A random tree with exactly `size` internal nodes (split points drawn uniformly).
pub fn random_tree<R: Rng>(rng: &mut R, size: usize, alphabet_size: usize) -> Tree {
    if size == 0 {
        return Tree::Leaf(rng.gen_range(0..alphabet_size));
    }
    let left = rng.gen_range(0..size);
    Tree::node(
        random_tree(rng, left, alphabet_size),
        random_tree(rng, size - 1 - left, alphabet_size),
    )
}

/// A proper PCFG in CNF with nonterminals `N0..` over `alphabet(alphabet_size)`.
/// Each nonterminal spends at most `binary_mass` of its probability on binary
/// rules, which keeps the expected derivation size finite for small values.
pub fn random_pcfg<R: Rng>(rng: &mut R, n: usize, alphabet_size: usize, binary_mass: f64) -> Wcfg {
    let sigma = alphabet(alphabet_size);
    let nonterminals: Vec<String> = (0..n).map(|i| format!("N{i}")).collect();
    let mut root: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = root.iter().sum();
    root.iter_mut().for_each(|w| *w /= total);
    let mut binary = Vec::new();
    let mut lexical = Vec::new();
    for a in 0..n {
        let split = rng.gen_range(0.2 * binary_mass..binary_mass);
        let bin: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let lex: Vec<f64> = (0..alphabet_size)
            .map(|_| rng.gen_range(0.1..1.0))
            .collect();
        let bsum: f64 = bin.iter().sum();
        let lsum: f64 = lex.iter().sum();
        for (idx, w) in bin.iter().enumerate() {
            binary.push(((a, idx / n, idx % n), split * w / bsum));
        }
        for (x, w) in lex.iter().enumerate() {
            lexical.push(((a, x), (1.0 - split) * w / lsum));
        }
    }
    Wcfg::new(nonterminals, sigma, root, binary, lexical).expect("generated grammar is valid")
}
