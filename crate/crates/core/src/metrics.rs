//! Distances and scores between tree series, finite Hankel blocks, and the
//! enumeration oracles used to cross-check them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::gram::{
    cross_tree_gram, estimate_contraction, graded_grams, max_convergent_gamma,
    tree_gram_fixed_point, SolverOptions,
};
use crate::trees::{
    enumerate_contexts_capped, enumerate_trees_capped, Context, Tree, DEFAULT_ENUMERATION_CAP,
};
use crate::wta::{Tensor3, Wta};

/// Negative radicands down to this value are rounding noise and clamp to 0.
pub const RADICAND_TOLERANCE: f64 = 1e-10;

/// Upper limit on the number of trees an enumeration oracle will visit.
pub const BRUTE_FORCE_TREE_CAP: usize = 4_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub l2_squared: f64,
    pub l2: f64,
    pub perplexity: Option<f64>,
    /// Enumeration-truncation error, zero for the closed-form distance.
    pub tail_bound: f64,
}

impl MetricReport {
    pub fn compare(a: &Wta, b: &Wta, test: Option<&[Tree]>, opts: &SolverOptions) -> Result<Self> {
        let l2_squared = l2_squared(a, b, opts)?;
        let perplexity = match test {
            Some(trees) => Some(perplexity(b, a, trees)?),
            None => None,
        };
        Ok(Self {
            l2_squared,
            l2: l2_squared.sqrt(),
            perplexity,
            tail_bound: 0.0,
        })
    }
}

fn pair_sum(a: &Wta, b: &Wta, opts: &SolverOptions) -> Result<f64> {
    let (g, _) = cross_tree_gram(a, b, opts)?;
    Ok(a.alpha().dot(&(g * b.alpha())))
}

/// `sum_t (f_A(t) - f_B(t))^2` from three Gram solves, run concurrently.
pub fn l2_squared(a: &Wta, b: &Wta, opts: &SolverOptions) -> Result<f64> {
    if a.alphabet() != b.alphabet() {
        return Err(Error::AlphabetMismatch);
    }
    let ((aa, ab), bb) = rayon::join(
        || rayon::join(|| pair_sum(a, a, opts), || pair_sum(a, b, opts)),
        || pair_sum(b, b, opts),
    );
    let r = aa? - 2.0 * ab? + bb?;
    if r < -RADICAND_TOLERANCE || r.is_nan() {
        return Err(Error::NegativeRadicand(r));
    }
    Ok(r.max(0.0))
}

pub fn l2_distance(a: &Wta, b: &Wta, opts: &SolverOptions) -> Result<f64> {
    Ok(l2_squared(a, b, opts)?.sqrt())
}

/// `2^(-H)` with `H = sum_t p(t) log2 q(t)`, where `p` and `q` are the
/// reference and model weights normalized over `test`.
pub fn perplexity(model: &Wta, reference: &Wta, test: &[Tree]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let normalized = |a: &Wta| -> Result<Vec<f64>> {
        let w = test
            .iter()
            .map(|t| a.evaluate(t))
            .collect::<Result<Vec<_>>>()?;
        let total: f64 = w.iter().sum();
        let out: Vec<f64> = w.iter().map(|x| x / total).collect();
        if let Some((index, _)) = out
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
        {
            return Err(Error::NonPositiveWeight {
                index,
                weight: w[index],
            });
        }
        Ok(out)
    };
    let p = normalized(reference)?;
    let q = normalized(model)?;
    let h: f64 = p.iter().zip(&q).map(|(p, q)| p * q.log2()).sum();
    Ok((-h).exp2())
}

/// Finite block of the Hankel matrix, rows and columns in enumeration order.
#[derive(Clone, Debug, PartialEq)]
pub struct HankelBlock {
    pub rows: Vec<Context>,
    pub cols: Vec<Tree>,
    pub entries: DMatrix<f64>,
}

impl HankelBlock {
    /// Non-increasing.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut sv: Vec<f64> = self.entries.singular_values().iter().copied().collect();
        sv.sort_by(|x, y| y.total_cmp(x));
        sv
    }

    /// Singular values above `rel_cutoff` times the largest.
    pub fn numerical_rank(&self, rel_cutoff: f64) -> usize {
        numerical_rank(&self.singular_values(), rel_cutoff)
    }
}

pub fn numerical_rank(sorted_sv: &[f64], rel_cutoff: f64) -> usize {
    match sorted_sv.first() {
        Some(&top) if top > 0.0 => sorted_sv.iter().filter(|&&s| s > rel_cutoff * top).count(),
        _ => 0,
    }
}

pub fn hankel_block(a: &Wta, max_context_size: usize, max_tree_size: usize) -> Result<HankelBlock> {
    let rows = enumerate_contexts_capped(a.alphabet(), max_context_size, DEFAULT_ENUMERATION_CAP)?;
    let cols = enumerate_trees_capped(a.alphabet(), max_tree_size, DEFAULT_ENUMERATION_CAP)?;
    let cells = rows.len().saturating_mul(cols.len());
    if cells > BRUTE_FORCE_TREE_CAP {
        return Err(Error::CapExceeded {
            requested: cells,
            cap: BRUTE_FORCE_TREE_CAP,
        });
    }
    let row_vecs = rows
        .iter()
        .map(|c| a.context_vector(c))
        .collect::<Result<Vec<_>>>()?;
    let col_vecs = cols
        .iter()
        .map(|t| a.leaf_to_root_vector(t))
        .collect::<Result<Vec<_>>>()?;
    let entries = DMatrix::from_fn(rows.len(), cols.len(), |i, j| row_vecs[i].dot(&col_vecs[j]));
    Ok(HankelBlock {
        rows,
        cols,
        entries,
    })
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Singular values of the Hankel block over all contexts of size at most
/// `max_context_size` and trees of size at most `max_tree_size`, without
/// materializing it. The block factors as `P S` with finite Grams
/// `P^T P = G_C` and `S S^T = G_T`, so its nonzero singular values are those
/// of `G_C^(1/2) G_T^(1/2)`.
pub fn hankel_singular_values(a: &Wta, max_context_size: usize, max_tree_size: usize) -> Vec<f64> {
    let (trees, contexts) = graded_grams(a, max_context_size.max(max_tree_size));
    let n = a.n();
    let g_t = trees[..=max_tree_size]
        .iter()
        .fold(DMatrix::zeros(n, n), |acc, m| acc + m);
    let g_c = contexts[..=max_context_size]
        .iter()
        .fold(DMatrix::zeros(n, n), |acc, m| acc + m);
    let mut sv: Vec<f64> = (psd_sqrt(&g_c) * psd_sqrt(&g_t))
        .singular_values()
        .iter()
        .copied()
        .collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

fn catalan(m: usize) -> f64 {
    (0..m).fold(1.0, |c, k| c * 2.0 * (2 * k + 1) as f64 / (k + 2) as f64)
}

fn check_tree_count(alphabet_size: usize, max_size: usize) -> Result<()> {
    if max_size > DEFAULT_ENUMERATION_CAP {
        return Err(Error::CapExceeded {
            requested: max_size,
            cap: DEFAULT_ENUMERATION_CAP,
        });
    }
    let total: f64 = (0..=max_size)
        .map(|m| catalan(m) * (alphabet_size as f64).powi(m as i32 + 1))
        .sum();
    if total > BRUTE_FORCE_TREE_CAP as f64 {
        return Err(Error::CapExceeded {
            requested: total as usize,
            cap: BRUTE_FORCE_TREE_CAP,
        });
    }
    Ok(())
}

/// `omega(t)` for every tree, grouped by size and packed `n` values per tree.
/// Trees are never built, so memory is `n` floats per tree. Within a size,
/// trees come in generation order (left size, then left tree, then right
/// tree), not the sorted order of [`crate::trees::trees_by_size`].
pub fn tree_vectors_by_size(a: &Wta, max_size: usize) -> Result<Vec<Vec<f64>>> {
    check_tree_count(a.alphabet().len(), max_size)?;
    let n = a.n();
    let t = a.transition();
    let mut levels: Vec<Vec<f64>> = vec![a
        .terminals()
        .iter()
        .flat_map(|w| w.iter().copied())
        .collect()];
    for m in 1..=max_size {
        let mut level = Vec::new();
        for l in 0..m {
            for x in levels[l].chunks(n) {
                // mx(i, k) = sum_j T(i, j, k) x(j)
                let mx = t.contract_second(&DVector::from_column_slice(x));
                for y in levels[m - 1 - l].chunks(n) {
                    level.extend((0..n).map(|i| (0..n).map(|k| mx[(i, k)] * y[k]).sum::<f64>()));
                }
            }
        }
        levels.push(level);
    }
    Ok(levels)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BruteForceSum {
    pub partial: f64,
    /// Estimated sum over the trees larger than the cutoff.
    pub tail_bound: f64,
    /// `sum f(t)^2` over the trees of each size.
    pub by_size: Vec<f64>,
}

/// `sum_{size(t) <= max_size} f(t)^2` with a geometric tail estimate.
///
/// The tail is `E r / (1 - r)`, where `r` is the larger of the Jacobian
/// spectral radius and `1 / gamma*^2`, and `E` is the largest size class
/// carried forward to size `K` at that rate.
pub fn brute_force_sum_squares(a: &Wta, max_size: usize) -> Result<BruteForceSum> {
    let levels = tree_vectors_by_size(a, max_size)?;
    let n = a.n();
    let by_size: Vec<f64> = levels
        .iter()
        .map(|level| {
            level
                .chunks(n)
                .map(|w| {
                    a.alpha()
                        .iter()
                        .zip(w)
                        .map(|(x, y)| x * y)
                        .sum::<f64>()
                        .powi(2)
                })
                .sum()
        })
        .collect();
    let partial = by_size.iter().sum();
    let tail_bound = geometric_tail(a, &by_size);
    Ok(BruteForceSum {
        partial,
        tail_bound,
        by_size,
    })
}

// Per-size masses behave like `m^(-3/2) r^m` with `r = 1 / gamma*^2`, the
// inverse radius of convergence. The bracket end returned by the bisection is
// below `gamma*`, so `r` errs high. The last masses can oscillate with size
// parity, so the base is the envelope of every observed mass projected to
// size `k` under that decay law.
fn geometric_tail(a: &Wta, by_size: &[f64]) -> f64 {
    let k = by_size.len() - 1;
    if a.transition().as_slice().iter().all(|&x| x == 0.0) || by_size.iter().all(|&m| m == 0.0) {
        return 0.0;
    }
    let opts = SolverOptions::default();
    let spectral = match tree_gram_fixed_point(a, &opts) {
        Ok((s, _)) => estimate_contraction(a, &s).rho,
        Err(_) => return f64::INFINITY,
    };
    let gamma = match max_convergent_gamma(a, &opts) {
        Ok(g) => g,
        Err(Error::NoUpperBracket { last_convergent }) => last_convergent,
        Err(_) => return f64::INFINITY,
    };
    let r = spectral.max(gamma.powi(-2));
    if r >= 1.0 {
        return f64::INFINITY;
    }
    let envelope = by_size
        .iter()
        .enumerate()
        .map(|(j, m)| m * r.powi((k - j) as i32) * ((j + 1) as f64 / (k + 1) as f64).powf(1.5))
        .fold(0.0, f64::max);
    envelope * r / (1.0 - r)
}

/// The `2n`-state automaton computing `f_A - f_B`.
pub fn difference_automaton(a: &Wta, b: &Wta) -> Result<Wta> {
    if a.alphabet() != b.alphabet() {
        return Err(Error::AlphabetMismatch);
    }
    let (na, nb) = (a.n(), b.n());
    let dim = na + nb;
    let ta = a.transition();
    let tb = b.transition();
    let transition = Tensor3::from_fn([dim, dim, dim], |i, j, k| {
        if i < na && j < na && k < na {
            ta.get(i, j, k)
        } else if i >= na && j >= na && k >= na {
            tb.get(i - na, j - na, k - na)
        } else {
            0.0
        }
    });
    let stack = |x: &DVector<f64>, y: &DVector<f64>| {
        DVector::from_iterator(dim, x.iter().chain(y.iter()).copied())
    };
    Wta::new(
        a.alphabet().clone(),
        stack(a.alpha(), &-b.alpha()),
        transition,
        a.terminals()
            .iter()
            .zip(b.terminals())
            .map(|(x, y)| stack(x, y))
            .collect(),
    )
}

/// Enumerated `sum (f_A - f_B)^2` over trees up to `max_size`, with tail.
pub fn brute_force_l2_squared(a: &Wta, b: &Wta, max_size: usize) -> Result<BruteForceSum> {
    brute_force_sum_squares(&difference_automaton(a, b)?, max_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::Alphabet;

    fn leaf_only(c: f64) -> Wta {
        Wta::new(
            Alphabet::new(&["a"]).unwrap(),
            DVector::from_element(1, 1.0),
            Tensor3::zeros(1, 1, 1),
            vec![DVector::from_element(1, c)],
        )
        .unwrap()
    }

    fn scalar(p: f64, c: f64) -> Wta {
        Wta::new(
            Alphabet::new(&["a"]).unwrap(),
            DVector::from_element(1, 1.0),
            Tensor3::from_vec([1, 1, 1], vec![p]).unwrap(),
            vec![DVector::from_element(1, c)],
        )
        .unwrap()
    }

    #[test]
    fn one_tree_series_distance() {
        let d = l2_distance(&leaf_only(0.5), &leaf_only(0.3), &SolverOptions::default()).unwrap();
        assert!((d - 0.2).abs() < 1e-12);
        let a = scalar(0.2, 0.5);
        assert!(l2_distance(&a, &a, &SolverOptions::default()).unwrap() <= 1e-7);
    }

    #[test]
    fn leaf_only_brute_force() {
        let r = brute_force_sum_squares(&leaf_only(0.5), 4).unwrap();
        assert_eq!(r.partial, 0.25);
        assert_eq!(r.tail_bound, 0.0);
    }

    #[test]
    fn scalar_brute_force_approaches_gram() {
        let a = scalar(0.2, 0.5);
        let s = (1.0 - 0.96f64.sqrt()) / 0.08;
        let r = brute_force_sum_squares(&a, 4).unwrap();
        assert!(r.partial <= s + 1e-10);
        let missing = s - r.partial;
        assert!(missing <= r.tail_bound && r.tail_bound <= 4.0 * missing);
        assert!(r.by_size.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn hankel_single_entry() {
        let h = hankel_block(&leaf_only(0.5), 0, 0).unwrap();
        assert_eq!(h.entries.shape(), (1, 1));
        assert_eq!(h.entries[(0, 0)], 0.5);
    }

    #[test]
    fn perplexity_uniform_and_errors() {
        let a = scalar(0.2, 0.5);
        let trees = crate::trees::enumerate_trees(a.alphabet(), 3).unwrap();
        let size3: Vec<Tree> = trees.into_iter().filter(|t| t.size() == 3).collect();
        assert_eq!(size3.len(), 5);
        assert!((perplexity(&a, &a, &size3).unwrap() - 5.0).abs() < 1e-12);
        assert!(matches!(perplexity(&a, &a, &[]), Err(Error::EmptyTestSet)));
        let mixed = vec![Tree::Leaf(0), Tree::node(Tree::Leaf(0), Tree::Leaf(0))];
        assert!(matches!(
            perplexity(&scalar(-0.2, 0.5), &a, &mixed),
            Err(Error::NonPositiveWeight { index: 1, .. })
        ));
    }
}
