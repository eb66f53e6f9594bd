//! Gram matrices of the Hankel rank factorization.
//!
//! For an automaton `A` with tree vectors `omega(t)` and context vectors
//! `alpha(c)`, the tree Gram is `G_T = sum_t omega(t) omega(t)^T` and the context
//! Gram is `G_C = sum_c alpha(c) alpha(c)^T`. `G_T` is the limit of the
//! iteration `s <- T2(I, s, s) + sum_sigma omega_sigma (x) omega_sigma` started at
//! zero, where `T2 = T (x) T`. `G_C` then follows from one linear solve with the
//! Jacobian `E = T2(I, s, I) + T2(I, I, s)` of that map.
//!
//! The Kronecker-squared tensor is never materialized. Writing `s` as an
//! `n x n` matrix `S` and `A_i = T(i, :, :)`, the map is
//! `F(S)(i, i') = <A_i, S A_i' S^T>`, which costs `O(n^4)` per step instead of
//! `O(n^6)`. The same expressions with two different automata give the cross
//! Gram `sum_t omega_A(t) omega_B(t)^T` used for l2 distances.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::wta::Wta;

/// Largest `n^2` for which the Jacobian is assembled densely and factored.
pub const DENSE_SYSTEM_LIMIT: usize = 4096;

/// Consecutive non-decreasing residuals that count as divergence.
const STAGNATION_WINDOW: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Absolute bound on `||F(s) - s||_2`.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Iterates with a larger Frobenius norm are reported as divergent.
    pub divergence_cap: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 100_000,
            divergence_cap: 1e12,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_iterations == 0 || !(self.divergence_cap > 0.0) {
            return Err(Error::InvalidOptions(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub final_residual: f64,
    /// Ratio of the last two residuals; estimates the linear rate.
    pub contraction_estimate: f64,
    pub diverged: bool,
    /// `||F(s_k) - s_k||_2` for every iteration, in order.
    pub residuals: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GramPair {
    /// `G_T`, indexed by states.
    pub g_trees: DMatrix<f64>,
    /// `G_C`.
    pub g_contexts: DMatrix<f64>,
    pub report: ConvergenceReport,
}

/// Column-major `vec`.
pub fn vectorize(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vectorize`]: the first `rows` entries form the first column.
pub fn reshape(v: &DVector<f64>, rows: usize) -> DMatrix<f64> {
    assert_eq!(v.len() % rows, 0);
    DMatrix::from_column_slice(rows, v.len() / rows, v.as_slice())
}

fn square_side(v: &DVector<f64>) -> usize {
    let n = (v.len() as f64).sqrt().round() as usize;
    assert_eq!(n * n, v.len(), "vector length is not a perfect square");
    n
}

/// The bilinear pieces shared by the fixed-point map and its Jacobian.
struct PairOperator {
    left: Vec<DMatrix<f64>>,
    right: Vec<DMatrix<f64>>,
    leaves: DMatrix<f64>,
}

impl PairOperator {
    fn new(a: &Wta, b: &Wta) -> Result<Self> {
        if a.alphabet() != b.alphabet() {
            return Err(Error::AlphabetMismatch);
        }
        let left = (0..a.n()).map(|i| a.transition().slice_first(i)).collect();
        let right = (0..b.n()).map(|i| b.transition().slice_first(i)).collect();
        let mut leaves = DMatrix::zeros(a.n(), b.n());
        for (wa, wb) in a.terminals().iter().zip(b.terminals()) {
            leaves += wa * wb.transpose();
        }
        Ok(Self {
            left,
            right,
            leaves,
        })
    }

    /// `Phi(X, Y)(i, i') = sum A_i(j,k) B_i'(j',k') X(j,j') Y(k,k')`.
    fn bilinear(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
        let yt = y.transpose();
        let mut out = DMatrix::zeros(self.left.len(), self.right.len());
        for (ip, b) in self.right.iter().enumerate() {
            let inner = x * b * &yt;
            for (i, a) in self.left.iter().enumerate() {
                out[(i, ip)] = a.dot(&inner);
            }
        }
        out
    }

    fn map(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        &self.leaves + self.bilinear(s, s)
    }

    /// `E h` at the point `s`.
    fn jacobian(&self, s: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
        self.bilinear(h, s) + self.bilinear(s, h)
    }

    /// `E^T y` at the point `s`:
    /// `sum_{i,i'} y(i,i') (A_i S B_i'^T + A_i^T S B_i')`.
    fn jacobian_transpose(&self, s: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
        let na = self.left.len();
        let nb = self.right.len();
        let mut out = DMatrix::zeros(s.nrows(), s.ncols());
        for (i, a) in self.left.iter().enumerate() {
            let mut z = DMatrix::zeros(nb, nb);
            for ip in 0..nb {
                let w = y[(i, ip)];
                if w != 0.0 {
                    z += &self.right[ip] * w;
                }
            }
            if z.iter().all(|v| *v == 0.0) {
                continue;
            }
            out += a * s * z.transpose() + a.transpose() * s * &z;
        }
        debug_assert_eq!(out.nrows(), na);
        out
    }

    /// Dense `E` in the column-major `vec` basis.
    fn jacobian_dense(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let na = self.left.len();
        let nb = self.right.len();
        let dim = na * nb;
        let mut e = DMatrix::zeros(dim, dim);
        for (ip, b) in self.right.iter().enumerate() {
            let sb_t = s * b.transpose();
            let sb = s * b;
            for (i, a) in self.left.iter().enumerate() {
                let row_block = a * &sb_t + a.transpose() * &sb;
                let row = i + na * ip;
                for kp in 0..nb {
                    for k in 0..na {
                        e[(row, k + na * kp)] = row_block[(k, kp)];
                    }
                }
            }
        }
        e
    }
}

/// `F(v) = T2(I, v, v) + sum_sigma omega_sigma (x) omega_sigma` on column-major vectors.
pub fn fixed_point_map(a: &Wta, s: &DVector<f64>) -> DVector<f64> {
    let op = PairOperator::new(a, a).expect("same automaton");
    vectorize(&op.map(&reshape(s, a.n())))
}

fn iterate(op: &PairOperator, opts: &SolverOptions) -> Result<(DMatrix<f64>, ConvergenceReport)> {
    opts.validate()?;
    let mut s = DMatrix::zeros(op.left.len(), op.right.len());
    let mut residuals = Vec::new();
    let mut stagnant = 0usize;
    for k in 1..=opts.max_iterations {
        let next = op.map(&s);
        let residual = (&next - &s).norm();
        let norm = next.norm();
        s = next;
        if !residual.is_finite() || !norm.is_finite() || norm > opts.divergence_cap {
            return Err(Error::Diverged {
                iterations: k,
                reason: format!(
                    "iterate norm {norm:e} exceeds cap {:e}",
                    opts.divergence_cap
                ),
            });
        }
        if let Some(&prev) = residuals.last() {
            if residual >= prev {
                stagnant += 1;
            } else {
                stagnant = 0;
            }
        }
        residuals.push(residual);
        // Rounding in F puts a floor of a few ulps of ||s|| under the residual.
        let floor = 16.0 * f64::EPSILON * norm;
        if residual <= opts.tolerance.max(floor) {
            let contraction_estimate = match residuals.len() {
                0 | 1 => 0.0,
                m => {
                    let before = residuals[m - 2];
                    if before > 0.0 {
                        residual / before
                    } else {
                        0.0
                    }
                }
            };
            return Ok((
                s,
                ConvergenceReport {
                    iterations: k,
                    final_residual: residual,
                    contraction_estimate,
                    diverged: false,
                    residuals,
                },
            ));
        }
        if stagnant >= STAGNATION_WINDOW {
            return Err(Error::Diverged {
                iterations: k,
                reason: format!(
                    "residual non-decreasing for {STAGNATION_WINDOW} iterations (at {residual:e})"
                ),
            });
        }
    }
    Err(Error::MaxIterations {
        iterations: opts.max_iterations,
        residual: residuals.last().copied().unwrap_or(f64::NAN),
    })
}

/// Tree Gram `s = vec(G_T)` by plain fixed-point iteration from zero.
pub fn tree_gram_fixed_point(
    a: &Wta,
    opts: &SolverOptions,
) -> Result<(DVector<f64>, ConvergenceReport)> {
    let op = PairOperator::new(a, a)?;
    let (s, report) = iterate(&op, opts)?;
    Ok((vectorize(&s), report))
}

/// `sum_t omega_A(t) omega_B(t)^T` as an `n_A x n_B` matrix.
pub fn cross_tree_gram(
    a: &Wta,
    b: &Wta,
    opts: &SolverOptions,
) -> Result<(DMatrix<f64>, ConvergenceReport)> {
    let op = PairOperator::new(a, b)?;
    iterate(&op, opts)
}

/// Context Gram `q` from a converged tree Gram `s`, via
/// `(I - E)^T q = alpha (x) alpha`.
pub fn context_gram(a: &Wta, s: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.n();
    assert_eq!(square_side(s), n);
    let op = PairOperator::new(a, a)?;
    let s_mat = reshape(s, n);
    let rhs = a.alpha() * a.alpha().transpose();
    let q = if n * n <= DENSE_SYSTEM_LIMIT {
        solve_dense(&op, &s_mat, &rhs)?
    } else {
        solve_neumann(&op, &s_mat, &rhs)?
    };
    Ok(vectorize(&q))
}

fn solve_dense(op: &PairOperator, s: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = s.nrows();
    let e = op.jacobian_dense(s);
    let system = (DMatrix::identity(n * n, n * n) - e).transpose();
    let lu = system.lu();
    let u = lu.u();
    let diag = u.diagonal().abs();
    let (lo, hi) = (diag.min(), diag.max());
    if !(hi > 0.0) || lo <= 1e-14 * hi {
        return Err(Error::SingularSystem);
    }
    let x = lu.solve(&vectorize(rhs)).ok_or(Error::SingularSystem)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(reshape(&x, n))
}

// q = b + E^T q, converging whenever rho(E) < 1.
fn solve_neumann(op: &PairOperator, s: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let opts = SolverOptions::default();
    let mut q = rhs.clone();
    for _ in 0..opts.max_iterations {
        let next = rhs + op.jacobian_transpose(s, &q);
        let delta = (&next - &q).norm();
        let norm = next.norm();
        q = next;
        if !norm.is_finite() || norm > opts.divergence_cap {
            return Err(Error::SingularSystem);
        }
        if delta <= opts.tolerance.max(16.0 * f64::EPSILON * norm) {
            return Ok(q);
        }
    }
    Err(Error::SingularSystem)
}

/// Both Gram matrices, reshaped column-major and symmetrized.
pub fn gram_matrices(a: &Wta, opts: &SolverOptions) -> Result<GramPair> {
    let (s, report) = tree_gram_fixed_point(a, opts)?;
    let q = context_gram(a, &s)?;
    let n = a.n();
    let sym = |m: DMatrix<f64>| (&m + m.transpose()) * 0.5;
    Ok(GramPair {
        g_trees: sym(reshape(&s, n)),
        g_contexts: sym(reshape(&q, n)),
        report,
    })
}

/// `E^T` applied to `y` (column-major vectors); exposed for diagnostics.
pub fn jacobian_transpose_apply(a: &Wta, s: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    let n = a.n();
    let op = PairOperator::new(a, a).expect("same automaton");
    vectorize(&op.jacobian_transpose(&reshape(s, n), &reshape(y, n)))
}

/// `E` applied to `h` (column-major vectors).
pub fn jacobian_apply(a: &Wta, s: &DVector<f64>, h: &DVector<f64>) -> DVector<f64> {
    let n = a.n();
    let op = PairOperator::new(a, a).expect("same automaton");
    vectorize(&op.jacobian(&reshape(s, n), &reshape(h, n)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContractionEstimate {
    /// Spectral radius estimate of the Jacobian `E`.
    pub rho: f64,
    pub converged: bool,
}

const POWER_STEPS: usize = 200;
const POWER_TOLERANCE: f64 = 1e-8;
/// Below this `n^2`, a power iteration that fails to settle (complex or
/// tied dominant eigenvalues) is replaced by a dense eigenvalue computation.
const DENSE_EIGEN_LIMIT: usize = 1024;

/// Spectral radius of `E = T2(I, s, I) + T2(I, I, s)` by power iteration.
pub fn estimate_contraction(a: &Wta, s: &DVector<f64>) -> ContractionEstimate {
    let n = a.n();
    let op = PairOperator::new(a, a).expect("same automaton");
    let s_mat = reshape(s, n);
    let dim = n * n;
    let mut v = DMatrix::from_fn(n, n, |i, j| 1.0 + 0.01 * ((i + n * j) % 7) as f64);
    v /= v.norm();
    let mut prev = f64::NAN;
    for _ in 0..POWER_STEPS {
        let w = op.jacobian(&s_mat, &v);
        let lambda = w.norm();
        if lambda == 0.0 || !lambda.is_finite() {
            return ContractionEstimate {
                rho: if lambda == 0.0 { 0.0 } else { f64::INFINITY },
                converged: lambda == 0.0,
            };
        }
        if (lambda - prev).abs() <= POWER_TOLERANCE * lambda {
            return ContractionEstimate {
                rho: lambda,
                converged: true,
            };
        }
        prev = lambda;
        v = w / lambda;
    }
    if dim <= DENSE_EIGEN_LIMIT {
        let e = op.jacobian_dense(&s_mat);
        let rho = e
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        return ContractionEstimate {
            rho,
            converged: true,
        };
    }
    ContractionEstimate {
        rho: prev,
        converged: false,
    }
}

/// Largest `gamma` (to relative width `1e-3`) for which
/// `t -> gamma^size(t) f(t)` still passes the fixed-point iteration.
pub fn max_convergent_gamma(a: &Wta, opts: &SolverOptions) -> Result<f64> {
    const UPPER: f64 = (1u64 << 20) as f64;
    const WIDTH: f64 = 1e-3;
    tree_gram_fixed_point(a, opts)?;
    let converges = |gamma: f64| tree_gram_fixed_point(&a.scale_gamma(gamma), opts).is_ok();
    let mut lo = 1.0;
    let mut hi = 2.0;
    loop {
        if !converges(hi) {
            break;
        }
        lo = hi;
        if hi >= UPPER {
            return Err(Error::NoUpperBracket {
                last_convergent: lo,
            });
        }
        hi *= 2.0;
    }
    while hi - lo > WIDTH * lo {
        let mid = 0.5 * (lo + hi);
        if converges(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Exact finite sums by size: entry `m` of the first vector is
/// `sum_{size(t) = m} omega(t) omega(t)^T`, entry `m` of the second is
/// `sum_{size(c) = m} alpha(c) alpha(c)^T`.
pub fn graded_grams(a: &Wta, max_size: usize) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let op = PairOperator::new(a, a).expect("same automaton");
    let mut trees = vec![op.leaves.clone()];
    for m in 1..=max_size {
        let mut acc = DMatrix::zeros(a.n(), a.n());
        for l in 0..m {
            acc += op.bilinear(&trees[l], &trees[m - 1 - l]);
        }
        trees.push(acc);
    }
    // A context of size m is a context of size l with one more node above
    // the hole, whose other child is a tree of size m - 1 - l.
    let mut contexts = vec![a.alpha() * a.alpha().transpose()];
    for m in 1..=max_size {
        let mut acc = DMatrix::zeros(a.n(), a.n());
        for l in 0..m {
            acc += op.jacobian_transpose(&trees[m - 1 - l], &contexts[l]);
        }
        contexts.push(acc);
    }
    (trees, contexts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::Alphabet;
    use crate::wta::Tensor3;

    fn scalar(p: f64, c: f64) -> Wta {
        Wta::new(
            Alphabet::new(&["a"]).unwrap(),
            DVector::from_element(1, 1.0),
            Tensor3::from_vec([1, 1, 1], vec![p]).unwrap(),
            vec![DVector::from_element(1, c)],
        )
        .unwrap()
    }

    // Smaller root of p^2 s^2 - s + c^2 = 0.
    fn scalar_root(p: f64, c: f64) -> f64 {
        (1.0 - (1.0 - 4.0 * p * p * c * c).sqrt()) / (2.0 * p * p)
    }

    #[test]
    fn zero_transition_converges_immediately() {
        let (s, report) =
            tree_gram_fixed_point(&scalar(0.0, 0.5), &SolverOptions::default()).unwrap();
        assert_eq!(s[0], 0.25);
        // First step reaches the fixed point, second confirms it.
        assert!(report.iterations <= 2);
        let q = context_gram(&scalar(0.0, 0.5), &s).unwrap();
        assert_eq!(q[0], 1.0);
    }

    #[test]
    fn scalar_fixture_closed_forms() {
        let a = scalar(0.2, 0.5);
        let (s, report) = tree_gram_fixed_point(&a, &SolverOptions::default()).unwrap();
        let root = scalar_root(0.2, 0.5);
        assert!((root - 0.2525513).abs() < 1e-7);
        assert!((s[0] - root).abs() < 1e-12);
        assert!(!report.diverged);
        assert!(report.final_residual <= 1e-12);
        let q = context_gram(&a, &s).unwrap();
        let e = 2.0 * 0.04 * root;
        assert!((q[0] - 1.0 / (1.0 - e)).abs() < 1e-12);
        let rho = estimate_contraction(&a, &s);
        assert!(rho.converged);
        assert!((rho.rho - e).abs() < 1e-10);
    }

    #[test]
    fn divergent_scalar() {
        let err = tree_gram_fixed_point(&scalar(1.0, 1.0), &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
        let est = estimate_contraction(&scalar(1.0, 1.0), &DVector::from_element(1, 1.0));
        assert!(est.rho >= 1.0);
    }

    #[test]
    fn max_iterations_reported() {
        let opts = SolverOptions {
            max_iterations: 3,
            ..SolverOptions::default()
        };
        assert!(matches!(
            tree_gram_fixed_point(&scalar(0.2, 0.5), &opts),
            Err(Error::MaxIterations { iterations: 3, .. })
        ));
    }

    #[test]
    fn gamma_threshold_scalar() {
        let g = max_convergent_gamma(&scalar(0.2, 0.5), &SolverOptions::default()).unwrap();
        assert!((4.99..=5.01).contains(&g), "gamma {g}");
        assert!(matches!(
            max_convergent_gamma(&scalar(0.0, 0.5), &SolverOptions::default()),
            Err(Error::NoUpperBracket { .. })
        ));
    }

    #[test]
    fn zero_transition_has_zero_contraction() {
        let a = scalar(0.0, 0.5);
        let est = estimate_contraction(&a, &DVector::from_element(1, 0.25));
        assert_eq!(est.rho, 0.0);
    }

    #[test]
    fn reshape_is_column_major() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let m = reshape(&v, 2);
        assert_eq!(m[(1, 0)], 2.0);
        assert_eq!(m[(0, 1)], 3.0);
        assert_eq!(vectorize(&m), v);
    }

    #[test]
    fn dense_and_matrix_free_jacobians_agree() {
        let a = Wta::new(
            Alphabet::new(&["a", "b"]).unwrap(),
            DVector::from_vec(vec![0.7, -0.2]),
            Tensor3::from_fn([2, 2, 2], |i, j, k| {
                0.05 * (1.0 + i as f64) - 0.07 * (j * k) as f64 + 0.02 * k as f64
            }),
            vec![
                DVector::from_vec(vec![0.3, 0.1]),
                DVector::from_vec(vec![-0.2, 0.4]),
            ],
        )
        .unwrap();
        let (s, _) = tree_gram_fixed_point(&a, &SolverOptions::default()).unwrap();
        let op = PairOperator::new(&a, &a).unwrap();
        let s_mat = reshape(&s, 2);
        let dense = op.jacobian_dense(&s_mat);
        let h = DVector::from_vec(vec![0.3, -1.0, 0.5, 2.0]);
        let direct = jacobian_apply(&a, &s, &h);
        assert!((&dense * &h - direct).norm() < 1e-14);
        let y = DVector::from_vec(vec![1.0, 0.2, -0.4, 0.9]);
        let trans = jacobian_transpose_apply(&a, &s, &y);
        assert!((dense.transpose() * &y - trans).norm() < 1e-14);
        let q_dense = solve_dense(&op, &s_mat, &(a.alpha() * a.alpha().transpose())).unwrap();
        let q_iter = solve_neumann(&op, &s_mat, &(a.alpha() * a.alpha().transpose())).unwrap();
        assert!((q_dense - q_iter).norm() < 1e-11);
    }
}
