//! Singular value canonical form, truncation, and error certificates.
//!
//! In the canonical form both Gram matrices equal `diag(s_1, ..., s_n)`, the
//! singular values of the Hankel matrix in non-increasing order. Dropping the
//! trailing states gives the truncation, and the bound calculators turn the
//! first dropped singular value into per-tree and cumulative error bounds.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::gram::{gram_matrices, SolverOptions};
use crate::trees::Tree;
use crate::wta::Wta;

/// Gram eigenvalues below this fraction of the largest are treated as zero.
pub const RANK_CUTOFF: f64 = 1e-10;

/// Slack added to every parameter bound in [`verify_svta`].
pub const BOUND_SLACK: f64 = 1e-8;

/// Relative tolerance for the fixed-point identities in [`verify_svta`].
pub const IDENTITY_TOLERANCE: f64 = 1e-6;

/// Values above this are reported as `+inf` by the bound calculators.
pub const BOUND_OVERFLOW: f64 = 1e300;

#[derive(Clone, Debug, PartialEq)]
pub struct Svta {
    pub automaton: Wta,
    pub singular_values: Vec<f64>,
    pub effective_rank: usize,
}

impl Svta {
    /// Wrap an automaton already in canonical form, e.g. one read back from
    /// disk. Only the shape of `singular_values` is checked.
    pub fn from_parts(automaton: Wta, singular_values: Vec<f64>) -> Result<Self> {
        if singular_values.len() != automaton.n() {
            return Err(Error::InvalidAutomaton(format!(
                "{} singular values for {} states",
                singular_values.len(),
                automaton.n()
            )));
        }
        if singular_values.iter().any(|s| !(s.is_finite() && *s > 0.0))
            || singular_values.windows(2).any(|w| w[0] < w[1])
        {
            return Err(Error::InvalidAutomaton(
                "singular values must be positive and non-increasing".into(),
            ));
        }
        let effective_rank = automaton.n();
        Ok(Self {
            automaton,
            singular_values,
            effective_rank,
        })
    }
}

// Largest-magnitude entry of each column made positive (first index wins ties).
fn fix_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

// Eigenpairs sorted by decreasing eigenvalue, eigenvectors sign-normalized.
fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = eig.eigenvectors.select_columns(&order);
    fix_column_signs(&mut vectors);
    (values, vectors)
}

fn retained(values: &DVector<f64>) -> usize {
    let top = values.iter().copied().fold(0.0, f64::max);
    if !(top > 0.0) {
        return 0;
    }
    values.iter().filter(|&&v| v > RANK_CUTOFF * top).count()
}

/// Rotate `a` into singular value canonical form.
///
/// Non-minimal input is first projected onto the retained eigenspaces of the
/// tree Gram and then the context Gram, repeating until both are full rank.
pub fn compute_svta(a: &Wta, opts: &SolverOptions) -> Result<Svta> {
    let mut cur = a.clone();
    let (dt, vt, dc, vc) = loop {
        let grams = gram_matrices(&cur, opts)?;
        let (dt, vt) = sorted_eigen(&grams.g_trees);
        let rt = retained(&dt);
        if rt == 0 {
            return Err(Error::RankZero);
        }
        if rt < cur.n() {
            cur = cur.project_onto(&vt.columns(0, rt).into_owned())?;
            continue;
        }
        let (dc, vc) = sorted_eigen(&grams.g_contexts);
        let rc = retained(&dc);
        if rc == 0 {
            return Err(Error::RankZero);
        }
        if rc < cur.n() {
            cur = cur.project_onto(&vc.columns(0, rc).into_owned())?;
            continue;
        }
        break (dt, vt, dc, vc);
    };

    let sqrt_t = DMatrix::from_diagonal(&dt.map(f64::sqrt));
    let sqrt_c = DMatrix::from_diagonal(&dc.map(f64::sqrt));
    let inv_sqrt_c = DMatrix::from_diagonal(&dc.map(|v| 1.0 / v.sqrt()));
    let m = &sqrt_c * vc.transpose() * &vt * &sqrt_t;

    let svd = m.svd(true, false);
    let u_raw = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut u = u_raw.select_columns(&order);
    fix_column_signs(&mut u);
    if sv.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::RankZero);
    }

    let sqrt_d = DMatrix::from_diagonal(&DVector::from_iterator(
        sv.len(),
        sv.iter().map(|s| s.sqrt()),
    ));
    let q = vc * inv_sqrt_c * u * sqrt_d;
    let automaton = cur.conjugate(&q)?;
    Ok(Svta {
        effective_rank: automaton.n(),
        automaton,
        singular_values: sv,
    })
}

/// Largest integer size (leaf count or size cutoff) for which a bound stays
/// below the target, or `Unbounded` when the truncation is exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SafeSize {
    Bounded(i64),
    Unbounded,
}

impl fmt::Display for SafeSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SafeSize::Bounded(m) => write!(f, "{m}"),
            SafeSize::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl SafeSize {
    /// Whether `size` is at most the guaranteed value.
    pub fn covers(&self, size: usize) -> bool {
        match self {
            SafeSize::Bounded(m) => (size as i64) <= *m,
            SafeSize::Unbounded => true,
        }
    }
}

fn from_log(log_value: f64) -> f64 {
    if log_value > BOUND_OVERFLOW.ln() {
        f64::INFINITY
    } else {
        log_value.exp()
    }
}

/// `n^(2 L - 1) * s_next` for a tree with `leaves` leaves.
pub fn bound_per_tree(s_next: f64, n: usize, leaves: usize) -> f64 {
    assert!(leaves >= 1, "a tree has at least one leaf");
    if s_next == 0.0 {
        return 0.0;
    }
    from_log((2 * leaves - 1) as f64 * (n as f64).ln() + s_next.ln())
}

/// `((4 S n^2)^(M + 1) - 1) / (4 S n^2 - 1) * s_next`, bounding the summed
/// error over all trees of size below `max_size`. Evaluated in the log domain.
pub fn bound_cumulative(s_next: f64, n: usize, alphabet_size: usize, max_size: usize) -> f64 {
    assert!(max_size >= 1);
    if s_next == 0.0 {
        return 0.0;
    }
    let base = 4.0 * alphabet_size as f64 * (n * n) as f64;
    let ln_b = base.ln();
    let e = (max_size + 1) as f64;
    // ln(b^e - 1) = e ln b + ln(1 - b^-e)
    let log_num = e * ln_b + (-(-e * ln_b).exp()).ln_1p();
    from_log(log_num - (base - 1.0).ln() + s_next.ln())
}

// Largest integer strictly below x, shaded down by a relative 1e-12 so that
// rounding in the logarithms can only make the answer more conservative.
fn largest_below(x: f64) -> i64 {
    let shaded = x - 1e-12 * x.abs().max(1.0);
    shaded.ceil() as i64 - 1
}

/// Sizes guaranteed to keep the error below `epsilon`: `single` is a leaf
/// count for the per-tree bound, `cumulative` a size cutoff for the summed
/// bound. Natural logarithms throughout.
pub fn safe_tree_size(
    s_next: f64,
    n: usize,
    alphabet_size: usize,
    epsilon: f64,
) -> (SafeSize, SafeSize) {
    assert!(epsilon > 0.0);
    if s_next == 0.0 {
        return (SafeSize::Unbounded, SafeSize::Unbounded);
    }
    let head = -s_next.ln() + epsilon.ln();
    let single = if n <= 1 {
        SafeSize::Unbounded
    } else {
        SafeSize::Bounded(largest_below(head / (2.0 * (n as f64).ln())))
    };
    let base = 4.0 * alphabet_size as f64 * (n * n) as f64;
    let cumulative = SafeSize::Bounded(largest_below(head / base.ln() - 1.0));
    (single, cumulative)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundConfig {
    pub epsilon: f64,
    /// Per-tree bounds are tabulated for leaf counts `1..=max_leaves`.
    pub max_leaves: usize,
    /// Cumulative bounds are tabulated for cutoffs `1..=max_size`.
    pub max_size: usize,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            max_leaves: 8,
            max_size: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub n: usize,
    pub n_hat: usize,
    pub alphabet_size: usize,
    pub s_next: f64,
    pub epsilon: f64,
    pub per_tree: BTreeMap<usize, f64>,
    pub cumulative: BTreeMap<usize, f64>,
    pub safe_size_single: SafeSize,
    pub safe_size_cumulative: SafeSize,
}

impl BoundReport {
    pub fn new(
        s_next: f64,
        n: usize,
        n_hat: usize,
        alphabet_size: usize,
        cfg: &BoundConfig,
    ) -> Self {
        let per_tree = (1..=cfg.max_leaves)
            .map(|l| (l, bound_per_tree(s_next, n, l)))
            .collect();
        let cumulative = (1..=cfg.max_size)
            .map(|m| (m, bound_cumulative(s_next, n, alphabet_size, m)))
            .collect();
        let (single, cum) = safe_tree_size(s_next, n, alphabet_size, cfg.epsilon);
        Self {
            n,
            n_hat,
            alphabet_size,
            s_next,
            epsilon: cfg.epsilon,
            per_tree,
            cumulative,
            safe_size_single: single,
            safe_size_cumulative: cum,
        }
    }

    /// `kind,size,bound` rows, then the safe sizes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,size,bound\n");
        for (l, b) in &self.per_tree {
            let _ = writeln!(out, "per_tree_leaves,{l},{b:e}");
        }
        for (m, b) in &self.cumulative {
            let _ = writeln!(out, "cumulative_below,{m},{b:e}");
        }
        let _ = writeln!(
            out,
            "safe_single,{},{:e}",
            self.safe_size_single, self.epsilon
        );
        let _ = writeln!(
            out,
            "safe_cumulative,{},{:e}",
            self.safe_size_cumulative, self.epsilon
        );
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "truncation {} -> {} states", self.n, self.n_hat);
        let _ = writeln!(out, "first dropped singular value: {:e}", self.s_next);
        let _ = writeln!(out, "per-tree bound by leaf count:");
        for (l, b) in &self.per_tree {
            let _ = writeln!(out, "  L = {l:>2}: {b:e}");
        }
        let _ = writeln!(out, "cumulative bound over trees of size < M:");
        for (m, b) in &self.cumulative {
            let _ = writeln!(out, "  M = {m:>2}: {b:e}");
        }
        let describe = |s: SafeSize, what: &str| match s {
            SafeSize::Bounded(m) if m < 1 => format!("no {what}"),
            SafeSize::Bounded(m) => format!("{what} up to {m}"),
            SafeSize::Unbounded => format!("every {what}"),
        };
        let _ = writeln!(
            out,
            "error below {:e}: per-tree bound covers {}; cumulative bound covers {}",
            self.epsilon,
            describe(self.safe_size_single, "leaf count"),
            describe(self.safe_size_cumulative, "size cutoff"),
        );
        out
    }
}

/// Keep the `n_hat` leading states with the default [`BoundConfig`].
pub fn truncate_svta(s: &Svta, n_hat: usize) -> Result<(Wta, BoundReport)> {
    truncate_svta_with(s, n_hat, &BoundConfig::default())
}

pub fn truncate_svta_with(s: &Svta, n_hat: usize, cfg: &BoundConfig) -> Result<(Wta, BoundReport)> {
    let n = s.effective_rank;
    if n_hat == 0 || n_hat > n {
        return Err(Error::BadRank {
            requested: n_hat,
            max: n,
        });
    }
    let truncated = s.automaton.truncate(n_hat)?;
    let s_next = s.singular_values.get(n_hat).copied().unwrap_or(0.0);
    let report = BoundReport::new(s_next, n, n_hat, s.automaton.alphabet().len(), cfg);
    Ok((truncated, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    TreeVector,
    Alpha,
    Transition,
    InteractionDecay,
    TreeIdentity,
    ContextIdentity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub kind: CheckKind,
    /// Human-readable location, e.g. `T(0,1,2)` or a tree index.
    pub location: String,
    /// Amount by which the check failed, after tolerances.
    pub excess: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: usize,
    /// Sorted by decreasing excess.
    pub violations: Vec<Violation>,
    /// Largest relative error of the two fixed-point identities.
    pub worst_identity_error: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn worst(&self) -> Option<&Violation> {
        self.violations.first()
    }
}

/// Check the parameter bounds of the canonical form on `sample_trees`, the
/// interaction decay of `T(alpha, I, I)`, and the two fixed-point identities
/// `s_i = sum_x omega_x(i)^2 + sum_jk T(i,j,k)^2 s_j s_k` and
/// `s_i = alpha_i^2 + sum_jk (T(j,i,k)^2 + T(j,k,i)^2) s_j s_k`.
pub fn verify_svta(s: &Svta, sample_trees: &[Tree]) -> Result<VerifyReport> {
    let a = &s.automaton;
    let n = a.n();
    let sv = &s.singular_values;
    let root: Vec<f64> = sv.iter().map(|v| v.sqrt()).collect();
    let t = a.transition();
    let mut report = VerifyReport::default();
    let mut check = |kind: CheckKind, location: &dyn Fn() -> String, value: f64, bound: f64| {
        report.checks += 1;
        let excess = value - bound - BOUND_SLACK;
        if excess > 0.0 || value.is_nan() {
            report.violations.push(Violation {
                kind,
                location: location(),
                excess: if excess.is_nan() {
                    f64::INFINITY
                } else {
                    excess
                },
            });
        }
    };

    for (idx, tree) in sample_trees.iter().enumerate() {
        let w = a.leaf_to_root_vector(tree)?;
        for i in 0..n {
            check(
                CheckKind::TreeVector,
                &|| format!("tree {idx}, state {i}"),
                w[i].abs(),
                root[i],
            );
        }
    }
    for i in 0..n {
        check(
            CheckKind::Alpha,
            &|| format!("alpha({i})"),
            a.alpha()[i].abs(),
            root[i],
        );
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let bound = (root[i] / (root[j] * root[k]))
                    .min(root[j] / (root[i] * root[k]))
                    .min(root[k] / (root[i] * root[j]));
                check(
                    CheckKind::Transition,
                    &|| format!("T({i},{j},{k})"),
                    t.get(i, j, k).abs(),
                    bound,
                );
            }
        }
    }
    let interaction: DMatrix<f64> = DMatrix::from_fn(n, n, |j, k| {
        (0..n).map(|i| a.alpha()[i] * t.get(i, j, k)).sum()
    });
    for j in 0..n {
        for k in 0..n {
            let ratio = sv[j].min(sv[k]) / sv[j].max(sv[k]);
            check(
                CheckKind::InteractionDecay,
                &|| format!("M({j},{k})"),
                interaction[(j, k)].abs(),
                n as f64 * ratio.sqrt(),
            );
        }
    }

    let mut worst = 0.0f64;
    for i in 0..n {
        let mut tree_side: f64 = a.terminals().iter().map(|w| w[i] * w[i]).sum();
        let mut ctx_side = a.alpha()[i] * a.alpha()[i];
        for j in 0..n {
            for k in 0..n {
                let sjk = sv[j] * sv[k];
                tree_side += t.get(i, j, k).powi(2) * sjk;
                ctx_side += (t.get(j, i, k).powi(2) + t.get(j, k, i).powi(2)) * sjk;
            }
        }
        for (kind, value) in [
            (CheckKind::TreeIdentity, tree_side),
            (CheckKind::ContextIdentity, ctx_side),
        ] {
            report.checks += 1;
            let rel = (value - sv[i]).abs() / sv[i];
            worst = worst.max(rel);
            if !(rel <= IDENTITY_TOLERANCE) {
                report.violations.push(Violation {
                    kind,
                    location: format!("state {i}"),
                    excess: if rel.is_nan() {
                        f64::INFINITY
                    } else {
                        rel - IDENTITY_TOLERANCE
                    },
                });
            }
        }
    }
    report.worst_identity_error = worst;
    report
        .violations
        .sort_by(|x, y| y.excess.total_cmp(&x.excess));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::{enumerate_trees, Alphabet};
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

    #[test]
    fn scalar_singular_value() {
        let s = compute_svta(&scalar(0.2, 0.5), &SolverOptions::default()).unwrap();
        let tree_gram = (1.0 - 0.96f64.sqrt()) / 0.08;
        let ctx_gram = 1.0 / (1.0 - 2.0 * 0.04 * tree_gram);
        assert!((s.singular_values[0] - (tree_gram * ctx_gram).sqrt()).abs() < 1e-12);
        assert!((s.singular_values[0] - 0.5076998).abs() < 1e-6);
        let report = verify_svta(&s, &enumerate_trees(s.automaton.alphabet(), 4).unwrap()).unwrap();
        assert!(report.passed(), "{:?}", report.violations);
    }

    #[test]
    fn redundant_states_are_projected_away() {
        // The second state is unreachable from the leaves.
        let a = Wta::new(
            Alphabet::new(&["a"]).unwrap(),
            DVector::from_vec(vec![1.0, 0.7]),
            Tensor3::from_fn([2, 2, 2], |i, j, k| if i + j + k == 0 { 0.2 } else { 0.0 }),
            vec![DVector::from_vec(vec![0.5, 0.0])],
        )
        .unwrap();
        let s = compute_svta(&a, &SolverOptions::default()).unwrap();
        assert_eq!(s.effective_rank, 1);
        assert!((s.singular_values[0] - 0.5076998).abs() < 1e-6);
    }

    #[test]
    fn zero_series_has_no_rank() {
        let a = Wta::new(
            Alphabet::new(&["a"]).unwrap(),
            DVector::from_element(1, 1.0),
            Tensor3::zeros(1, 1, 1),
            vec![DVector::zeros(1)],
        )
        .unwrap();
        assert!(matches!(
            compute_svta(&a, &SolverOptions::default()),
            Err(Error::RankZero)
        ));
    }

    #[test]
    fn bound_plug_ins() {
        assert!((bound_per_tree(1e-6, 2, 3) - 3.2e-5).abs() < 1e-18);
        assert_eq!(bound_per_tree(0.0, 5, 9), 0.0);
        assert!((bound_cumulative(1e-3, 1, 1, 1) - 5e-3).abs() < 1e-15);
        assert_eq!(bound_cumulative(0.0, 3, 2, 4), 0.0);
        assert_eq!(bound_cumulative(1e-3, 211, 50, 200), f64::INFINITY);
        assert_eq!(bound_per_tree(1e-3, 211, 1000), f64::INFINITY);
    }

    #[test]
    fn safe_size_plug_ins() {
        let (single, _) = safe_tree_size(1e-8, 10, 1, 1e-2);
        assert_eq!(single, SafeSize::Bounded(2));
        assert_eq!(
            safe_tree_size(0.0, 3, 2, 1e-2),
            (SafeSize::Unbounded, SafeSize::Unbounded)
        );
        assert_eq!(safe_tree_size(1e-5, 1, 2, 1e-2).0, SafeSize::Unbounded);
        // ln(1e8) / ln(4) - 1 = 12.29
        assert_eq!(safe_tree_size(1e-10, 1, 1, 1e-2).1, SafeSize::Bounded(12));
    }

    #[test]
    fn full_rank_truncation_is_exact() {
        let s = compute_svta(&scalar(0.2, 0.5), &SolverOptions::default()).unwrap();
        let (t, report) = truncate_svta(&s, 1).unwrap();
        assert_eq!(t, s.automaton);
        assert!(report.per_tree.values().all(|b| *b == 0.0));
        assert!(report.cumulative.values().all(|b| *b == 0.0));
        assert!(matches!(truncate_svta(&s, 2), Err(Error::BadRank { .. })));
        assert!(matches!(truncate_svta(&s, 0), Err(Error::BadRank { .. })));
    }
}
