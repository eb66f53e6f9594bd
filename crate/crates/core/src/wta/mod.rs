//! Weighted tree automata `<alpha, T, {omega_sigma}>` over full binary trees.
//!
//! An automaton with `n` states assigns to a tree `t` the weight
//! `f(t) = alpha . omega(t)`, where `omega(sigma) = omega_sigma` on leaves and
//! `omega((t1, t2)) = T(I, omega(t1), omega(t2))` on internal nodes.

mod format;
mod tensor;

use nalgebra::{DMatrix, DVector};

pub use format::WtaFile;
pub use tensor::{kron_vec, Tensor3};

use crate::error::{Error, Result};
use crate::trees::{Alphabet, Context, Tree};

/// Largest state count of a materialized Kronecker automaton.
pub const DEFAULT_KRON_STATE_CAP: usize = 256;

/// Smallest accepted `sigma_min / sigma_max` for a change of basis.
pub const CONJUGATION_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Wta {
    alphabet: Alphabet,
    alpha: DVector<f64>,
    transition: Tensor3,
    terminal: Vec<DVector<f64>>,
}

impl Wta {
    /// `terminal[s]` is the vector of alphabet symbol `s`.
    pub fn new(
        alphabet: Alphabet,
        alpha: DVector<f64>,
        transition: Tensor3,
        terminal: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let n = alpha.len();
        if n == 0 {
            return Err(Error::InvalidAutomaton(
                "automaton needs at least one state".into(),
            ));
        }
        if transition.dims() != [n, n, n] {
            return Err(Error::InvalidAutomaton(format!(
                "transition tensor has dims {:?}, expected [{n}, {n}, {n}]",
                transition.dims()
            )));
        }
        if terminal.len() != alphabet.len() {
            return Err(Error::InvalidAutomaton(format!(
                "{} terminal vectors for an alphabet of {} symbols",
                terminal.len(),
                alphabet.len()
            )));
        }
        for (s, w) in terminal.iter().enumerate() {
            if w.len() != n {
                return Err(Error::InvalidAutomaton(format!(
                    "terminal vector of `{}` has length {}, expected {n}",
                    alphabet.symbol(s),
                    w.len()
                )));
            }
        }
        let finite = alpha.iter().all(|v| v.is_finite())
            && transition.is_finite()
            && terminal.iter().all(|w| w.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidAutomaton("non-finite parameter".into()));
        }
        Ok(Self {
            alphabet,
            alpha,
            transition,
            terminal,
        })
    }

    /// Number of states.
    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn transition(&self) -> &Tensor3 {
        &self.transition
    }

    pub fn terminals(&self) -> &[DVector<f64>] {
        &self.terminal
    }

    pub fn terminal(&self, symbol: usize) -> &DVector<f64> {
        &self.terminal[symbol]
    }

    fn check_symbols(&self, t: &Tree) -> Result<()> {
        let max = t.max_symbol();
        if max >= self.alphabet.len() {
            return Err(Error::UnknownSymbol(format!("#{max}")));
        }
        Ok(())
    }

    /// `f_A(t)`.
    pub fn evaluate(&self, t: &Tree) -> Result<f64> {
        Ok(self.alpha.dot(&self.leaf_to_root_vector(t)?))
    }

    /// The state vector `omega_A(t)` computed bottom-up.
    pub fn leaf_to_root_vector(&self, t: &Tree) -> Result<DVector<f64>> {
        self.check_symbols(t)?;
        Ok(self.omega_unchecked(t))
    }

    fn omega_unchecked(&self, t: &Tree) -> DVector<f64> {
        match t {
            Tree::Leaf(s) => self.terminal[*s].clone(),
            Tree::Node(l, r) => self
                .transition
                .apply(&self.omega_unchecked(l), &self.omega_unchecked(r)),
        }
    }

    /// `Xi_A(c)`, the matrix with `Xi_A(c) omega_A(t) = omega_A(c[t])`.
    pub fn context_matrix(&self, c: &Context) -> Result<DMatrix<f64>> {
        match c {
            Context::Hole => Ok(DMatrix::identity(self.n(), self.n())),
            Context::Left(inner, t) => {
                let w = self.leaf_to_root_vector(t)?;
                Ok(self.transition.contract_third(&w) * self.context_matrix(inner)?)
            }
            Context::Right(t, inner) => {
                let w = self.leaf_to_root_vector(t)?;
                Ok(self.transition.contract_second(&w) * self.context_matrix(inner)?)
            }
        }
    }

    /// `alpha_A(c) = Xi_A(c)^T alpha`, so that `f(c[t]) = alpha_A(c) . omega_A(t)`.
    pub fn context_vector(&self, c: &Context) -> Result<DVector<f64>> {
        Ok(self.context_matrix(c)?.transpose() * &self.alpha)
    }

    /// The conjugate `A^Q = <Q^T alpha, T(Q^{-T}, Q, Q), {Q^{-1} omega}>`.
    pub fn conjugate(&self, q: &DMatrix<f64>) -> Result<Wta> {
        let n = self.n();
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::InvalidAutomaton(format!(
                "conjugating matrix is {}x{}, expected {n}x{n}",
                q.nrows(),
                q.ncols()
            )));
        }
        let sv = q.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
        if !(ratio >= CONJUGATION_TOLERANCE) {
            return Err(Error::SingularMatrix { ratio });
        }
        let q_inv = q
            .clone()
            .try_inverse()
            .ok_or(Error::SingularMatrix { ratio })?;
        let transition = self.transition.contract(&q_inv.transpose(), q, q);
        let terminal = self.terminal.iter().map(|w| &q_inv * w).collect();
        Wta::new(
            self.alphabet.clone(),
            q.transpose() * &self.alpha,
            transition,
            terminal,
        )
    }

    /// Change of basis onto the column span of `basis` (`n x r`, orthonormal
    /// columns): `<V^T alpha, T(V, V, V), {V^T omega}>`.
    pub fn project_onto(&self, basis: &DMatrix<f64>) -> Result<Wta> {
        assert_eq!(basis.nrows(), self.n());
        let transition = self.transition.contract(basis, basis, basis);
        let bt = basis.transpose();
        Wta::new(
            self.alphabet.clone(),
            &bt * &self.alpha,
            transition,
            self.terminal.iter().map(|w| &bt * w).collect(),
        )
    }

    /// `A (x) A`, computing `t -> f(t)^2`.
    pub fn kron_square(&self) -> Result<Wta> {
        self.cross_pair(self)
    }

    /// Pair automaton computing `t -> f_A(t) f_B(t)`.
    pub fn cross_pair(&self, other: &Wta) -> Result<Wta> {
        self.cross_pair_capped(other, DEFAULT_KRON_STATE_CAP)
    }

    pub fn cross_pair_capped(&self, other: &Wta, cap: usize) -> Result<Wta> {
        if self.alphabet != other.alphabet {
            return Err(Error::AlphabetMismatch);
        }
        let states = self.n() * other.n();
        if states > cap {
            return Err(Error::CapExceeded {
                requested: states,
                cap,
            });
        }
        let terminal = self
            .terminal
            .iter()
            .zip(&other.terminal)
            .map(|(a, b)| kron_vec(a, b))
            .collect();
        Wta::new(
            self.alphabet.clone(),
            kron_vec(&self.alpha, &other.alpha),
            self.transition.kron(&other.transition),
            terminal,
        )
    }

    /// Keep the first `n_hat` states.
    pub fn truncate(&self, n_hat: usize) -> Result<Wta> {
        let proj = StateProjection::new(self.n(), n_hat)?;
        Ok(proj.apply(self))
    }

    /// `<alpha, gamma T, {omega}>`, computing `t -> gamma^size(t) f(t)`.
    pub fn scale_gamma(&self, gamma: f64) -> Wta {
        assert!(gamma > 0.0 && gamma.is_finite(), "gamma must be positive");
        Wta {
            alphabet: self.alphabet.clone(),
            alpha: self.alpha.clone(),
            transition: self.transition.scale(gamma),
            terminal: self.terminal.clone(),
        }
    }

    /// Largest absolute parameter difference, or `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Wta) -> Option<f64> {
        if self.n() != other.n() || self.alphabet != other.alphabet {
            return None;
        }
        let mut d = (&self.alpha - &other.alpha).amax();
        for (a, b) in self
            .transition
            .as_slice()
            .iter()
            .zip(other.transition.as_slice())
        {
            d = d.max((a - b).abs());
        }
        for (a, b) in self.terminal.iter().zip(&other.terminal) {
            d = d.max((a - b).amax());
        }
        Some(d)
    }
}

/// The projection `[I | 0]` keeping the first `kept` of `n` coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateProjection {
    n: usize,
    kept: usize,
}

impl StateProjection {
    pub fn new(n: usize, kept: usize) -> Result<Self> {
        if kept == 0 || kept > n {
            return Err(Error::BadRank {
                requested: kept,
                max: n,
            });
        }
        Ok(Self { n, kept })
    }

    pub fn kept(&self) -> usize {
        self.kept
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.kept, self.n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn apply(&self, a: &Wta) -> Wta {
        assert_eq!(a.n(), self.n);
        let k = self.kept;
        Wta {
            alphabet: a.alphabet.clone(),
            alpha: a.alpha.rows(0, k).into_owned(),
            transition: a.transition.leading_block(k),
            terminal: a
                .terminal
                .iter()
                .map(|w| w.rows(0, k).into_owned())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::{parse_context, parse_tree};

    pub(crate) fn scalar_fixture(p: f64, c: f64) -> Wta {
        Wta::new(
            Alphabet::new(&["a"]).unwrap(),
            DVector::from_element(1, 1.0),
            Tensor3::from_vec([1, 1, 1], vec![p]).unwrap(),
            vec![DVector::from_element(1, c)],
        )
        .unwrap()
    }

    fn two_state() -> Wta {
        Wta::new(
            Alphabet::new(&["a", "b"]).unwrap(),
            DVector::from_vec(vec![1.0, -0.5]),
            Tensor3::from_fn([2, 2, 2], |i, j, k| {
                0.1 * (1 + i + 2 * j + 3 * k) as f64 - 0.3
            }),
            vec![
                DVector::from_vec(vec![0.4, 0.2]),
                DVector::from_vec(vec![-0.3, 0.6]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn scalar_evaluation() {
        let a = scalar_fixture(0.2, 0.5);
        let sigma = a.alphabet().clone();
        assert_eq!(a.evaluate(&parse_tree("a", &sigma).unwrap()).unwrap(), 0.5);
        let v = a.evaluate(&parse_tree("(a a)", &sigma).unwrap()).unwrap();
        assert!((v - 0.05).abs() < 1e-15);
    }

    #[test]
    fn unknown_symbol_is_rejected() {
        let a = scalar_fixture(0.2, 0.5);
        assert!(matches!(
            a.evaluate(&Tree::Leaf(3)),
            Err(Error::UnknownSymbol(_))
        ));
    }

    #[test]
    fn validation() {
        let sigma = Alphabet::new(&["a"]).unwrap();
        let bad_dims = Wta::new(
            sigma.clone(),
            DVector::from_element(2, 1.0),
            Tensor3::zeros(1, 1, 1),
            vec![DVector::from_element(2, 1.0)],
        );
        assert!(matches!(bad_dims, Err(Error::InvalidAutomaton(_))));
        let nan = Wta::new(
            sigma,
            DVector::from_element(1, f64::NAN),
            Tensor3::zeros(1, 1, 1),
            vec![DVector::from_element(1, 1.0)],
        );
        assert!(matches!(nan, Err(Error::InvalidAutomaton(_))));
    }

    #[test]
    fn scalar_context_matrix() {
        let a = scalar_fixture(0.2, 0.5);
        let sigma = a.alphabet().clone();
        let c = parse_context("(* a)", &sigma).unwrap();
        let xi = a.context_matrix(&c).unwrap();
        assert!((xi[(0, 0)] - 0.1).abs() < 1e-15);
        assert_eq!(
            a.context_matrix(&Context::Hole).unwrap(),
            DMatrix::identity(1, 1)
        );
    }

    #[test]
    fn identity_conjugation_is_noop() {
        let a = two_state();
        let b = a.conjugate(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(a.max_abs_diff(&b), Some(0.0));
    }

    #[test]
    fn scalar_conjugation_by_two() {
        let a = scalar_fixture(0.2, 0.5);
        let b = a.conjugate(&DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert_eq!(b.alpha()[0], 2.0);
        assert!((b.transition().get(0, 0, 0) - 0.4).abs() < 1e-15);
        assert_eq!(b.terminal(0)[0], 0.25);
        let sigma = a.alphabet().clone();
        for text in ["a", "(a a)"] {
            let t = parse_tree(text, &sigma).unwrap();
            assert!((a.evaluate(&t).unwrap() - b.evaluate(&t).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn singular_conjugation_rejected() {
        let a = two_state();
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(a.conjugate(&q), Err(Error::SingularMatrix { .. })));
        let near = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-13]);
        assert!(matches!(
            a.conjugate(&near),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn kron_square_scalar() {
        let a = scalar_fixture(0.2, 0.5);
        let sq = a.kron_square().unwrap();
        assert_eq!(sq.evaluate(&Tree::Leaf(0)).unwrap(), 0.25);
    }

    #[test]
    fn cross_pair_alphabet_mismatch_and_cap() {
        let a = scalar_fixture(0.2, 0.5);
        let b = two_state();
        assert!(matches!(a.cross_pair(&b), Err(Error::AlphabetMismatch)));
        assert!(matches!(
            b.cross_pair_capped(&b, 3),
            Err(Error::CapExceeded {
                requested: 4,
                cap: 3
            })
        ));
        assert_eq!(b.kron_square().unwrap(), b.cross_pair(&b).unwrap());
    }

    #[test]
    fn truncation_slices_leading_block() {
        let a = two_state();
        assert_eq!(a.truncate(2).unwrap(), a);
        let t = a.truncate(1).unwrap();
        assert_eq!(t.n(), 1);
        assert_eq!(t.alpha()[0], 1.0);
        assert_eq!(t.transition().get(0, 0, 0), a.transition().get(0, 0, 0));
        assert_eq!(t.terminal(1)[0], -0.3);
        assert!(matches!(a.truncate(0), Err(Error::BadRank { .. })));
        assert!(matches!(
            a.truncate(3),
            Err(Error::BadRank {
                requested: 3,
                max: 2
            })
        ));
    }

    #[test]
    fn projection_matrix_form() {
        let p = StateProjection::new(3, 2).unwrap();
        let m = p.matrix();
        assert_eq!(m.shape(), (2, 3));
        assert_eq!(m[(1, 1)], 1.0);
        assert_eq!(m[(1, 2)], 0.0);
    }

    #[test]
    fn gamma_scaling_scalar() {
        let a = scalar_fixture(0.2, 0.5);
        let sigma = a.alphabet().clone();
        let t = parse_tree("(a a)", &sigma).unwrap();
        let v = a.scale_gamma(2.0).evaluate(&t).unwrap();
        assert!((v - 0.10).abs() < 1e-15);
        assert_eq!(a.scale_gamma(1.0), a);
    }
}
