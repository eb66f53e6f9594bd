//! Full binary trees and one-hole contexts over a finite alphabet.
//!
//! Leaves store the index of their symbol in an [`Alphabet`]; the alphabet is
//! needed to parse or print a tree but not to evaluate one. Enumeration order
//! is size-major and follows the derived `Ord` within a size class, which makes
//! every Hankel block and brute-force sum reproducible.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::sexpr::{Cursor, Token};

/// Placeholder symbol marking the hole of a context.
pub const HOLE: &str = "*";

/// Default largest size (internal nodes) accepted by the enumerators.
pub const DEFAULT_ENUMERATION_CAP: usize = 10;

/// Ordered list of distinct symbols.
#[derive(Clone, Debug)]
pub struct Alphabet {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for Alphabet {
    fn eq(&self, other: &Self) -> bool {
        self.symbols == other.symbols
    }
}

impl Eq for Alphabet {}

fn valid_symbol(sym: &str) -> bool {
    !sym.is_empty()
        && sym != HOLE
        && !sym
            .chars()
            .any(|c| c.is_whitespace() || c == '(' || c == ')' || c == '\'')
}

impl Alphabet {
    pub fn new<S: AsRef<str>>(symbols: &[S]) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::InvalidAlphabet("alphabet must not be empty".into()));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        let mut list = Vec::with_capacity(symbols.len());
        for (i, sym) in symbols.iter().enumerate() {
            let sym = sym.as_ref();
            if !valid_symbol(sym) {
                return Err(Error::InvalidAlphabet(format!("invalid symbol `{sym}`")));
            }
            if index.insert(sym.to_string(), i).is_some() {
                return Err(Error::InvalidAlphabet(format!("duplicate symbol `{sym}`")));
            }
            list.push(sym.to_string());
        }
        Ok(Self {
            symbols: list,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, idx: usize) -> &str {
        &self.symbols[idx]
    }

    pub fn index_of(&self, sym: &str) -> Option<usize> {
        self.index.get(sym).copied()
    }

    pub fn lookup(&self, sym: &str) -> Result<usize> {
        self.index_of(sym)
            .ok_or_else(|| Error::UnknownSymbol(sym.to_string()))
    }
}

/// A rooted full binary tree whose leaves carry alphabet indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tree {
    Leaf(usize),
    Node(Box<Tree>, Box<Tree>),
}

impl Tree {
    pub fn leaf(sym: usize) -> Self {
        Tree::Leaf(sym)
    }

    pub fn node(left: Tree, right: Tree) -> Self {
        Tree::Node(Box::new(left), Box::new(right))
    }

    /// Number of internal nodes.
    pub fn size(&self) -> usize {
        match self {
            Tree::Leaf(_) => 0,
            Tree::Node(l, r) => l.size() + r.size() + 1,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Tree::Leaf(_) => 0,
            Tree::Node(l, r) => l.depth().max(r.depth()) + 1,
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Tree::Leaf(_) => 1,
            Tree::Node(l, r) => l.leaf_count() + r.leaf_count(),
        }
    }

    /// Total node count, internal plus leaves.
    pub fn node_count(&self) -> usize {
        self.size() + self.leaf_count()
    }

    /// Left-to-right leaf symbols.
    pub fn yield_symbols(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.leaf_count());
        self.collect_yield(&mut out);
        out
    }

    fn collect_yield(&self, out: &mut Vec<usize>) {
        match self {
            Tree::Leaf(s) => out.push(*s),
            Tree::Node(l, r) => {
                l.collect_yield(out);
                r.collect_yield(out);
            }
        }
    }

    /// Largest symbol index used by the tree.
    pub fn max_symbol(&self) -> usize {
        match self {
            Tree::Leaf(s) => *s,
            Tree::Node(l, r) => l.max_symbol().max(r.max_symbol()),
        }
    }

    pub fn to_text(&self, alphabet: &Alphabet) -> String {
        let mut out = String::new();
        self.write_text(alphabet, &mut out);
        out
    }

    fn write_text(&self, alphabet: &Alphabet, out: &mut String) {
        match self {
            Tree::Leaf(s) => out.push_str(alphabet.symbol(*s)),
            Tree::Node(l, r) => {
                out.push('(');
                l.write_text(alphabet, out);
                out.push(' ');
                r.write_text(alphabet, out);
                out.push(')');
            }
        }
    }

    /// All `|t|` ways of writing this tree as `c[t']`.
    pub fn factorizations(&self) -> Vec<(Context, Tree)> {
        let mut out = vec![(Context::Hole, self.clone())];
        if let Tree::Node(l, r) = self {
            for (c, sub) in l.factorizations() {
                out.push((Context::Left(Box::new(c), (**r).clone()), sub));
            }
            for (c, sub) in r.factorizations() {
                out.push((Context::Right((**l).clone(), Box::new(c)), sub));
            }
        }
        out
    }
}

/// A tree with exactly one hole leaf.
///
/// `Left(c, t)` is the context `(c, t)` whose hole sits in the left child;
/// `Right(t, c)` is `(t, c)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Context {
    Hole,
    Left(Box<Context>, Tree),
    Right(Tree, Box<Context>),
}

impl Context {
    pub fn left(c: Context, t: Tree) -> Self {
        Context::Left(Box::new(c), t)
    }

    pub fn right(t: Tree, c: Context) -> Self {
        Context::Right(t, Box::new(c))
    }

    /// Internal nodes.
    pub fn size(&self) -> usize {
        match self {
            Context::Hole => 0,
            Context::Left(c, t) | Context::Right(t, c) => c.size() + t.size() + 1,
        }
    }

    /// Distance from the root to the hole.
    pub fn drop_depth(&self) -> usize {
        match self {
            Context::Hole => 0,
            Context::Left(c, _) | Context::Right(_, c) => c.drop_depth() + 1,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Context::Hole => 0,
            Context::Left(c, t) | Context::Right(t, c) => c.depth().max(t.depth()) + 1,
        }
    }

    /// `c[t]`: plug a tree into the hole.
    pub fn substitute(&self, t: &Tree) -> Tree {
        match self {
            Context::Hole => t.clone(),
            Context::Left(c, r) => Tree::node(c.substitute(t), r.clone()),
            Context::Right(l, c) => Tree::node(l.clone(), c.substitute(t)),
        }
    }

    /// `c[c']`: plug another context into the hole.
    pub fn compose(&self, inner: &Context) -> Context {
        match self {
            Context::Hole => inner.clone(),
            Context::Left(c, r) => Context::left(c.compose(inner), r.clone()),
            Context::Right(l, c) => Context::right(l.clone(), c.compose(inner)),
        }
    }

    pub fn to_text(&self, alphabet: &Alphabet) -> String {
        let mut out = String::new();
        self.write_text(alphabet, &mut out);
        out
    }

    fn write_text(&self, alphabet: &Alphabet, out: &mut String) {
        match self {
            Context::Hole => out.push_str(HOLE),
            Context::Left(c, t) => {
                out.push('(');
                c.write_text(alphabet, out);
                out.push(' ');
                t.write_text(alphabet, out);
                out.push(')');
            }
            Context::Right(t, c) => {
                out.push('(');
                t.write_text(alphabet, out);
                out.push(' ');
                c.write_text(alphabet, out);
                out.push(')');
            }
        }
    }
}

// Parsing goes through an intermediate shape that may contain holes.
enum Raw {
    Hole,
    Leaf(usize),
    Node(Box<Raw>, Box<Raw>),
}

impl Raw {
    fn holes(&self) -> usize {
        match self {
            Raw::Hole => 1,
            Raw::Leaf(_) => 0,
            Raw::Node(l, r) => l.holes() + r.holes(),
        }
    }

    fn into_tree(self) -> Tree {
        match self {
            Raw::Leaf(s) => Tree::Leaf(s),
            Raw::Node(l, r) => Tree::node(l.into_tree(), r.into_tree()),
            Raw::Hole => unreachable!("hole checked by caller"),
        }
    }

    fn into_context(self) -> Context {
        match self {
            Raw::Hole => Context::Hole,
            Raw::Node(l, r) if l.holes() == 1 => Context::left(l.into_context(), r.into_tree()),
            Raw::Node(l, r) => Context::right(l.into_tree(), r.into_context()),
            Raw::Leaf(_) => unreachable!("hole checked by caller"),
        }
    }
}

fn parse_raw(cur: &mut Cursor, alphabet: &Alphabet, allow_hole: bool) -> Result<Raw> {
    match cur.next() {
        Some(Token::Atom(sym)) if sym == HOLE => {
            if allow_hole {
                Ok(Raw::Hole)
            } else {
                Err(Error::Syntax("hole `*` not allowed in a tree".into()))
            }
        }
        Some(Token::Atom(sym)) => Ok(Raw::Leaf(alphabet.lookup(&sym)?)),
        Some(Token::Open) => {
            let l = parse_raw(cur, alphabet, allow_hole)?;
            let r = parse_raw(cur, alphabet, allow_hole)?;
            cur.expect_close()?;
            Ok(Raw::Node(Box::new(l), Box::new(r)))
        }
        Some(Token::Close) => Err(Error::Syntax("unexpected `)`".into())),
        Some(Token::Quoted(q)) => Err(Error::Syntax(format!("unexpected quoted symbol '{q}'"))),
        None => Err(Error::Syntax("unexpected end of input".into())),
    }
}

pub fn parse_tree(text: &str, alphabet: &Alphabet) -> Result<Tree> {
    let mut cur = Cursor::new(text)?;
    let raw = parse_raw(&mut cur, alphabet, false)?;
    cur.finish()?;
    Ok(raw.into_tree())
}

pub fn parse_context(text: &str, alphabet: &Alphabet) -> Result<Context> {
    let mut cur = Cursor::new(text)?;
    let raw = parse_raw(&mut cur, alphabet, true)?;
    cur.finish()?;
    match raw.holes() {
        1 => Ok(raw.into_context()),
        k => Err(Error::Syntax(format!(
            "context needs exactly one `*`, found {k}"
        ))),
    }
}

/// One tree per line; blank lines and `#` comment lines are skipped.
pub fn parse_corpus(text: &str, alphabet: &Alphabet) -> Result<Vec<Tree>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tree = parse_tree(line, alphabet).map_err(|e| match e {
            Error::Syntax(msg) => Error::Syntax(format!("line {}: {msg}", lineno + 1)),
            other => other,
        })?;
        out.push(tree);
    }
    Ok(out)
}

pub fn corpus_to_text(trees: &[Tree], alphabet: &Alphabet) -> String {
    let mut out = String::new();
    for t in trees {
        let _ = writeln!(out, "{}", t.to_text(alphabet));
    }
    out
}

fn check_cap(max_size: usize, cap: usize) -> Result<()> {
    if max_size > cap {
        return Err(Error::CapExceeded {
            requested: max_size,
            cap,
        });
    }
    Ok(())
}

/// Trees grouped by size: entry `m` holds every tree with `m` internal nodes,
/// sorted.
pub fn trees_by_size(alphabet_size: usize, max_size: usize) -> Vec<Vec<Tree>> {
    let mut by_size: Vec<Vec<Tree>> = Vec::with_capacity(max_size + 1);
    by_size.push((0..alphabet_size).map(Tree::Leaf).collect());
    for m in 1..=max_size {
        let mut level = Vec::new();
        for l in 0..m {
            for left in &by_size[l] {
                for right in &by_size[m - 1 - l] {
                    level.push(Tree::node(left.clone(), right.clone()));
                }
            }
        }
        level.sort();
        by_size.push(level);
    }
    by_size
}

pub fn enumerate_trees(alphabet: &Alphabet, max_size: usize) -> Result<Vec<Tree>> {
    enumerate_trees_capped(alphabet, max_size, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_trees_capped(
    alphabet: &Alphabet,
    max_size: usize,
    cap: usize,
) -> Result<Vec<Tree>> {
    check_cap(max_size, cap)?;
    Ok(trees_by_size(alphabet.len(), max_size)
        .into_iter()
        .flatten()
        .collect())
}

/// Contexts grouped by size, sorted within each size.
pub fn contexts_by_size(alphabet_size: usize, max_size: usize) -> Vec<Vec<Context>> {
    let trees = trees_by_size(alphabet_size, max_size.saturating_sub(1));
    let mut by_size: Vec<Vec<Context>> = Vec::with_capacity(max_size + 1);
    by_size.push(vec![Context::Hole]);
    for m in 1..=max_size {
        let mut level = Vec::new();
        for l in 0..m {
            let r = m - 1 - l;
            for c in &by_size[l] {
                for t in &trees[r] {
                    level.push(Context::left(c.clone(), t.clone()));
                    level.push(Context::right(t.clone(), c.clone()));
                }
            }
        }
        level.sort();
        by_size.push(level);
    }
    by_size
}

pub fn enumerate_contexts(alphabet: &Alphabet, max_size: usize) -> Result<Vec<Context>> {
    enumerate_contexts_capped(alphabet, max_size, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_contexts_capped(
    alphabet: &Alphabet,
    max_size: usize,
    cap: usize,
) -> Result<Vec<Context>> {
    check_cap(max_size, cap)?;
    Ok(contexts_by_size(alphabet.len(), max_size)
        .into_iter()
        .flatten()
        .collect())
}
