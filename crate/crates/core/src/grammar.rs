//! Weighted context-free grammars in Chomsky normal form, tree banks of
//! binarized derivations, and the translation to and from tree automata.
//!
//! Grammar text format, one rule per line (`#` starts a comment line):
//!
//! ```text
//! root S : 1.0
//! S -> NP VP : 0.8
//! NP -> 'she' : 0.3
//! ```
//!
//! Tree-bank format, one derivation per line: `(S (NP 'she') (VP 'runs'))`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::sexpr::{Cursor, Token};
use crate::trees::{Alphabet, Tree};
use crate::wta::{Tensor3, Wta};

/// A CNF grammar with real rule weights. Rules absent from the maps weigh 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Wcfg {
    nonterminals: Alphabet,
    terminals: Alphabet,
    root: Vec<f64>,
    binary: BTreeMap<(usize, usize, usize), f64>,
    lexical: BTreeMap<(usize, usize), f64>,
}

impl Wcfg {
    /// Rules are given by index into `nonterminals` / `terminals`. Zero-weight
    /// rules are dropped; a rule listed twice is an error.
    pub fn new(
        nonterminals: Vec<String>,
        terminals: Alphabet,
        root: Vec<f64>,
        binary: Vec<((usize, usize, usize), f64)>,
        lexical: Vec<((usize, usize), f64)>,
    ) -> Result<Self> {
        let nonterminals = Alphabet::new(&nonterminals)?;
        if let Some(clash) = nonterminals
            .symbols()
            .iter()
            .find(|s| terminals.index_of(s).is_some())
        {
            return Err(Error::NameClash(clash.clone()));
        }
        let n = nonterminals.len();
        if root.len() != n {
            return Err(Error::InvalidAutomaton(format!(
                "{} root weights for {n} nonterminals",
                root.len()
            )));
        }
        let check = |w: f64, what: &str| -> Result<()> {
            if w.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidAutomaton(format!(
                    "non-finite weight for {what}"
                )))
            }
        };
        for (a, w) in root.iter().enumerate() {
            check(*w, nonterminals.symbol(a))?;
        }
        let mut bin_map = BTreeMap::new();
        for ((a, b, c), w) in binary {
            if a >= n || b >= n || c >= n {
                return Err(Error::InvalidAutomaton(format!(
                    "binary rule ({a},{b},{c}) out of range"
                )));
            }
            check(w, nonterminals.symbol(a))?;
            if bin_map.insert((a, b, c), w).is_some() {
                return Err(Error::DuplicateRule(format!(
                    "{} -> {} {}",
                    nonterminals.symbol(a),
                    nonterminals.symbol(b),
                    nonterminals.symbol(c)
                )));
            }
        }
        let mut lex_map = BTreeMap::new();
        for ((a, x), w) in lexical {
            if a >= n || x >= terminals.len() {
                return Err(Error::InvalidAutomaton(format!(
                    "lexical rule ({a},{x}) out of range"
                )));
            }
            check(w, nonterminals.symbol(a))?;
            if lex_map.insert((a, x), w).is_some() {
                return Err(Error::DuplicateRule(format!(
                    "{} -> '{}'",
                    nonterminals.symbol(a),
                    terminals.symbol(x)
                )));
            }
        }
        bin_map.retain(|_, w| *w != 0.0);
        lex_map.retain(|_, w| *w != 0.0);
        Ok(Self {
            nonterminals,
            terminals,
            root,
            binary: bin_map,
            lexical: lex_map,
        })
    }

    pub fn n(&self) -> usize {
        self.nonterminals.len()
    }

    pub fn nonterminals(&self) -> &Alphabet {
        &self.nonterminals
    }

    pub fn terminals(&self) -> &Alphabet {
        &self.terminals
    }

    pub fn root_weight(&self, a: usize) -> f64 {
        self.root[a]
    }

    pub fn binary_weight(&self, a: usize, b: usize, c: usize) -> f64 {
        self.binary.get(&(a, b, c)).copied().unwrap_or(0.0)
    }

    pub fn lexical_weight(&self, a: usize, x: usize) -> f64 {
        self.lexical.get(&(a, x)).copied().unwrap_or(0.0)
    }

    pub fn binary_rules(&self) -> impl Iterator<Item = ((usize, usize, usize), f64)> + '_ {
        self.binary.iter().map(|(k, w)| (*k, *w))
    }

    pub fn lexical_rules(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.lexical.iter().map(|(k, w)| (*k, *w))
    }

    /// Text form that [`parse_wcfg`] reads back to an identical grammar.
    ///
    /// Every nonterminal gets a `root` line (weight 0 included) so that the
    /// first-appearance order is preserved, and every terminal appears in at
    /// least one lexical line.
    pub fn to_text(&self) -> String {
        let nt = |a: usize| self.nonterminals.symbol(a);
        let mut out = String::new();
        for (a, w) in self.root.iter().enumerate() {
            let _ = writeln!(out, "root {} : {w:?}", nt(a));
        }
        let mut by_terminal: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.terminals.len()];
        for (&(a, x), &w) in &self.lexical {
            by_terminal[x].push((a, w));
        }
        for (x, rules) in by_terminal.iter().enumerate() {
            let sym = self.terminals.symbol(x);
            if rules.is_empty() {
                let _ = writeln!(out, "{} -> '{sym}' : 0.0", nt(0));
            }
            for (a, w) in rules {
                let _ = writeln!(out, "{} -> '{sym}' : {w:?}", nt(*a));
            }
        }
        for (&(a, b, c), w) in &self.binary {
            let _ = writeln!(out, "{} -> {} {} : {w:?}", nt(a), nt(b), nt(c));
        }
        out
    }
}

fn parse_weight(tok: &str, lineno: usize) -> Result<f64> {
    let w: f64 = tok
        .parse()
        .map_err(|_| Error::Syntax(format!("line {lineno}: bad weight `{tok}`")))?;
    if !w.is_finite() {
        return Err(Error::Syntax(format!(
            "line {lineno}: non-finite weight `{tok}`"
        )));
    }
    Ok(w)
}

// First-appearance interning of names, shared by the grammar and tree-bank readers.
#[derive(Default)]
struct Names {
    order: Vec<String>,
    index: HashMap<String, usize>,
}

impl Names {
    fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.order.len();
        self.order.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }

    fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }
}

fn quoted(tok: &str) -> Option<&str> {
    tok.strip_prefix('\'')?
        .strip_suffix('\'')
        .filter(|s| !s.is_empty())
}

pub fn parse_wcfg(text: &str) -> Result<Wcfg> {
    let mut nts = Names::default();
    let mut terms = Names::default();
    let mut root: HashMap<usize, f64> = HashMap::new();
    let mut binary = Vec::new();
    let mut lexical = Vec::new();
    let mut seen = HashSet::new();

    fn nonterminal(nts: &mut Names, name: &str, terms: &Names, lineno: usize) -> Result<usize> {
        if terms.contains(name) {
            return Err(Error::NameClash(name.to_string()));
        }
        if quoted(name).is_some() || name == "->" || name == ":" {
            return Err(Error::Syntax(format!(
                "line {lineno}: bad nonterminal `{name}`"
            )));
        }
        Ok(nts.intern(name))
    }

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["root", a, ":", w] if *a != "->" => {
                let w = parse_weight(w, lineno)?;
                let a = nonterminal(&mut nts, a, &terms, lineno)?;
                if !seen.insert(format!("root {a}")) {
                    return Err(Error::DuplicateRule(line.to_string()));
                }
                root.insert(a, w);
            }
            [a, "->", x, ":", w] if quoted(x).is_some() => {
                let w = parse_weight(w, lineno)?;
                let a = nonterminal(&mut nts, a, &terms, lineno)?;
                let sym = quoted(x).unwrap();
                if nts.contains(sym) {
                    return Err(Error::NameClash(sym.to_string()));
                }
                let x = terms.intern(sym);
                if !seen.insert(format!("lex {a} {x}")) {
                    return Err(Error::DuplicateRule(line.to_string()));
                }
                lexical.push(((a, x), w));
            }
            [a, "->", b, c, ":", w] => {
                let w = parse_weight(w, lineno)?;
                let a = nonterminal(&mut nts, a, &terms, lineno)?;
                let b = nonterminal(&mut nts, b, &terms, lineno)?;
                let c = nonterminal(&mut nts, c, &terms, lineno)?;
                if !seen.insert(format!("bin {a} {b} {c}")) {
                    return Err(Error::DuplicateRule(line.to_string()));
                }
                binary.push(((a, b, c), w));
            }
            _ => {
                return Err(Error::Syntax(format!(
                    "line {lineno}: unrecognized rule `{line}`"
                )));
            }
        }
    }
    if nts.order.is_empty() {
        return Err(Error::Syntax("grammar has no nonterminals".into()));
    }
    if terms.order.is_empty() {
        return Err(Error::Syntax("grammar has no terminals".into()));
    }
    let root_vec = (0..nts.order.len())
        .map(|a| root.get(&a).copied().unwrap_or(0.0))
        .collect();
    Wcfg::new(
        nts.order,
        Alphabet::new(&terms.order)?,
        root_vec,
        binary,
        lexical,
    )
}

/// `alpha(i) = weight(-> i)`, `T(i,j,k) = weight(i -> j k)`,
/// `omega_x(i) = weight(i -> x)`.
pub fn wcfg_to_wta(g: &Wcfg) -> Wta {
    let n = g.n();
    let mut transition = Tensor3::zeros(n, n, n);
    for ((a, b, c), w) in g.binary_rules() {
        transition.set(a, b, c, w);
    }
    let mut terminal = vec![DVector::zeros(n); g.terminals().len()];
    for ((a, x), w) in g.lexical_rules() {
        terminal[x][a] = w;
    }
    Wta::new(
        g.terminals().clone(),
        DVector::from_vec(g.root.clone()),
        transition,
        terminal,
    )
    .expect("grammar dimensions are consistent")
}

/// One nonterminal per state, named `N0, N1, ...` (prefix lengthened if a
/// terminal already uses such a name).
pub fn wta_to_wcfg(a: &Wta) -> Wcfg {
    let n = a.n();
    let mut prefix = String::from("N");
    while (0..n).any(|i| a.alphabet().index_of(&format!("{prefix}{i}")).is_some()) {
        prefix.push('N');
    }
    let nonterminals = (0..n).map(|i| format!("{prefix}{i}")).collect();
    let t = a.transition();
    let mut binary = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                binary.push(((i, j, k), t.get(i, j, k)));
            }
        }
    }
    let mut lexical = Vec::new();
    for (x, w) in a.terminals().iter().enumerate() {
        for i in 0..n {
            lexical.push(((i, x), w[i]));
        }
    }
    Wcfg::new(
        nonterminals,
        a.alphabet().clone(),
        a.alpha().iter().copied().collect(),
        binary,
        lexical,
    )
    .expect("automaton parameters are finite")
}

/// Sum of `f_A(t)` over every binary tree whose yield is `word`, by the
/// inside algorithm over spans.
pub fn string_weight(a: &Wta, word: &[usize]) -> Result<f64> {
    let len = word.len();
    if len == 0 {
        return Err(Error::EmptyString);
    }
    if let Some(&bad) = word.iter().find(|&&x| x >= a.alphabet().len()) {
        return Err(Error::UnknownSymbol(format!("#{bad}")));
    }
    // inside[i][l - 1] covers word[i .. i + l].
    let mut inside: Vec<Vec<DVector<f64>>> =
        word.iter().map(|&x| vec![a.terminal(x).clone()]).collect();
    for span in 2..=len {
        for i in 0..=len - span {
            let mut acc = DVector::zeros(a.n());
            for left in 1..span {
                let l = &inside[i][left - 1];
                let r = &inside[i + left][span - left - 1];
                acc += a.transition().apply(l, r);
            }
            inside[i].push(acc);
        }
    }
    Ok(a.alpha().dot(&inside[0][len - 1]))
}

/// A binarized derivation with nonterminal labels on every internal node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Derivation {
    Lexical {
        label: usize,
        terminal: usize,
    },
    Binary {
        label: usize,
        left: Box<Derivation>,
        right: Box<Derivation>,
    },
}

impl Derivation {
    pub fn label(&self) -> usize {
        match self {
            Derivation::Lexical { label, .. } | Derivation::Binary { label, .. } => *label,
        }
    }

    /// The unlabeled tree over the terminal alphabet.
    pub fn tree(&self) -> Tree {
        match self {
            Derivation::Lexical { terminal, .. } => Tree::Leaf(*terminal),
            Derivation::Binary { left, right, .. } => Tree::node(left.tree(), right.tree()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeBank {
    nonterminals: Alphabet,
    terminals: Alphabet,
    derivations: Vec<Derivation>,
}

enum RawDerivation {
    Lexical(String, String),
    Binary(String, Box<RawDerivation>, Box<RawDerivation>),
}

fn parse_raw_derivation(cur: &mut Cursor) -> Result<RawDerivation> {
    match cur.next() {
        Some(Token::Open) => {}
        Some(other) => return Err(Error::Syntax(format!("expected `(`, found {other:?}"))),
        None => return Err(Error::Syntax("unexpected end of input".into())),
    }
    let label = match cur.next() {
        Some(Token::Atom(l)) => l,
        other => return Err(Error::Syntax(format!("expected a label, found {other:?}"))),
    };
    match cur.peek() {
        Some(Token::Quoted(_)) => {
            let Some(Token::Quoted(x)) = cur.next() else {
                unreachable!()
            };
            cur.expect_close().map_err(|_| {
                Error::Syntax(format!(
                    "`{label}` is not binarized: lexical node with extra children"
                ))
            })?;
            Ok(RawDerivation::Lexical(label, x))
        }
        Some(Token::Open) => {
            let left = parse_raw_derivation(cur)?;
            if !matches!(cur.peek(), Some(Token::Open)) {
                return Err(Error::Syntax(format!(
                    "`{label}` is not binarized: needs two children"
                )));
            }
            let right = parse_raw_derivation(cur)?;
            cur.expect_close().map_err(|_| {
                Error::Syntax(format!(
                    "`{label}` is not binarized: more than two children"
                ))
            })?;
            Ok(RawDerivation::Binary(
                label,
                Box::new(left),
                Box::new(right),
            ))
        }
        other => Err(Error::Syntax(format!(
            "unexpected {other:?} after `{label}`"
        ))),
    }
}

impl TreeBank {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raws = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cur = Cursor::new(line)?;
            let raw = parse_raw_derivation(&mut cur)
                .and_then(|r| cur.finish().map(|_| r))
                .map_err(|e| match e {
                    Error::Syntax(m) => Error::Syntax(format!("line {}: {m}", i + 1)),
                    other => other,
                })?;
            raws.push(raw);
        }
        if raws.is_empty() {
            return Err(Error::EmptyBank);
        }
        let mut nts = Names::default();
        let mut terms = Names::default();
        fn intern(raw: &RawDerivation, nts: &mut Names, terms: &mut Names) -> Result<Derivation> {
            match raw {
                RawDerivation::Lexical(l, x) => {
                    if terms.contains(l) {
                        return Err(Error::NameClash(l.clone()));
                    }
                    let label = nts.intern(l);
                    if nts.contains(x) {
                        return Err(Error::NameClash(x.clone()));
                    }
                    Ok(Derivation::Lexical {
                        label,
                        terminal: terms.intern(x),
                    })
                }
                RawDerivation::Binary(l, left, right) => {
                    if terms.contains(l) {
                        return Err(Error::NameClash(l.clone()));
                    }
                    let label = nts.intern(l);
                    Ok(Derivation::Binary {
                        label,
                        left: Box::new(intern(left, nts, terms)?),
                        right: Box::new(intern(right, nts, terms)?),
                    })
                }
            }
        }
        let derivations = raws
            .iter()
            .map(|r| intern(r, &mut nts, &mut terms))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            nonterminals: Alphabet::new(&nts.order)?,
            terminals: Alphabet::new(&terms.order)?,
            derivations,
        })
    }

    pub fn nonterminals(&self) -> &Alphabet {
        &self.nonterminals
    }

    pub fn terminals(&self) -> &Alphabet {
        &self.terminals
    }

    pub fn derivations(&self) -> &[Derivation] {
        &self.derivations
    }

    pub fn len(&self) -> usize {
        self.derivations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.derivations.is_empty()
    }

    /// Unlabeled trees, in bank order.
    pub fn trees(&self) -> Vec<Tree> {
        self.derivations.iter().map(Derivation::tree).collect()
    }
}

/// Relative-frequency estimate: `weight(a -> beta) = count(a -> beta) / count(a)`
/// and `weight(-> a)` is the fraction of derivations rooted at `a`.
pub fn estimate_mle(bank: &TreeBank) -> Result<Wcfg> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    let n = bank.nonterminals.len();
    let mut root = vec![0.0; n];
    let mut totals = vec![0.0; n];
    let mut binary: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    let mut lexical: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    fn count(
        d: &Derivation,
        totals: &mut [f64],
        binary: &mut BTreeMap<(usize, usize, usize), f64>,
        lexical: &mut BTreeMap<(usize, usize), f64>,
    ) {
        totals[d.label()] += 1.0;
        match d {
            Derivation::Lexical { label, terminal } => {
                *lexical.entry((*label, *terminal)).or_default() += 1.0;
            }
            Derivation::Binary { label, left, right } => {
                *binary
                    .entry((*label, left.label(), right.label()))
                    .or_default() += 1.0;
                count(left, totals, binary, lexical);
                count(right, totals, binary, lexical);
            }
        }
    }
    for d in &bank.derivations {
        root[d.label()] += 1.0;
        count(d, &mut totals, &mut binary, &mut lexical);
    }
    let roots = bank.len() as f64;
    root.iter_mut().for_each(|w| *w /= roots);
    Wcfg::new(
        bank.nonterminals.symbols().to_vec(),
        bank.terminals.clone(),
        root,
        binary
            .into_iter()
            .map(|((a, b, c), k)| ((a, b, c), k / totals[a]))
            .collect(),
        lexical
            .into_iter()
            .map(|((a, x), k)| ((a, x), k / totals[a]))
            .collect(),
    )
}
