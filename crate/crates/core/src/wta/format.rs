//! JSON document format for automata.
//!
//! ```text
//! { "n": 2, "alphabet": ["a", "b"], "alpha": [..n..],
//!   "transition": [..n^3, (i, j, k) row-major..],
//!   "terminal": { "a": [..n..], "b": [..n..] },
//!   "singular_values": [..]   // canonical forms only
//!   "gamma": 2.4 }            // only when the series was rescaled
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a written file
//! reproduces every parameter bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{Tensor3, Wta};
use crate::error::{Error, Result};
use crate::trees::Alphabet;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    n: usize,
    alphabet: Vec<String>,
    alpha: Vec<f64>,
    transition: Vec<f64>,
    terminal: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    singular_values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
}

/// An automaton together with the optional canonical-form metadata stored
/// alongside it.
#[derive(Clone, Debug, PartialEq)]
pub struct WtaFile {
    pub automaton: Wta,
    pub singular_values: Option<Vec<f64>>,
    pub gamma: Option<f64>,
}

impl WtaFile {
    pub fn plain(automaton: Wta) -> Self {
        Self {
            automaton,
            singular_values: None,
            gamma: None,
        }
    }

    pub fn to_json(&self) -> String {
        let a = &self.automaton;
        let doc = Document {
            n: a.n(),
            alphabet: a.alphabet().symbols().to_vec(),
            alpha: a.alpha().iter().copied().collect(),
            transition: a.transition().as_slice().to_vec(),
            terminal: a
                .alphabet()
                .symbols()
                .iter()
                .zip(a.terminals())
                .map(|(s, w)| (s.clone(), w.iter().copied().collect()))
                .collect(),
            singular_values: self.singular_values.clone(),
            gamma: self.gamma,
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("document serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(text).map_err(|e| Error::Syntax(e.to_string()))?;
        let n = doc.n;
        if doc.alpha.len() != n {
            return Err(Error::InvalidAutomaton(format!(
                "alpha has {} entries, expected {n}",
                doc.alpha.len()
            )));
        }
        let alphabet = Alphabet::new(&doc.alphabet)?;
        if doc.terminal.len() != alphabet.len() {
            return Err(Error::InvalidAutomaton(
                "terminal map must have exactly one entry per alphabet symbol".into(),
            ));
        }
        let mut terminal = Vec::with_capacity(alphabet.len());
        for sym in alphabet.symbols() {
            let w = doc.terminal.get(sym).ok_or_else(|| {
                Error::InvalidAutomaton(format!("missing terminal vector for `{sym}`"))
            })?;
            terminal.push(DVector::from_vec(w.clone()));
        }
        let transition = Tensor3::from_vec([n, n, n], doc.transition).ok_or_else(|| {
            Error::InvalidAutomaton(format!("transition must have {} entries", n * n * n))
        })?;
        let automaton = Wta::new(alphabet, DVector::from_vec(doc.alpha), transition, terminal)?;
        if let Some(sv) = &doc.singular_values {
            if sv.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidAutomaton("non-finite singular value".into()));
            }
        }
        if let Some(g) = doc.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidAutomaton(format!("invalid gamma {g}")));
            }
        }
        Ok(Self {
            automaton,
            singular_values: doc.singular_values,
            gamma: doc.gamma,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

impl Wta {
    pub fn to_json(&self) -> String {
        WtaFile::plain(self.clone()).to_json()
    }

    pub fn from_json(text: &str) -> Result<Wta> {
        Ok(WtaFile::from_json(text)?.automaton)
    }
}
