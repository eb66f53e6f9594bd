//! Tokenizer shared by the tree, context and tree-bank readers.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Token {
    Open,
    Close,
    Atom(String),
    /// A `'quoted'` terminal, as used by tree-bank derivations.
    Quoted(String),
}

pub(crate) fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&ch) = chars.peek() {
        match ch {
            '(' => {
                chars.next();
                tokens.push(Token::Open);
            }
            ')' => {
                chars.next();
                tokens.push(Token::Close);
            }
            '\'' => {
                chars.next();
                let mut sym = String::new();
                loop {
                    match chars.next() {
                        Some('\'') => break,
                        Some(c) => sym.push(c),
                        None => return Err(Error::Syntax("unterminated quote".into())),
                    }
                }
                if sym.is_empty() {
                    return Err(Error::Syntax("empty quoted symbol".into()));
                }
                tokens.push(Token::Quoted(sym));
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            _ => {
                let mut sym = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == '\'' {
                        break;
                    }
                    sym.push(c);
                    chars.next();
                }
                tokens.push(Token::Atom(sym));
            }
        }
    }
    Ok(tokens)
}

/// Cursor over a token stream.
pub(crate) struct Cursor {
    tokens: Vec<Token>,
    pos: usize,
}

impl Cursor {
    pub(crate) fn new(text: &str) -> Result<Self> {
        Ok(Self {
            tokens: tokenize(text)?,
            pos: 0,
        })
    }

    pub(crate) fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    pub(crate) fn next(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.pos).cloned();
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    pub(crate) fn expect_close(&mut self) -> Result<()> {
        match self.next() {
            Some(Token::Close) => Ok(()),
            Some(other) => Err(Error::Syntax(format!("expected `)`, found {other:?}"))),
            None => Err(Error::Syntax("unbalanced parentheses: missing `)`".into())),
        }
    }

    pub(crate) fn finish(&self) -> Result<()> {
        match self.peek() {
            None => Ok(()),
            Some(tok) => Err(Error::Syntax(format!("trailing input starting at {tok:?}"))),
        }
    }
}
