use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Endo,
    Exo,
    Meta,
}

impl TokenKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenKind::Endo => "endo",
            TokenKind::Exo => "exo",
            TokenKind::Meta => "meta",
        }
    }
}

/// K × D tokens with one kind label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBlock {
    pub tokens: Array2<f64>,
    pub kinds: Vec<TokenKind>,
}

impl TokenBlock {
    pub fn new(tokens: Array2<f64>, kind: TokenKind) -> Self {
        let kinds = vec![kind; tokens.nrows()];
        TokenBlock { tokens, kinds }
    }

    pub fn empty(dim: usize) -> Self {
        TokenBlock {
            tokens: Array2::zeros((0, dim)),
            kinds: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn count(&self, kind: TokenKind) -> usize {
        self.kinds.iter().filter(|&&k| k == kind).count()
    }

    /// Row indices of the given kind.
    pub fn indices(&self, kind: TokenKind) -> Vec<usize> {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, &k)| k == kind)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Concatenate endo ‖ exo ‖ meta.
pub fn informative_concat(endo: &TokenBlock, exo: &TokenBlock, meta: &TokenBlock) -> Result<TokenBlock> {
    let d = endo.dim();
    for (name, block) in [("exo", exo), ("meta", meta)] {
        if block.dim() != d {
            return Err(Error::Shape(format!(
                "{name} tokens have dim {}, endogenous tokens have {d}",
                block.dim()
            )));
        }
    }
    let tokens = concatenate(Axis(0), &[endo.tokens.view(), exo.tokens.view(), meta.tokens.view()])
        .map_err(|e| Error::Shape(e.to_string()))?;
    let kinds = endo
        .kinds
        .iter()
        .chain(&exo.kinds)
        .chain(&meta.kinds)
        .copied()
        .collect();
    Ok(TokenBlock { tokens, kinds })
}
