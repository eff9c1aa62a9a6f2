//! Projection of one location embedding to a small set of conditioning
//! tokens via a two-layer perceptron with a tanh between the layers. The
//! hidden width equals `n_loc * d_token`.

use super::LocationEmbedding;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Init, Linear, ParamStore, Session};
use ndarray::{Array1, Array2};

/// Conditioning tokens: `n_loc` rows of `d_token` features.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    pub tokens: Array2<f64>,
}

impl TokenSet {
    pub fn n_loc(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn d_token(&self) -> usize {
        self.tokens.ncols()
    }
}

/// Plain (graph-free) MLP parameters for [`project_to_tokens`].
#[derive(Debug, Clone)]
pub struct ProjectionParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl ProjectionParams {
    pub fn validate(&self, embed_dim: usize, n_loc: usize, d_token: usize) -> Result<()> {
        let hidden = n_loc * d_token;
        let expect = [
            (self.w1.dim(), (embed_dim, hidden), "w1"),
            (self.w2.dim(), (hidden, hidden), "w2"),
        ];
        for (got, want, name) in expect {
            if got != want {
                return Err(Error::config(format!(
                    "projection {name} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        if self.b1.len() != hidden || self.b2.len() != hidden {
            return Err(Error::config(format!(
                "projection biases must have length {hidden}"
            )));
        }
        Ok(())
    }

    pub fn zeros(embed_dim: usize, n_loc: usize, d_token: usize) -> Self {
        let hidden = n_loc * d_token;
        ProjectionParams {
            w1: Array2::zeros((embed_dim, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, hidden)),
            b2: Array1::zeros(hidden),
        }
    }
}

/// tokens = reshape(tanh(e·W1 + b1)·W2 + b2, [n_loc, d_token]).
pub fn project_to_tokens(
    e: &LocationEmbedding,
    params: &ProjectionParams,
    n_loc: usize,
    d_token: usize,
) -> Result<TokenSet> {
    if n_loc == 0 || d_token == 0 {
        return Err(Error::config("n_loc and d_token must be positive"));
    }
    params.validate(e.dim(), n_loc, d_token)?;
    let hidden = (e.vector.dot(&params.w1) + &params.b1).mapv(f64::tanh);
    let out = hidden.dot(&params.w2) + &params.b2;
    let tokens = out.into_shape_with_order((n_loc, d_token)).unwrap();
    Ok(TokenSet { tokens })
}

/// The same projection as a trainable module for the generator path.
#[derive(Debug, Clone)]
pub struct TokenProjector {
    l1: Linear,
    l2: Linear,
    pub embed_dim: usize,
    pub n_loc: usize,
    pub d_token: usize,
}

impl TokenProjector {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        prefix: &str,
        embed_dim: usize,
        n_loc: usize,
        d_token: usize,
    ) -> Self {
        let hidden = n_loc * d_token;
        let l1 = Linear::new(store, init, &format!("{prefix}.fc1"), embed_dim, hidden, 1.0);
        let l2 = Linear::new(store, init, &format!("{prefix}.fc2"), hidden, hidden, 1.0);
        TokenProjector {
            l1,
            l2,
            embed_dim,
            n_loc,
            d_token,
        }
    }

    /// [B, D] embeddings -> [B, n_loc, d_token] tokens.
    pub fn forward(&self, s: &Session, embeddings: Var) -> Var {
        let g = s.graph;
        let shape = g.shape(embeddings);
        assert_eq!(shape.len(), 2, "token projector expects [B, D]");
        assert_eq!(shape[1], self.embed_dim, "embedding dimension mismatch");
        let batch = shape[0];
        let h = g.tanh(self.l1.forward(s, embeddings));
        let out = self.l2.forward(s, h);
        g.reshape(out, &[batch, self.n_loc, self.d_token])
    }

    /// Copy the module's current weights out of the store as plain params.
    pub fn snapshot(&self, store: &ParamStore) -> ProjectionParams {
        let to2 = |id| {
            store
                .value(id)
                .clone()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap()
        };
        let to1 = |id| {
            store
                .value(id)
                .clone()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap()
        };
        ProjectionParams {
            w1: to2(self.l1.w),
            b1: to1(self.l1.b),
            w2: to2(self.l2.w),
            b2: to1(self.l2.b),
        }
    }
}
