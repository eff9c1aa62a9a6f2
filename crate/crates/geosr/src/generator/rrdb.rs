//! Residual-in-residual dense blocks: three dense sub-blocks of five densely
//! connected convolutions each, residual scaling 0.2 at both levels, no
//! normalization layers.

use crate::autodiff::Var;
use crate::nn::{Conv2d, Init, ParamStore, Session};

pub(crate) const LRELU_SLOPE: f64 = 0.2;
pub(crate) const RESIDUAL_SCALE: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct DenseBlock {
    convs: Vec<Conv2d>,
}

impl DenseBlock {
    pub fn new(store: &mut ParamStore, init: &mut Init, prefix: &str, nf: usize, gc: usize) -> Self {
        let mut convs = Vec::with_capacity(5);
        for i in 0..5 {
            let in_c = nf + i * gc;
            let out_c = if i == 4 { nf } else { gc };
            // ESRGAN-style damped init keeps the residual branches small
            convs.push(Conv2d::new(
                store,
                init,
                &format!("{prefix}.conv{}", i + 1),
                in_c,
                out_c,
                3,
                1,
                1,
                0.1,
            ));
        }
        DenseBlock { convs }
    }

    pub fn forward(&self, s: &Session, x: Var) -> Var {
        let g = s.graph;
        let mut feats = vec![x];
        for (i, conv) in self.convs.iter().enumerate() {
            let input = if feats.len() == 1 {
                feats[0]
            } else {
                g.concat_channels(&feats)
            };
            let y = conv.forward(s, input);
            if i < 4 {
                feats.push(g.leaky_relu(y, LRELU_SLOPE));
            } else {
                return g.add(x, g.scale(y, RESIDUAL_SCALE));
            }
        }
        unreachable!()
    }
}

#[derive(Debug, Clone)]
pub struct Rrdb {
    blocks: Vec<DenseBlock>,
}

impl Rrdb {
    pub fn new(store: &mut ParamStore, init: &mut Init, prefix: &str, nf: usize, gc: usize) -> Self {
        let blocks = (0..3)
            .map(|i| DenseBlock::new(store, init, &format!("{prefix}.dense{i}"), nf, gc))
            .collect();
        Rrdb { blocks }
    }

    pub fn forward(&self, s: &Session, x: Var) -> Var {
        let g = s.graph;
        let mut y = x;
        for b in &self.blocks {
            y = b.forward(s, y);
        }
        // residual branch is the chain's deviation from identity, so zero
        // weights reproduce the input exactly
        g.add(x, g.scale(g.sub(y, x), RESIDUAL_SCALE))
    }
}
