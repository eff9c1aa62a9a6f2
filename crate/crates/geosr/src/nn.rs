//! Network building blocks on top of the autodiff graph.
//!
//! Parameters live in a [`ParamStore`] (name -> f64 array, insertion order is
//! the canonical order for optimizers and checkpoints). A [`Session`] binds a
//! store to one `Graph` for a forward pass, either trainable (parameters are
//! gradient leaves) or frozen (constants).

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::cell::RefCell;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    /// Position in the owning store's insertion order.
    pub fn index(self) -> usize {
        self.0
    }
}

pub struct ParamStore {
    names: Vec<String>,
    values: Vec<ArrayD<f64>>,
    index: BTreeMap<String, usize>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name: {name}"
        );
        self.names.push(name.clone());
        self.values.push(value);
        self.index.insert(name, self.values.len() - 1);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    /// Overwrite a parameter by name, validating the shape.
    pub fn load(&mut self, name: &str, value: ArrayD<f64>) -> Result<()> {
        let &i = self
            .index
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        if self.values[i].shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for `{name}`: expected {:?}, found {:?}",
                self.values[i].shape(),
                value.shape()
            )));
        }
        self.values[i] = value;
        Ok(())
    }

    /// Error if any parameter contains a NaN or infinity.
    pub fn check_finite(&self, step: u64) -> Result<()> {
        for (name, v) in self.iter() {
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite {
                    component: format!("parameter {name}"),
                    step,
                });
            }
        }
        Ok(())
    }
}

/// Binds a parameter store to a graph for one forward pass.
pub struct Session<'a> {
    pub graph: &'a Graph,
    store: &'a ParamStore,
    bound: RefCell<Vec<Option<Var>>>,
    trainable: bool,
}

impl<'a> Session<'a> {
    pub fn trainable(graph: &'a Graph, store: &'a ParamStore) -> Self {
        Self::new(graph, store, true)
    }

    pub fn frozen(graph: &'a Graph, store: &'a ParamStore) -> Self {
        Self::new(graph, store, false)
    }

    fn new(graph: &'a Graph, store: &'a ParamStore, trainable: bool) -> Self {
        Session {
            graph,
            store,
            bound: RefCell::new(vec![None; store.len()]),
            trainable,
        }
    }

    /// Graph node for a parameter, bound lazily on first use.
    pub fn param(&self, id: ParamId) -> Var {
        let mut bound = self.bound.borrow_mut();
        if let Some(v) = bound[id.0] {
            return v;
        }
        let value = self.store.value(id).clone();
        let var = if self.trainable {
            self.graph.leaf(value)
        } else {
            self.graph.constant(value)
        };
        bound[id.0] = Some(var);
        var
    }

    /// All parameters bound during the pass, in store order.
    pub fn bound_params(&self) -> Vec<(ParamId, Var)> {
        self.bound
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|var| (ParamId(i), var)))
            .collect()
    }
}

/// Weight initialization helpers; all draws come from the caller's RNG so
/// construction order fully determines the initial state.
pub struct Init<'r> {
    pub rng: &'r mut ChaCha8Rng,
}

impl<'r> Init<'r> {
    pub fn new(rng: &'r mut ChaCha8Rng) -> Self {
        Init { rng }
    }

    /// Kaiming-normal fan-in initialization scaled by `gain`.
    pub fn kaiming(&mut self, shape: &[usize], fan_in: usize, gain: f64) -> ArrayD<f64> {
        let std = gain * (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).unwrap();
        ArrayD::from_shape_fn(IxDyn(shape), |_| dist.sample(self.rng))
    }

    pub fn zeros(&mut self, shape: &[usize]) -> ArrayD<f64> {
        ArrayD::zeros(IxDyn(shape))
    }

    pub fn ones(&mut self, shape: &[usize]) -> ArrayD<f64> {
        ArrayD::ones(IxDyn(shape))
    }
}

/// 3x3-style convolution layer with zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        prefix: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        gain: f64,
    ) -> Self {
        let fan_in = in_c * k * k;
        let w = store.add(format!("{prefix}.weight"), init.kaiming(&[out_c, in_c, k, k], fan_in, gain));
        let b = store.add(format!("{prefix}.bias"), init.zeros(&[out_c]));
        Conv2d { w, b, stride, pad }
    }

    pub fn forward(&self, s: &Session, x: Var) -> Var {
        s.graph
            .conv2d(x, s.param(self.w), s.param(self.b), self.stride, self.pad)
    }
}

/// Dense layer applied over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    in_f: usize,
    out_f: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        prefix: &str,
        in_f: usize,
        out_f: usize,
        gain: f64,
    ) -> Self {
        let w = store.add(format!("{prefix}.weight"), init.kaiming(&[in_f, out_f], in_f, gain));
        let b = store.add(format!("{prefix}.bias"), init.zeros(&[out_f]));
        Linear { w, b, in_f, out_f }
    }

    pub fn forward(&self, s: &Session, x: Var) -> Var {
        let g = s.graph;
        let shape = g.shape(x);
        let (lead, feat) = shape.split_at(shape.len() - 1);
        assert_eq!(feat[0], self.in_f, "linear: input feature mismatch");
        let rows: usize = lead.iter().product();
        let flat = g.reshape(x, &[rows, self.in_f]);
        let out = g.matmul(flat, s.param(self.w));
        let out = g.add_bias(out, s.param(self.b));
        let mut out_shape = lead.to_vec();
        out_shape.push(self.out_f);
        g.reshape(out, &out_shape)
    }
}

/// Layer normalization over the last axis.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, init: &mut Init, prefix: &str, dim: usize) -> Self {
        let gain = store.add(format!("{prefix}.gain"), init.ones(&[dim]));
        let bias = store.add(format!("{prefix}.bias"), init.zeros(&[dim]));
        LayerNorm { gain, bias }
    }

    pub fn forward(&self, s: &Session, x: Var) -> Var {
        s.graph.layer_norm(x, s.param(self.gain), s.param(self.bias))
    }
}

/// Multi-head attention over token sequences [G, N, C].
///
/// For self-attention pass the same node as query and key/value source; for
/// cross-attention the key/value source may have a different feature size.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    pub heads: usize,
    pub model_dim: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        prefix: &str,
        model_dim: usize,
        kv_dim: usize,
        heads: usize,
    ) -> Self {
        assert!(model_dim % heads == 0, "model_dim must divide by heads");
        // small output-projection gain keeps the residual branch gentle at init
        let q = Linear::new(store, init, &format!("{prefix}.q"), model_dim, model_dim, 1.0);
        let k = Linear::new(store, init, &format!("{prefix}.k"), kv_dim, model_dim, 1.0);
        let v = Linear::new(store, init, &format!("{prefix}.v"), kv_dim, model_dim, 1.0);
        let o = Linear::new(store, init, &format!("{prefix}.o"), model_dim, model_dim, 0.2);
        MultiHeadAttention {
            q,
            k,
            v,
            o,
            heads,
            model_dim,
        }
    }

    pub fn forward(&self, s: &Session, queries: Var, keys_values: Var) -> Var {
        let g = s.graph;
        let qs = g.shape(queries);
        let ks = g.shape(keys_values);
        assert_eq!(qs.len(), 3, "attention expects [G, N, C]");
        assert_eq!(ks.len(), 3, "attention expects [G, N, C]");
        assert_eq!(qs[0], ks[0], "attention batch mismatch");
        let (groups, nq, nk) = (qs[0], qs[1], ks[1]);
        let h = self.heads;
        let dh = self.model_dim / h;

        let q = self.q.forward(s, queries);
        let k = self.k.forward(s, keys_values);
        let v = self.v.forward(s, keys_values);

        let split = |x: Var, n: usize| {
            let x = g.reshape(x, &[groups, n, h, dh]);
            let x = g.permute(x, &[0, 2, 1, 3]);
            g.reshape(x, &[groups * h, n, dh])
        };
        let qh = split(q, nq);
        let kh = split(k, nk);
        let vh = split(v, nk);

        let scores = g.scale(g.bmm_nt(qh, kh), 1.0 / (dh as f64).sqrt());
        let attn = g.softmax_last(scores);
        let ctx = g.bmm(attn, vh); // [G*h, Nq, dh]

        let merged = g.reshape(ctx, &[groups, h, nq, dh]);
        let merged = g.permute(merged, &[0, 2, 1, 3]);
        let merged = g.reshape(merged, &[groups, nq, self.model_dim]);
        self.o.forward(s, merged)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rand_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
        use rand::Rng;
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn store_load_validates_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut init = Init::new(&mut rng);
        let mut store = ParamStore::new();
        let id = store.add("w", init.kaiming(&[2, 3], 3, 1.0));
        assert!(store.load("w", ArrayD::zeros(IxDyn(&[2, 3]))).is_ok());
        assert!(store.load("w", ArrayD::zeros(IxDyn(&[3, 2]))).is_err());
        assert!(store.load("nope", ArrayD::zeros(IxDyn(&[1]))).is_err());
        assert_eq!(store.name(id), "w");
    }

    #[test]
    fn frozen_session_params_get_no_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut init = Init::new(&mut rng);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, &mut init, "l", 4, 2, 1.0);
        let g = Graph::new();
        let s = Session::frozen(&g, &store);
        let x = g.leaf(rand_input(&mut rng, &[3, 4]));
        let y = lin.forward(&s, x);
        let loss = g.mean_all(y);
        let grads = g.backward(loss);
        assert!(grads.get(s.param(lin.w)).is_none());
        assert!(grads.get(x).is_some());
    }

    #[test]
    fn attention_gradients_reach_all_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut init = Init::new(&mut rng);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, &mut init, "attn", 8, 6, 2);
        let g = Graph::new();
        let s = Session::trainable(&g, &store);
        let q = g.constant(rand_input(&mut rng, &[2, 5, 8]));
        let kv = g.constant(rand_input(&mut rng, &[2, 3, 6]));
        let y = mha.forward(&s, q, kv);
        assert_eq!(g.shape(y), vec![2, 5, 8]);
        let loss = g.mean_all(g.mul(y, y));
        let grads = g.backward(loss);
        for (id, var) in s.bound_params() {
            let grad = grads.get(var);
            assert!(grad.is_some(), "no grad for {}", store.name(id));
            let nonzero = grad.unwrap().iter().any(|&v| v != 0.0);
            assert!(nonzero, "all-zero grad for {}", store.name(id));
        }
    }

    #[test]
    fn single_key_attention_is_constant_over_queries() {
        // one key/value token: softmax over one entry is 1, so every query
        // receives the same context vector
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut init = Init::new(&mut rng);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, &mut init, "attn", 8, 4, 2);
        let g = Graph::new();
        let s = Session::frozen(&g, &store);
        let q = g.constant(rand_input(&mut rng, &[1, 7, 8]));
        let kv = g.constant(rand_input(&mut rng, &[1, 1, 4]));
        let y = g.value(mha.forward(&s, q, kv));
        let row0: Vec<f64> = (0..8).map(|c| y[[0, 0, c]]).collect();
        for n in 1..7 {
            for c in 0..8 {
                assert!((y[[0, n, c]] - row0[c]).abs() < 1e-12);
            }
        }
    }
}
