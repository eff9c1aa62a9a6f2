//! Minimal reverse-mode automatic differentiation on `f64` ndarrays.
//!
//! A `Graph` is a tape of nodes created during one forward pass. Every op
//! records its parents and a backward closure; `Graph::backward` walks the
//! tape in reverse and accumulates gradients for every node that requires
//! them. The engine is deliberately single-threaded: given identical inputs
//! it reproduces identical bits, which the training loop and the checkpoint
//! resume tests rely on.

mod conv;

use ndarray::{ArrayD, Axis, IxDyn};
use std::cell::RefCell;
use std::rc::Rc;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) struct BackwardCtx<'a> {
    pub values: &'a [Rc<ArrayD<f64>>],
    pub requires: &'a [bool],
}

type BackwardFn = Box<dyn Fn(&BackwardCtx, usize, &ArrayD<f64>, &mut Vec<Option<ArrayD<f64>>>)>;

struct Inner {
    values: Vec<Rc<ArrayD<f64>>>,
    backward: Vec<Option<BackwardFn>>,
    requires: Vec<bool>,
}

/// Tape of one forward computation.
pub struct Graph {
    inner: RefCell<Inner>,
}

/// Gradients produced by [`Graph::backward`], indexed by `Var`.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<ArrayD<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

pub(crate) fn accumulate(
    grads: &mut Vec<Option<ArrayD<f64>>>,
    requires: &[bool],
    id: usize,
    contrib: ArrayD<f64>,
) {
    if !requires[id] {
        return;
    }
    match &mut grads[id] {
        Some(g) => *g += &contrib,
        slot @ None => *slot = Some(contrib),
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            inner: RefCell::new(Inner {
                values: Vec::new(),
                backward: Vec::new(),
                requires: Vec::new(),
            }),
        }
    }

    fn push(&self, value: ArrayD<f64>, requires: bool, back: Option<BackwardFn>) -> Var {
        let mut inner = self.inner.borrow_mut();
        inner.values.push(Rc::new(value));
        inner.backward.push(back);
        inner.requires.push(requires);
        Var(inner.values.len() - 1)
    }

    /// Leaf whose gradient will be tracked (parameters, differentiable inputs).
    pub fn leaf(&self, value: ArrayD<f64>) -> Var {
        self.push(value, true, None)
    }

    /// Leaf treated as a constant: no gradient is propagated into it.
    pub fn constant(&self, value: ArrayD<f64>) -> Var {
        self.push(value, false, None)
    }

    /// Cheap shared handle to a node's value.
    pub fn value(&self, v: Var) -> Rc<ArrayD<f64>> {
        Rc::clone(&self.inner.borrow().values[v.0])
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar_value on non-scalar node");
        *val.iter().next().unwrap()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.inner.borrow().values[v.0].shape().to_vec()
    }

    fn requires(&self, v: Var) -> bool {
        self.inner.borrow().requires[v.0]
    }

    fn unary(
        &self,
        a: Var,
        value: ArrayD<f64>,
        back: impl Fn(&BackwardCtx, usize, &ArrayD<f64>, &mut Vec<Option<ArrayD<f64>>>) + 'static,
    ) -> Var {
        let req = self.requires(a);
        self.push(value, req, if req { Some(Box::new(back)) } else { None })
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        value: ArrayD<f64>,
        back: impl Fn(&BackwardCtx, usize, &ArrayD<f64>, &mut Vec<Option<ArrayD<f64>>>) + 'static,
    ) -> Var {
        let req = self.requires(a) || self.requires(b);
        self.push(value, req, if req { Some(Box::new(back)) } else { None })
    }

    /// Reverse pass from a single-element root. Returns gradients for every
    /// node that required them; leaf gradients stay retrievable.
    pub fn backward(&self, root: Var) -> Gradients {
        let inner = self.inner.borrow();
        let n = inner.values.len();
        let root_val = &inner.values[root.0];
        assert_eq!(root_val.len(), 1, "backward root must be a single element");
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(ArrayD::ones(root_val.raw_dim()));
        let ctx = BackwardCtx {
            values: &inner.values,
            requires: &inner.requires,
        };
        for i in (0..=root.0).rev() {
            if inner.backward[i].is_none() {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let back = inner.backward[i].as_ref().unwrap();
            back(&ctx, i, &g, &mut grads);
        }
        Gradients { grads }
    }

    // ---- elementwise -------------------------------------------------------

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add: shape mismatch");
        let out = &*va + &*vb;
        self.binary(a, b, out, move |ctx, _, g, grads| {
            accumulate(grads, ctx.requires, a.0, g.clone());
            accumulate(grads, ctx.requires, b.0, g.clone());
        })
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub: shape mismatch");
        let out = &*va - &*vb;
        self.binary(a, b, out, move |ctx, _, g, grads| {
            accumulate(grads, ctx.requires, a.0, g.clone());
            accumulate(grads, ctx.requires, b.0, -g.clone());
        })
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul: shape mismatch");
        let out = &*va * &*vb;
        self.binary(a, b, out, move |ctx, _, g, grads| {
            accumulate(grads, ctx.requires, a.0, g * &*ctx.values[b.0]);
            accumulate(grads, ctx.requires, b.0, g * &*ctx.values[a.0]);
        })
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let out = self.value(a).as_ref() * c;
        self.unary(a, out, move |ctx, _, g, grads| {
            accumulate(grads, ctx.requires, a.0, g * c);
        })
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Var {
        let va = self.value(a);
        let out = va.mapv(|x| if x >= 0.0 { x } else { slope * x });
        self.unary(a, out, move |ctx, _, g, grads| {
            let x = &ctx.values[a.0];
            let mut gx = g.clone();
            gx.zip_mut_with(x, |gv, &xv| {
                if xv < 0.0 {
                    *gv *= slope;
                }
            });
            accumulate(grads, ctx.requires, a.0, gx);
        })
    }

    pub fn tanh(&self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.unary(a, out, move |ctx, out_id, g, grads| {
            let y = &ctx.values[out_id];
            let mut gx = g.clone();
            gx.zip_mut_with(y, |gv, &yv| *gv *= 1.0 - yv * yv);
            accumulate(grads, ctx.requires, a.0, gx);
        })
    }

    /// Numerically stable softplus: ln(1 + e^x).
    pub fn softplus(&self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
        self.unary(a, out, move |ctx, _, g, grads| {
            let x = &ctx.values[a.0];
            let mut gx = g.clone();
            gx.zip_mut_with(x, |gv, &xv| *gv *= sigmoid(xv));
            accumulate(grads, ctx.requires, a.0, gx);
        })
    }

    // ---- reductions --------------------------------------------------------

    /// Mean of all elements, as a shape-[1] node.
    pub fn mean_all(&self, a: Var) -> Var {
        let va = self.value(a);
        let n = va.len() as f64;
        let out = ArrayD::from_elem(IxDyn(&[1]), va.sum() / n);
        self.unary(a, out, move |ctx, _, g, grads| {
            let shape = ctx.values[a.0].raw_dim();
            let gv = g[[0]] / n;
            accumulate(grads, ctx.requires, a.0, ArrayD::from_elem(shape, gv));
        })
    }

    /// Sum over the last axis: [..., n] -> [...].
    pub fn sum_last(&self, a: Var) -> Var {
        let va = self.value(a);
        let last = va.ndim() - 1;
        let out = va.sum_axis(Axis(last));
        self.unary(a, out, move |ctx, _, g, grads| {
            let x = &ctx.values[a.0];
            let n = x.shape()[x.ndim() - 1];
            let mut gx = ArrayD::zeros(x.raw_dim());
            for (mut lane, &gv) in gx.rows_mut().into_iter().zip(g.iter()) {
                lane.fill(gv);
            }
            debug_assert_eq!(gx.len(), g.len() * n);
            accumulate(grads, ctx.requires, a.0, gx);
        })
    }

    /// Mean absolute difference of two equal-shaped arrays, shape [1].
    pub fn l1_diff(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "l1_diff: shape mismatch");
        let n = va.len() as f64;
        let sum: f64 = va.iter().zip(vb.iter()).map(|(x, y)| (x - y).abs()).sum();
        let out = ArrayD::from_elem(IxDyn(&[1]), sum / n);
        self.binary(a, b, out, move |ctx, _, g, grads| {
            let (x, y) = (&ctx.values[a.0], &ctx.values[b.0]);
            let g0 = g[[0]] / n;
            let mut sign = ArrayD::zeros(x.raw_dim());
            ndarray::Zip::from(&mut sign).and(&**x).and(&**y).for_each(|s, &xv, &yv| {
                *s = if xv > yv {
                    g0
                } else if xv < yv {
                    -g0
                } else {
                    0.0
                };
            });
            accumulate(grads, ctx.requires, b.0, -sign.clone());
            accumulate(grads, ctx.requires, a.0, sign);
        })
    }

    // ---- shape -------------------------------------------------------------

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let va = self.value(a);
        assert_eq!(
            va.len(),
            shape.iter().product::<usize>(),
            "reshape: element count mismatch"
        );
        let out = ArrayD::from_shape_vec(IxDyn(shape), va.iter().copied().collect()).unwrap();
        let old_shape: Vec<usize> = va.shape().to_vec();
        self.unary(a, out, move |ctx, _, g, grads| {
            let gx =
                ArrayD::from_shape_vec(IxDyn(&old_shape), g.iter().copied().collect()).unwrap();
            accumulate(grads, ctx.requires, a.0, gx);
        })
    }

    pub fn permute(&self, a: Var, axes: &[usize]) -> Var {
        let va = self.value(a);
        assert_eq!(va.ndim(), axes.len(), "permute: rank mismatch");
        let out = va
            .view()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .to_owned();
        let mut inverse = vec![0usize; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        self.unary(a, out, move |ctx, _, g, grads| {
            let gx = g
                .view()
                .permuted_axes(IxDyn(&inverse))
                .as_standard_layout()
                .to_owned();
            accumulate(grads, ctx.requires, a.0, gx);
        })
    }

    /// Concatenate along axis 1 (the channel axis of NCHW tensors).
    pub fn concat_channels(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_channels: shape mismatch");
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let widths: Vec<usize> = values.iter().map(|v| v.shape()[1]).collect();
        let req = parts.iter().any(|&p| self.requires(p));
        let back: BackwardFn = Box::new(move |ctx, _, g, grads| {
            let mut offset = 0;
            for (&id, &w) in ids.iter().zip(widths.iter()) {
                let slice = g
                    .slice_axis(Axis(1), ndarray::Slice::from(offset..offset + w))
                    .as_standard_layout()
                    .to_owned();
                accumulate(grads, ctx.requires, id, slice);
                offset += w;
            }
        });
        self.push(out, req, if req { Some(back) } else { None })
    }

    /// Broadcast-add a rank-1 bias over the last axis: [..., F] + [F].
    pub fn add_bias(&self, a: Var, bias: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(bias));
        let f = *va.shape().last().unwrap();
        assert_eq!(vb.shape(), [f], "add_bias: bias length mismatch");
        let mut out = va.as_ref().clone();
        let bias_row = vb.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        for mut lane in out.rows_mut() {
            lane.zip_mut_with(&bias_row, |o, &b| *o += b);
        }
        self.binary(a, bias, out, move |ctx, _, g, grads| {
            accumulate(grads, ctx.requires, a.0, g.clone());
            let mut gb = ArrayD::zeros(IxDyn(&[f]));
            for lane in g.rows() {
                gb.zip_mut_with(&lane.into_dyn(), |s, &gv| *s += gv);
            }
            accumulate(grads, ctx.requires, bias.0, gb);
        })
    }

    // ---- softmax / normalization -------------------------------------------

    /// Row-wise softmax over the last axis.
    pub fn softmax_last(&self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = va.as_ref().clone();
        for mut row in out.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.unary(a, out, move |ctx, out_id, g, grads| {
            let y = &ctx.values[out_id];
            let mut gx = ArrayD::zeros(y.raw_dim());
            for ((mut gx_row, y_row), g_row) in
                gx.rows_mut().into_iter().zip(y.rows()).zip(g.rows())
            {
                let dot: f64 = y_row.iter().zip(g_row.iter()).map(|(yv, gv)| yv * gv).sum();
                for ((gxv, &yv), &gv) in gx_row.iter_mut().zip(y_row.iter()).zip(g_row.iter()) {
                    *gxv = yv * (gv - dot);
                }
            }
            accumulate(grads, ctx.requires, a.0, gx);
        })
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var) -> Var {
        const EPS: f64 = 1e-5;
        let (vx, vg, vb) = (self.value(x), self.value(gain), self.value(bias));
        let f = *vx.shape().last().unwrap();
        assert_eq!(vg.shape(), [f], "layer_norm: gain length mismatch");
        assert_eq!(vb.shape(), [f], "layer_norm: bias length mismatch");
        let mut out = vx.as_ref().clone();
        for mut row in out.rows_mut() {
            let mean = row.sum() / f as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f as f64;
            let inv = 1.0 / (var + EPS).sqrt();
            for (i, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * vg[[i]] + vb[[i]];
            }
        }
        let req = self.requires(x) || self.requires(gain) || self.requires(bias);
        let back: BackwardFn = Box::new(move |ctx, _, g, grads| {
            let xv = &ctx.values[x.0];
            let gv = &ctx.values[gain.0];
            let n = f as f64;
            let mut gx = ArrayD::zeros(xv.raw_dim());
            let mut ggain = ArrayD::zeros(IxDyn(&[f]));
            let mut gbias = ArrayD::zeros(IxDyn(&[f]));
            for ((mut gx_row, x_row), g_row) in
                gx.rows_mut().into_iter().zip(xv.rows()).zip(g.rows())
            {
                let mean = x_row.sum() / n;
                let var = x_row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let inv = 1.0 / (var + EPS).sqrt();
                let xhat: Vec<f64> = x_row.iter().map(|v| (v - mean) * inv).collect();
                let d: Vec<f64> = g_row
                    .iter()
                    .enumerate()
                    .map(|(i, gout)| gout * gv[[i]])
                    .collect();
                let d_mean = d.iter().sum::<f64>() / n;
                let dx_mean = d.iter().zip(&xhat).map(|(dv, xh)| dv * xh).sum::<f64>() / n;
                for i in 0..f {
                    gx_row[i] = (d[i] - d_mean - xhat[i] * dx_mean) * inv;
                    ggain[[i]] += g_row[i] * xhat[i];
                    gbias[[i]] += g_row[i];
                }
            }
            accumulate(grads, ctx.requires, x.0, gx);
            accumulate(grads, ctx.requires, gain.0, ggain);
            accumulate(grads, ctx.requires, bias.0, gbias);
        });
        self.push(out, req, if req { Some(back) } else { None })
    }

    // ---- matrix products ---------------------------------------------------

    /// [m,k] x [k,n] -> [m,n].
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let a2 = va.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let b2 = vb.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        assert_eq!(a2.ncols(), b2.nrows(), "matmul: inner dimension mismatch");
        let out = a2.dot(&b2).into_dyn();
        self.binary(a, b, out, move |ctx, _, g, grads| {
            let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let av = ctx.values[a.0]
                .view()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap();
            let bv = ctx.values[b.0]
                .view()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap();
            if ctx.requires[a.0] {
                accumulate(grads, ctx.requires, a.0, g2.dot(&bv.t()).into_dyn());
            }
            if ctx.requires[b.0] {
                accumulate(grads, ctx.requires, b.0, av.t().dot(&g2).into_dyn());
            }
        })
    }

    /// Batched [g,m,k] x [g,k,n] -> [g,m,n].
    pub fn bmm(&self, a: Var, b: Var) -> Var {
        self.bmm_impl(a, b, false)
    }

    /// Batched [g,m,k] x [g,n,k] -> [g,m,n] (second operand transposed).
    pub fn bmm_nt(&self, a: Var, b: Var) -> Var {
        self.bmm_impl(a, b, true)
    }

    fn bmm_impl(&self, a: Var, b: Var, transpose_b: bool) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let a3 = va.view().into_dimensionality::<ndarray::Ix3>().unwrap();
        let b3 = vb.view().into_dimensionality::<ndarray::Ix3>().unwrap();
        let (g_, m, k) = a3.dim();
        assert_eq!(b3.dim().0, g_, "bmm: batch mismatch");
        let n = if transpose_b { b3.dim().1 } else { b3.dim().2 };
        let k2 = if transpose_b { b3.dim().2 } else { b3.dim().1 };
        assert_eq!(k, k2, "bmm: inner dimension mismatch");
        let mut out = ndarray::Array3::<f64>::zeros((g_, m, n));
        for gi in 0..g_ {
            let ai = a3.index_axis(Axis(0), gi);
            let bi = b3.index_axis(Axis(0), gi);
            let prod = if transpose_b {
                ai.dot(&bi.t())
            } else {
                ai.dot(&bi)
            };
            out.index_axis_mut(Axis(0), gi).assign(&prod);
        }
        self.binary(a, b, out.into_dyn(), move |ctx, _, g, grads| {
            let g3 = g.view().into_dimensionality::<ndarray::Ix3>().unwrap();
            let av = ctx.values[a.0]
                .view()
                .into_dimensionality::<ndarray::Ix3>()
                .unwrap();
            let bv = ctx.values[b.0]
                .view()
                .into_dimensionality::<ndarray::Ix3>()
                .unwrap();
            if ctx.requires[a.0] {
                let mut ga = ndarray::Array3::<f64>::zeros(av.dim());
                for gi in 0..av.dim().0 {
                    let gs = g3.index_axis(Axis(0), gi);
                    let bs = bv.index_axis(Axis(0), gi);
                    let contrib = if transpose_b { gs.dot(&bs) } else { gs.dot(&bs.t()) };
                    ga.index_axis_mut(Axis(0), gi).assign(&contrib);
                }
                accumulate(grads, ctx.requires, a.0, ga.into_dyn());
            }
            if ctx.requires[b.0] {
                let mut gb = ndarray::Array3::<f64>::zeros(bv.dim());
                for gi in 0..bv.dim().0 {
                    let gs = g3.index_axis(Axis(0), gi);
                    let as_ = av.index_axis(Axis(0), gi);
                    let contrib = if transpose_b {
                        gs.t().dot(&as_)
                    } else {
                        as_.t().dot(&gs)
                    };
                    gb.index_axis_mut(Axis(0), gi).assign(&contrib);
                }
                accumulate(grads, ctx.requires, b.0, gb.into_dyn());
            }
        })
    }

    /// Scalar node carrying an externally computed value whose gradient with
    /// respect to `wrt` was supplied by the caller (aux-loss hook interface).
    pub fn injected_scalar(&self, value: f64, wrt: Var, grad_wrt: ArrayD<f64>) -> Var {
        let shape = self.shape(wrt);
        assert_eq!(grad_wrt.shape(), &shape[..], "injected_scalar: gradient shape mismatch");
        let out = ArrayD::from_elem(IxDyn(&[1]), value);
        self.unary(wrt, out, move |ctx, _, g, grads| {
            accumulate(grads, ctx.requires, wrt.0, &grad_wrt * g[[0]]);
        })
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
