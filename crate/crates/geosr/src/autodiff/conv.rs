//! Convolution, nearest upsampling and pooling nodes.
//!
//! Convolution is im2col + one matrix product per batch item; the backward
//! pass rebuilds the column matrix instead of caching it, trading a little
//! time for tape memory.

use super::{accumulate, Graph, Var};
use ndarray::{Array2, ArrayD, ArrayView3, Axis, IxDyn};

fn conv_out_side(side: usize, k: usize, stride: usize, pad: usize) -> usize {
    (side + 2 * pad - k) / stride + 1
}

fn im2col(
    x: ArrayView3<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<f64> {
    let (cin, h, w) = x.dim();
    let mut cols = Array2::<f64>::zeros((cin * kh * kw, ho * wo));
    for c in 0..cin {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as i64 - pad as i64;
                    if iy < 0 || iy >= h as i64 {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as i64 - pad as i64;
                        if ix >= 0 && ix < w as i64 {
                            cols[[row, oy * wo + ox]] = x[[c, iy as usize, ix as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(
    gcols: &Array2<f64>,
    gx: &mut ndarray::ArrayViewMut3<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    let (cin, h, w) = gx.dim();
    for c in 0..cin {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as i64 - pad as i64;
                    if iy < 0 || iy >= h as i64 {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as i64 - pad as i64;
                        if ix >= 0 && ix < w as i64 {
                            gx[[c, iy as usize, ix as usize]] += gcols[[row, oy * wo + ox]];
                        }
                    }
                }
            }
        }
    }
}

impl Graph {
    /// 2D convolution with zero padding.
    ///
    /// * `x` — [B, Cin, H, W]
    /// * `w` — [Cout, Cin, kh, kw]
    /// * `b` — [Cout]
    pub fn conv2d(&self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let xs = vx.shape().to_vec();
        let ws = vw.shape().to_vec();
        assert_eq!(xs.len(), 4, "conv2d: input must be NCHW");
        assert_eq!(ws.len(), 4, "conv2d: weight must be [O,I,kh,kw]");
        assert_eq!(xs[1], ws[1], "conv2d: channel mismatch");
        assert_eq!(vb.shape(), [ws[0]], "conv2d: bias length mismatch");
        let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        assert!(
            h + 2 * pad >= kh && wd + 2 * pad >= kw,
            "conv2d: input smaller than kernel"
        );
        let ho = conv_out_side(h, kh, stride, pad);
        let wo = conv_out_side(wd, kw, stride, pad);

        let w_mat = vw
            .view()
            .into_shape_with_order((cout, cin * kh * kw))
            .unwrap();
        let mut out = ArrayD::<f64>::zeros(IxDyn(&[batch, cout, ho, wo]));
        for bi in 0..batch {
            let xi = vx
                .view()
                .into_dimensionality::<ndarray::Ix4>()
                .unwrap()
                .index_axis_move(Axis(0), bi);
            let cols = im2col(xi, kh, kw, stride, pad, ho, wo);
            let prod = w_mat.dot(&cols); // [Cout, Ho*Wo]
            let mut out_b = out
                .view_mut()
                .into_dimensionality::<ndarray::Ix4>()
                .unwrap()
                .index_axis_move(Axis(0), bi);
            for c in 0..cout {
                let bias = vb[[c]];
                for oy in 0..ho {
                    for ox in 0..wo {
                        out_b[[c, oy, ox]] = prod[[c, oy * wo + ox]] + bias;
                    }
                }
            }
        }

        self.nary(&[x, w, b], out, move |ctx, _, g, grads| {
            let vx = &ctx.values[x.0];
            let vw = &ctx.values[w.0];
            let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap();
            let x4 = vx.view().into_dimensionality::<ndarray::Ix4>().unwrap();
            let w_mat = vw
                .view()
                .into_shape_with_order((cout, cin * kh * kw))
                .unwrap();

            if ctx.requires[b.0] {
                let mut gb = ArrayD::<f64>::zeros(IxDyn(&[cout]));
                for c in 0..cout {
                    gb[[c]] = g4.index_axis(Axis(1), c).sum();
                }
                accumulate(grads, ctx.requires, b.0, gb);
            }

            let mut gw_mat = Array2::<f64>::zeros((cout, cin * kh * kw));
            let mut gx = ArrayD::<f64>::zeros(vx.raw_dim());
            for bi in 0..batch {
                let go_b = g4.index_axis(Axis(0), bi);
                let go_mat = go_b.into_shape_with_order((cout, ho * wo)).unwrap();
                if ctx.requires[w.0] {
                    let cols = im2col(x4.index_axis(Axis(0), bi), kh, kw, stride, pad, ho, wo);
                    gw_mat = gw_mat + go_mat.dot(&cols.t());
                }
                if ctx.requires[x.0] {
                    let gcols = w_mat.t().dot(&go_mat);
                    let mut gx_b = gx
                        .view_mut()
                        .into_dimensionality::<ndarray::Ix4>()
                        .unwrap()
                        .index_axis_move(Axis(0), bi);
                    col2im_add(&gcols, &mut gx_b, kh, kw, stride, pad, ho, wo);
                }
            }
            if ctx.requires[w.0] {
                let gw = gw_mat
                    .into_shape_with_order(IxDyn(&[cout, cin, kh, kw]))
                    .unwrap();
                accumulate(grads, ctx.requires, w.0, gw);
            }
            if ctx.requires[x.0] {
                accumulate(grads, ctx.requires, x.0, gx);
            }
        })
    }

    /// Nearest-neighbor 2x spatial upsampling of an NCHW tensor.
    pub fn upsample_nearest_2x(&self, x: Var) -> Var {
        let vx = self.value(x);
        let s = vx.shape().to_vec();
        assert_eq!(s.len(), 4, "upsample: input must be NCHW");
        let (batch, c, h, w) = (s[0], s[1], s[2], s[3]);
        let x4 = vx.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        let out = ndarray::Array4::from_shape_fn((batch, c, 2 * h, 2 * w), |(bi, ci, y, xw)| {
            x4[[bi, ci, y / 2, xw / 2]]
        });
        self.unary(x, out.into_dyn(), move |ctx, _, g, grads| {
            let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap();
            let mut gx = ndarray::Array4::<f64>::zeros((batch, c, h, w));
            for bi in 0..batch {
                for ci in 0..c {
                    for y in 0..2 * h {
                        for xw in 0..2 * w {
                            gx[[bi, ci, y / 2, xw / 2]] += g4[[bi, ci, y, xw]];
                        }
                    }
                }
            }
            accumulate(grads, ctx.requires, x.0, gx.into_dyn());
        })
    }

    /// Global average pooling: [B, C, H, W] -> [B, C].
    pub fn global_avg_pool(&self, x: Var) -> Var {
        let vx = self.value(x);
        let s = vx.shape().to_vec();
        assert_eq!(s.len(), 4, "global_avg_pool: input must be NCHW");
        let (batch, c, h, w) = (s[0], s[1], s[2], s[3]);
        let n = (h * w) as f64;
        let x4 = vx.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        let out = ndarray::Array2::from_shape_fn((batch, c), |(bi, ci)| {
            x4.index_axis(Axis(0), bi).index_axis(Axis(0), ci).sum() / n
        });
        self.unary(x, out.into_dyn(), move |ctx, _, g, grads| {
            let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let mut gx = ndarray::Array4::<f64>::zeros((batch, c, h, w));
            for bi in 0..batch {
                for ci in 0..c {
                    let gv = g2[[bi, ci]] / n;
                    gx.index_axis_mut(Axis(0), bi)
                        .index_axis_mut(Axis(0), ci)
                        .fill(gv);
                }
            }
            accumulate(grads, ctx.requires, x.0, gx.into_dyn());
        })
    }

    fn nary(
        &self,
        parents: &[Var],
        value: ArrayD<f64>,
        back: impl Fn(&super::BackwardCtx, usize, &ArrayD<f64>, &mut Vec<Option<ArrayD<f64>>>) + 'static,
    ) -> Var {
        let req = parents.iter().any(|&p| self.requires(p));
        self.push(value, req, if req { Some(Box::new(back)) } else { None })
    }
}
