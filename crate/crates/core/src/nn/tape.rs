use std::collections::HashMap;

use super::gemm::sgemm;
use super::params::{ParamId, ParamStore};
use super::tensor::{Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Conv {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    Add(Var, Var),
    LeakyRelu(Var, f32),
    Sigmoid(Var),
    Tanh(Var),
    Upsample2(Var),
    Concat(Var, Var),
    Affine(Var, f32),
    Logit(Var, f32),
    L1 {
        x: Var,
        target: Tensor,
    },
    BceLogits {
        x: Var,
        target: f32,
    },
    SoftmaxCe {
        logits: Var,
        classes: usize,
        targets: Vec<u32>,
        weights: Vec<f32>,
    },
    SmoothL1 {
        x: Var,
        target: Tensor,
        weights: Vec<f32>,
        beta: f32,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode autodiff tape. Build a forward pass with the op methods,
/// call [`Tape::backward`] on a scalar, then read parameter gradients with
/// [`Tape::param_grads`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<(u64, usize), Var>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let key = (store.uid(), id.index());
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.params.insert(key, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let out = conv_forward(self.value(x), self.value(w), self.value(b), stride, pad);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(out, Op::Conv { x, w, b, stride, pad }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(x);
        self.push(out, Op::LeakyRelu(x, slope), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f32::tanh);
        let rg = self.rg(x);
        self.push(out, Op::Tanh(x), rg)
    }

    /// Nearest-neighbour 2x spatial upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let s = src.shape();
        let (h2, w2) = (s.h * 2, s.w * 2);
        let mut out = Tensor::zeros(Shape::new(s.c, s.n, h2, w2));
        let sd = src.data();
        let od = out.data_mut();
        for plane in 0..s.c * s.n {
            for y in 0..h2 {
                let srow = (plane * s.h + y / 2) * s.w;
                let orow = (plane * h2 + y) * w2;
                for x2 in 0..w2 {
                    od[orow + x2] = sd[srow + x2 / 2];
                }
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::Upsample2(x), rg)
    }

    /// Channel concatenation `[a; b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        assert_eq!((sa.n, sa.h, sa.w), (sb.n, sb.h, sb.w), "concat shape mismatch");
        let mut data = Vec::with_capacity(sa.numel() + sb.numel());
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let out = Tensor::from_vec(Shape::new(sa.c + sb.c, sa.n, sa.h, sa.w), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Concat(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        self.affine(x, s, 0.0)
    }

    /// `a * x + b` elementwise.
    pub fn affine(&mut self, x: Var, a: f32, b: f32) -> Var {
        let out = self.value(x).map(|v| a * v + b);
        let rg = self.rg(x);
        self.push(out, Op::Affine(x, a), rg)
    }

    /// `ln(p / (1 - p))` with `p` clamped to `[eps, 1 - eps]`; no gradient
    /// flows where the clamp is active.
    pub fn logit(&mut self, x: Var, eps: f32) -> Var {
        let out = self.value(x).map(|v| {
            let p = v.clamp(eps, 1.0 - eps);
            (p / (1.0 - p)).ln()
        });
        let rg = self.rg(x);
        self.push(out, Op::Logit(x, eps), rg)
    }

    /// Mean absolute error against a constant target.
    pub fn l1_loss(&mut self, x: Var, target: &Tensor) -> Var {
        let v = self.value(x);
        assert_eq!(v.shape(), target.shape(), "l1 target shape mismatch");
        let sum: f64 = v
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        let loss = (sum / v.len() as f64) as f32;
        let rg = self.rg(x);
        self.push(
            Tensor::scalar(loss),
            Op::L1 {
                x,
                target: target.clone(),
            },
            rg,
        )
    }

    /// Mean binary cross-entropy of logits against a constant label.
    pub fn bce_with_logits(&mut self, x: Var, target: f32) -> Var {
        let v = self.value(x);
        let sum: f64 = v
            .data()
            .iter()
            .map(|&z| (z.max(0.0) - z * target + (-z.abs()).exp().ln_1p()) as f64)
            .sum();
        let loss = (sum / v.len() as f64) as f32;
        let rg = self.rg(x);
        self.push(Tensor::scalar(loss), Op::BceLogits { x, target }, rg)
    }

    /// Weighted sum of softmax cross-entropy terms.
    ///
    /// `logits` has `anchors * classes` channels, grouped per anchor. Entry
    /// `a * plane + p` of `targets`/`weights` addresses anchor `a` at plane
    /// position `p`.
    pub fn softmax_ce(&mut self, logits: Var, classes: usize, targets: Vec<u32>, weights: Vec<f32>) -> Var {
        let v = self.value(logits);
        let s = v.shape();
        assert_eq!(s.c % classes, 0);
        let anchors = s.c / classes;
        let plane = s.plane();
        assert_eq!(targets.len(), anchors * plane);
        assert_eq!(weights.len(), anchors * plane);
        let d = v.data();
        let mut total = 0.0f64;
        for a in 0..anchors {
            for p in 0..plane {
                let w = weights[a * plane + p];
                if w == 0.0 {
                    continue;
                }
                let at = |c: usize| d[(a * classes + c) * plane + p];
                let max = (0..classes).map(at).fold(f32::NEG_INFINITY, f32::max);
                let lse = max + (0..classes).map(|c| (at(c) - max).exp()).sum::<f32>().ln();
                let t = targets[a * plane + p] as usize;
                total += (w * (lse - at(t))) as f64;
            }
        }
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(total as f32),
            Op::SoftmaxCe {
                logits,
                classes,
                targets,
                weights,
            },
            rg,
        )
    }

    /// Weighted sum of smooth-L1 (Huber) terms against a constant target.
    pub fn smooth_l1(&mut self, x: Var, target: Tensor, weights: Vec<f32>, beta: f32) -> Var {
        let v = self.value(x);
        assert_eq!(v.shape(), target.shape());
        assert_eq!(weights.len(), v.len());
        let mut total = 0.0f64;
        for ((&a, &t), &w) in v.data().iter().zip(target.data()).zip(&weights) {
            if w == 0.0 {
                continue;
            }
            let d = (a - t).abs();
            let l = if d < beta { 0.5 * d * d / beta } else { d - 0.5 * beta };
            total += (w * l) as f64;
        }
        let rg = self.rg(x);
        self.push(
            Tensor::scalar(total as f32),
            Op::SmoothL1 {
                x,
                target,
                weights,
                beta,
            },
            rg,
        )
    }

    /// Runs reverse accumulation from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Param) {
                grads[i] = Some(g);
            }
        }
        self.grads = grads;
    }

    /// Gradients for every parameter of `store`, zero for parameters that
    /// did not take part in the recorded computation.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        for (&(uid, index), &v) in &self.params {
            if uid != store.uid() {
                continue;
            }
            if let Some(Some(g)) = self.grads.get(v.0) {
                out[index].add_assign(g);
            }
        }
        out
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Conv { x, w, b, stride, pad } => {
                let (dx, dw, db) = conv_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    *stride,
                    *pad,
                    self.rg(*x),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, dw);
                self.accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                let data = g
                    .data()
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| if v > 0.0 { gv } else { gv * slope })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), data));
            }
            Op::Sigmoid(x) => {
                let data = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| gv * y * (1.0 - y))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), data));
            }
            Op::Tanh(x) => {
                let data = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| gv * (1.0 - y * y))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), data));
            }
            Op::Upsample2(x) => {
                let s = self.value(*x).shape();
                let (h2, w2) = (s.h * 2, s.w * 2);
                let mut dx = Tensor::zeros(s);
                let gd = g.data();
                let dd = dx.data_mut();
                for plane in 0..s.c * s.n {
                    for y in 0..h2 {
                        let srow = (plane * s.h + y / 2) * s.w;
                        let grow = (plane * h2 + y) * w2;
                        for x2 in 0..w2 {
                            dd[srow + x2 / 2] += gd[grow + x2];
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Concat(a, b) => {
                let sa = self.value(*a).shape();
                let sb = self.value(*b).shape();
                let split = sa.numel();
                self.accumulate(grads, *a, Tensor::from_vec(sa, g.data()[..split].to_vec()));
                self.accumulate(grads, *b, Tensor::from_vec(sb, g.data()[split..].to_vec()));
            }
            Op::Affine(x, a) => {
                self.accumulate(grads, *x, g.map(|v| v * a));
            }
            Op::Logit(x, eps) => {
                let data = g
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gv, &v)| if v > *eps && v < 1.0 - eps { gv / (v * (1.0 - v)) } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), data));
            }
            Op::L1 { x, target } => {
                let v = self.value(*x);
                let scale = g.item() / v.len() as f32;
                let data = v
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&a, &t)| {
                        let d = a - t;
                        if d > 0.0 {
                            scale
                        } else if d < 0.0 {
                            -scale
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(v.shape(), data));
            }
            Op::BceLogits { x, target } => {
                let v = self.value(*x);
                let scale = g.item() / v.len() as f32;
                self.accumulate(grads, *x, v.map(|z| scale * (sigmoid(z) - target)));
            }
            Op::SoftmaxCe {
                logits,
                classes,
                targets,
                weights,
            } => {
                let v = self.value(*logits);
                let s = v.shape();
                let plane = s.plane();
                let anchors = s.c / classes;
                let d = v.data();
                let mut dx = Tensor::zeros(s);
                let gscale = g.item();
                let dd = dx.data_mut();
                let mut probs = vec![0.0f32; *classes];
                for a in 0..anchors {
                    for p in 0..plane {
                        let w = weights[a * plane + p];
                        if w == 0.0 {
                            continue;
                        }
                        let mut max = f32::NEG_INFINITY;
                        for (c, pr) in probs.iter_mut().enumerate() {
                            *pr = d[(a * classes + c) * plane + p];
                            max = max.max(*pr);
                        }
                        let mut sum = 0.0;
                        for pr in probs.iter_mut() {
                            *pr = (*pr - max).exp();
                            sum += *pr;
                        }
                        let t = targets[a * plane + p] as usize;
                        for (c, pr) in probs.iter().enumerate() {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            dd[(a * classes + c) * plane + p] += gscale * w * (pr / sum - onehot);
                        }
                    }
                }
                self.accumulate(grads, *logits, dx);
            }
            Op::SmoothL1 {
                x,
                target,
                weights,
                beta,
            } => {
                let v = self.value(*x);
                let gscale = g.item();
                let data = v
                    .data()
                    .iter()
                    .zip(target.data())
                    .zip(weights)
                    .map(|((&a, &t), &w)| {
                        let d = a - t;
                        let dl = if d.abs() < *beta { d / beta } else { d.signum() };
                        gscale * w * dl
                    })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(v.shape(), data));
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(input + 2 * pad >= k, "conv kernel larger than padded input");
    (input + 2 * pad - k) / stride + 1
}

fn im2col(x: &Tensor, k: usize, stride: usize, pad: usize, ho: usize, wo: usize) -> Vec<f32> {
    let s = x.shape();
    let m = s.n * ho * wo;
    let mut cols = vec![0.0f32; s.c * k * k * m];
    let xd = x.data();
    for ci in 0..s.c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * m..(row + 1) * m];
                for n in 0..s.n {
                    let src = (ci * s.n + n) * s.h * s.w;
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        let srow = &xd[src + iy as usize * s.w..src + (iy as usize + 1) * s.w];
                        let drow = &mut dst[(n * ho + oy) * wo..(n * ho + oy + 1) * wo];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && (ix as usize) < s.w {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f32], s: Shape, k: usize, stride: usize, pad: usize, ho: usize, wo: usize) -> Tensor {
    let m = s.n * ho * wo;
    let mut x = Tensor::zeros(s);
    let xd = x.data_mut();
    for ci in 0..s.c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * m..(row + 1) * m];
                for n in 0..s.n {
                    let dst = (ci * s.n + n) * s.h * s.w;
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        let base = dst + iy as usize * s.w;
                        let srow = &src[(n * ho + oy) * wo..(n * ho + oy + 1) * wo];
                        for (ox, &v) in srow.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && (ix as usize) < s.w {
                                xd[base + ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Zero-padded 2-d convolution. `w` is `[out, in, k, k]` stored in a
/// [`Shape`] as `(c=out, n=in, h=k, w=k)`; `b` has `out` channels.
pub fn conv_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let xs = x.shape();
    let ws = w.shape();
    assert_eq!(xs.c, ws.n, "conv input channels do not match weight");
    assert_eq!(ws.h, ws.w, "square kernels only");
    let k = ws.h;
    let ho = out_dim(xs.h, k, stride, pad);
    let wo = out_dim(xs.w, k, stride, pad);
    let m = xs.n * ho * wo;
    let kdim = xs.c * k * k;
    let cols = im2col(x, k, stride, pad, ho, wo);
    let mut out = Tensor::zeros(Shape::new(ws.c, xs.n, ho, wo));
    sgemm(ws.c, kdim, m, w.data(), false, &cols, false, out.data_mut(), 0.0);
    let od = out.data_mut();
    for (co, &bias) in b.data().iter().enumerate() {
        for v in &mut od[co * m..(co + 1) * m] {
            *v += bias;
        }
    }
    out
}

fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    g: &Tensor,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let xs = x.shape();
    let ws = w.shape();
    let k = ws.h;
    let gs = g.shape();
    let (ho, wo) = (gs.h, gs.w);
    let m = xs.n * ho * wo;
    let kdim = xs.c * k * k;
    let cols = im2col(x, k, stride, pad, ho, wo);
    let mut dw = Tensor::zeros(ws);
    sgemm(ws.c, m, kdim, g.data(), false, &cols, true, dw.data_mut(), 0.0);
    let mut db = Tensor::zeros(Shape::new(ws.c, 1, 1, 1));
    for (co, d) in db.data_mut().iter_mut().enumerate() {
        *d = g.data()[co * m..(co + 1) * m].iter().sum();
    }
    let dx = need_dx.then(|| {
        let mut dcols = vec![0.0f32; kdim * m];
        sgemm(kdim, ws.c, m, w.data(), true, g.data(), false, &mut dcols, 0.0);
        col2im(&dcols, xs, k, stride, pad, ho, wo)
    });
    (dx, dw, db)
}
