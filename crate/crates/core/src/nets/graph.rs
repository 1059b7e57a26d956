//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameter leaves are
//! copied in from a [`ParamStore`]; [`Graph::backward`] accumulates their
//! gradients into a [`Gradients`] buffer aligned with the store.

use std::collections::HashMap;

use super::kernels::{self, ConvGeometry};
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{LossError, ShapeError};
use crate::losses;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeometry,
        cols: Vec<f64>,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Softplus {
        x: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    ChannelNormalize {
        x: Var,
        norms: Vec<f64>,
    },
    Correlation {
        a: Var,
        b: Var,
        radius: usize,
    },
    Warp {
        x: Var,
        flow: Var,
    },
    Resize {
        x: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Add {
        a: Var,
        b: Var,
    },
    AttentionPool {
        e: Var,
        h: Var,
        weights: Vec<f64>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    ChannelSum {
        x: Var,
    },
    QuatNormalize {
        x: Var,
        norm: f64,
    },
    RotationLoss {
        q: Var,
        target: [f64; 4],
    },
    TranslationLoss {
        t: Var,
        target: [f64; 3],
    },
    Uncertainty {
        loss: Var,
        w: Var,
    },
    WeightedSum {
        terms: Vec<(Var, f64)>,
    },
    StraightThrough {
        score: Var,
        source: Vec<Option<usize>>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, Var>,
}

fn mismatch(op: &'static str, expected: &[usize], got: &[usize]) -> ShapeError {
    ShapeError::Mismatch {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Discrete state of every non-smooth op in the graph: leaky ReLU input
    /// signs, warp sample cells and the quaternion hemisphere of rotation
    /// losses. Two evaluations with equal patterns lie on the same smooth
    /// piece.
    pub fn activation_pattern(&self) -> Vec<i64> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu { x, .. } => {
                    out.extend(self.value(*x).data().iter().map(|&v| (v > 0.0) as i64));
                }
                Op::Warp { flow, .. } => {
                    out.extend(self.value(*flow).data().iter().map(|&v| v.floor() as i64));
                }
                Op::RotationLoss { q, target } => {
                    let d: f64 = self
                        .value(*q)
                        .data()
                        .iter()
                        .zip(target)
                        .map(|(a, b)| a * b)
                        .sum();
                    out.push((d >= 0.0) as i64);
                }
                _ => {}
            }
        }
        out
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Input leaf that receives a gradient (used by gradient checks on inputs).
    pub fn input_tracked(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id), true);
        self.param_leaves.insert(id, v);
        v
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, ShapeError> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] {
            return Err(mismatch(
                "conv2d",
                &[ws.get(1).copied().unwrap_or(0), 0, 0],
                xs,
            ));
        }
        let geom = ConvGeometry {
            cin: xs[0],
            h: xs[1],
            w: xs[2],
            cout: ws[0],
            k: ws[2],
            stride,
            pad,
        };
        if geom.h + 2 * pad < geom.k || geom.w + 2 * pad < geom.k {
            return Err(mismatch("conv2d", &[geom.cin, geom.k, geom.k], xs));
        }
        let (out, cols) = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &geom,
        );
        let (ho, wo) = geom.out_hw();
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let value = Tensor::new(vec![geom.cout, ho, wo], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols: if needs { cols } else { Vec::new() },
            },
            needs,
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let src = self.value(x);
        let data = src
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::LeakyRelu { x, slope }, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src
            .data()
            .iter()
            .map(|&v| v.max(0.0) + (-v.abs()).exp().ln_1p())
            .collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::Softplus { x }, needs)
    }

    /// Concatenates `[C_i, H, W]` tensors along channels.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, ShapeError> {
        let first = self.shape(parts[0]).to_vec();
        let mut channels = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 3 || s[1..] != first[1..] {
                return Err(mismatch("concat", &first, s));
            }
            channels += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![channels, first[1], first[2]], data)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    pub fn channel_normalize(&mut self, x: Var, eps: f64) -> Var {
        let (c, h, w) = self.value(x).chw();
        let (y, norms) = kernels::channel_normalize(self.value(x).data(), c, h * w, eps);
        let needs = self.needs(x);
        let value = Tensor::new(vec![c, h, w], y).expect("same shape");
        self.push(value, Op::ChannelNormalize { x, norms }, needs)
    }

    pub fn correlation(&mut self, a: Var, b: Var, radius: usize) -> Result<Var, ShapeError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("correlation", self.shape(a), self.shape(b)));
        }
        let (c, h, w) = self.value(a).chw();
        let out = kernels::correlation_forward(
            self.value(a).data(),
            self.value(b).data(),
            c,
            h,
            w,
            radius,
        );
        let value = Tensor::new(vec![kernels::correlation_channels(radius), h, w], out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Correlation { a, b, radius }, needs))
    }

    pub fn warp(&mut self, x: Var, flow: Var) -> Result<Var, ShapeError> {
        let (c, h, w) = self.value(x).chw();
        if self.shape(flow) != [2, h, w] {
            return Err(mismatch("warp", &[2, h, w], self.shape(flow)));
        }
        let out = kernels::warp_forward(self.value(x).data(), self.value(flow).data(), c, h, w);
        let value = Tensor::new(vec![c, h, w], out)?;
        let needs = self.needs(x) || self.needs(flow);
        Ok(self.push(value, Op::Warp { x, flow }, needs))
    }

    /// Bilinear resize of a `[C, H, W]` tensor to `(ho, wo)`.
    pub fn resize(&mut self, x: Var, ho: usize, wo: usize) -> Var {
        let (c, h, w) = self.value(x).chw();
        let out = kernels::resize_forward(self.value(x).data(), c, h, w, ho, wo);
        let value = Tensor::new(vec![c, ho, wo], out).expect("sized by resize");
        let needs = self.needs(x);
        self.push(value, Op::Resize { x }, needs)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut value = self.value(x).clone();
        value.scale(factor);
        let needs = self.needs(x);
        self.push(value, Op::Scale { x, factor }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("add", self.shape(a), self.shape(b)));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    /// Spatial-attention pooling: `V_c = Σ_ij e[c,i,j] · softmax_ij(h[c])[i,j]`.
    pub fn attention_pool(&mut self, e: Var, h: Var) -> Result<Var, ShapeError> {
        if self.shape(e) != self.shape(h) {
            return Err(mismatch("attention_pool", self.shape(h), self.shape(e)));
        }
        let (c, hh, ww) = self.value(h).chw();
        let hw = hh * ww;
        let weights = kernels::spatial_softmax(self.value(h).data(), c, hw);
        let ev = self.value(e).data();
        let pooled = (0..c)
            .map(|ch| {
                ev[ch * hw..(ch + 1) * hw]
                    .iter()
                    .zip(&weights[ch * hw..(ch + 1) * hw])
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let value = Tensor::new(vec![c], pooled)?;
        let needs = self.needs(e) || self.needs(h);
        Ok(self.push(value, Op::AttentionPool { e, h, weights }, needs))
    }

    /// `y = W x + b` with `W: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, ShapeError> {
        let ws = self.shape(w).to_vec();
        let n = self.value(x).len();
        if ws.len() != 2 || ws[1] != n {
            return Err(mismatch("linear", &[ws[0], n], &ws));
        }
        let wv = self.value(w).data();
        let xv = self.value(x).data();
        let bv = self.value(b).data();
        let out = (0..ws[0])
            .map(|r| {
                bv[r]
                    + wv[r * n..(r + 1) * n]
                        .iter()
                        .zip(xv)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        let value = Tensor::new(vec![ws[0]], out)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(value, Op::Linear { x, w, b }, needs))
    }

    /// Sums a `[C, H, W]` tensor over channels into `[1, H, W]`.
    pub fn channel_sum(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let src = self.value(x).data();
        let mut out = vec![0.0; h * w];
        for ch in 0..c {
            for (o, v) in out.iter_mut().zip(&src[ch * h * w..(ch + 1) * h * w]) {
                *o += v;
            }
        }
        let value = Tensor::new(vec![1, h, w], out).expect("sized");
        let needs = self.needs(x);
        self.push(value, Op::ChannelSum { x }, needs)
    }

    pub fn quat_normalize(&mut self, x: Var) -> Result<Var, ShapeError> {
        if self.shape(x) != [4] {
            return Err(mismatch("quat_normalize", &[4], self.shape(x)));
        }
        let src = self.value(x).data();
        let norm = src.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let value = Tensor::new(vec![4], src.iter().map(|v| v / norm).collect())?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::QuatNormalize { x, norm }, needs))
    }

    pub fn rotation_loss(&mut self, q: Var, target: [f64; 4]) -> Result<Var, LossError> {
        let qv: [f64; 4] = self.value(q).data().try_into().expect("quaternion node");
        let l = losses::rotation_loss(&qv, &target)?;
        let needs = self.needs(q);
        Ok(self.push(Tensor::scalar(l), Op::RotationLoss { q, target }, needs))
    }

    pub fn translation_loss(&mut self, t: Var, target: [f64; 3]) -> Var {
        let tv: [f64; 3] = self.value(t).data().try_into().expect("translation node");
        let l = losses::translation_loss(&tv, &target);
        let needs = self.needs(t);
        self.push(Tensor::scalar(l), Op::TranslationLoss { t, target }, needs)
    }

    /// `e^{-w}·loss + w` for scalar nodes.
    pub fn uncertainty(&mut self, loss: Var, w: Var) -> Var {
        let l = self.value(loss).item();
        let wv = self.value(w).item();
        let needs = self.needs(loss) || self.needs(w);
        self.push(
            Tensor::scalar((-wv).exp() * l + wv),
            Op::Uncertainty { loss, w },
            needs,
        )
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let s = terms.iter().map(|&(v, k)| k * self.value(v).item()).sum();
        let needs = terms.iter().any(|&(v, _)| self.needs(v));
        self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
            needs,
        )
    }

    /// Straight-through selection: the forward value is `values` unchanged,
    /// while the backward pass routes `∂L/∂out[p] · values[p]` into
    /// `score[source[p]]`, as if `out = values · (1 + s - stopgrad(s))`.
    pub fn straight_through(
        &mut self,
        values: Tensor,
        score: Var,
        source: Vec<Option<usize>>,
    ) -> Result<Var, ShapeError> {
        if source.len() != values.len() {
            return Err(mismatch(
                "straight_through",
                &[values.len()],
                &[source.len()],
            ));
        }
        let n = self.value(score).len();
        if source.iter().flatten().any(|&s| s >= n) {
            return Err(mismatch("straight_through", &[n], self.shape(score)));
        }
        let needs = self.needs(score);
        Ok(self.push(values, Op::StraightThrough { score, source }, needs))
    }

    /// Backpropagates from scalar `root`, accumulating parameter gradients
    /// into `grads`. Returns the gradients of tracked input leaves.
    pub fn backward(&self, root: Var, grads: &mut Gradients) -> HashMap<Var, Tensor> {
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut seed = Tensor::zeros(self.shape(root));
        seed.fill(1.0);
        adj[root.0] = Some(seed);
        let mut inputs = HashMap::new();

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let mut send = |v: Var, t: Tensor| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut adj[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            let gd = g.data();
            match &node.op {
                Op::Input => {
                    inputs.insert(Var(idx), g);
                }
                Op::Param(id) => grads.accumulate(*id, &g),
                Op::Conv2d {
                    x,
                    w,
                    b,
                    geom,
                    cols,
                } => {
                    let mut dw = Tensor::zeros(self.shape(*w));
                    let mut db = Tensor::zeros(self.shape(*b));
                    let dx = kernels::conv2d_backward(
                        gd,
                        self.value(*w).data(),
                        cols,
                        geom,
                        dw.data_mut(),
                        db.data_mut(),
                        self.needs(*x),
                    );
                    send(*w, dw);
                    send(*b, db);
                    if let Some(dx) = dx {
                        send(
                            *x,
                            Tensor::new(self.shape(*x).to_vec(), dx).expect("x shape"),
                        );
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = self.value(*x).data();
                    let d = gd
                        .iter()
                        .zip(xv)
                        .map(|(g, &v)| if v > 0.0 { *g } else { slope * g })
                        .collect();
                    send(*x, Tensor::new(g.shape().to_vec(), d).expect("same"));
                }
                Op::Softplus { x } => {
                    let xv = self.value(*x).data();
                    let d = gd
                        .iter()
                        .zip(xv)
                        .map(|(g, &v)| g / (1.0 + (-v).exp()))
                        .collect();
                    send(*x, Tensor::new(g.shape().to_vec(), d).expect("same"));
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        let piece = gd[offset..offset + n].to_vec();
                        offset += n;
                        send(p, Tensor::new(self.shape(p).to_vec(), piece).expect("part"));
                    }
                }
                Op::ChannelNormalize { x, norms } => {
                    let (c, _, _) = node.value.chw();
                    let dx = kernels::channel_normalize_backward(gd, node.value.data(), norms, c);
                    send(*x, Tensor::new(g.shape().to_vec(), dx).expect("same"));
                }
                Op::Correlation { a, b, radius } => {
                    let (c, h, w) = self.value(*a).chw();
                    let (da, db) = kernels::correlation_backward(
                        gd,
                        self.value(*a).data(),
                        self.value(*b).data(),
                        c,
                        h,
                        w,
                        *radius,
                    );
                    send(*a, Tensor::new(vec![c, h, w], da).expect("a"));
                    send(*b, Tensor::new(vec![c, h, w], db).expect("b"));
                }
                Op::Warp { x, flow } => {
                    let (c, h, w) = self.value(*x).chw();
                    let (dx, df) = kernels::warp_backward(
                        gd,
                        self.value(*x).data(),
                        self.value(*flow).data(),
                        c,
                        h,
                        w,
                    );
                    send(*x, Tensor::new(vec![c, h, w], dx).expect("x"));
                    send(*flow, Tensor::new(vec![2, h, w], df).expect("flow"));
                }
                Op::Resize { x } => {
                    let (c, h, w) = self.value(*x).chw();
                    let (_, ho, wo) = node.value.chw();
                    let dx = kernels::resize_backward(gd, c, h, w, ho, wo);
                    send(*x, Tensor::new(vec![c, h, w], dx).expect("x"));
                }
                Op::Scale { x, factor } => {
                    let mut d = g.clone();
                    d.scale(*factor);
                    send(*x, d);
                }
                Op::Add { a, b } => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::AttentionPool { e, h, weights } => {
                    let (c, hh, ww) = self.value(*e).chw();
                    let hw = hh * ww;
                    let ev = self.value(*e).data();
                    let pooled = node.value.data();
                    let mut de = vec![0.0; c * hw];
                    let mut dh = vec![0.0; c * hw];
                    for ch in 0..c {
                        for i in 0..hw {
                            let k = ch * hw + i;
                            de[k] = gd[ch] * weights[k];
                            dh[k] = gd[ch] * weights[k] * (ev[k] - pooled[ch]);
                        }
                    }
                    send(*e, Tensor::new(vec![c, hh, ww], de).expect("e"));
                    send(*h, Tensor::new(vec![c, hh, ww], dh).expect("h"));
                }
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x).data();
                    let wv = self.value(*w).data();
                    let n = xv.len();
                    let m = gd.len();
                    let mut dw = vec![0.0; m * n];
                    let mut dx = vec![0.0; n];
                    for r in 0..m {
                        let gr = gd[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let row = &wv[r * n..(r + 1) * n];
                        for j in 0..n {
                            dw[r * n + j] = gr * xv[j];
                            dx[j] += gr * row[j];
                        }
                    }
                    send(*w, Tensor::new(vec![m, n], dw).expect("w"));
                    send(*b, g.clone());
                    send(*x, Tensor::new(self.shape(*x).to_vec(), dx).expect("x"));
                }
                Op::ChannelSum { x } => {
                    let (c, h, w) = self.value(*x).chw();
                    let mut d = Vec::with_capacity(c * h * w);
                    for _ in 0..c {
                        d.extend_from_slice(gd);
                    }
                    send(*x, Tensor::new(vec![c, h, w], d).expect("x"));
                }
                Op::QuatNormalize { x, norm } => {
                    let y = node.value.data();
                    let dot: f64 = y.iter().zip(gd).map(|(a, b)| a * b).sum();
                    let d = y
                        .iter()
                        .zip(gd)
                        .map(|(yv, gv)| (gv - yv * dot) / norm)
                        .collect();
                    send(*x, Tensor::new(vec![4], d).expect("q"));
                }
                Op::RotationLoss { q, target } => {
                    let qv: [f64; 4] = self.value(*q).data().try_into().expect("q");
                    let d = losses::rotation_loss_grad(&qv, target);
                    send(
                        *q,
                        Tensor::new(vec![4], d.iter().map(|v| v * gd[0]).collect()).expect("q"),
                    );
                }
                Op::TranslationLoss { t, target } => {
                    let tv: [f64; 3] = self.value(*t).data().try_into().expect("t");
                    let d = losses::translation_loss_grad(&tv, target);
                    send(
                        *t,
                        Tensor::new(vec![3], d.iter().map(|v| v * gd[0]).collect()).expect("t"),
                    );
                }
                Op::Uncertainty { loss, w } => {
                    let l = self.value(*loss).item();
                    let wv = self.value(*w).item();
                    let e = (-wv).exp();
                    send(*loss, Tensor::scalar(e * gd[0]));
                    send(
                        *w,
                        Tensor::new(self.shape(*w).to_vec(), vec![(1.0 - e * l) * gd[0]])
                            .expect("w"),
                    );
                }
                Op::WeightedSum { terms } => {
                    for &(v, k) in terms {
                        send(
                            v,
                            Tensor::new(self.shape(v).to_vec(), vec![k * gd[0]]).expect("scalar"),
                        );
                    }
                }
                Op::StraightThrough { score, source } => {
                    let mut ds = Tensor::zeros(self.shape(*score));
                    let vals = node.value.data();
                    for (p, src) in source.iter().enumerate() {
                        if let Some(s) = src {
                            ds.data_mut()[*s] += gd[p] * vals[p];
                        }
                    }
                    send(*score, ds);
                }
            }
        }
        inputs
    }
}
