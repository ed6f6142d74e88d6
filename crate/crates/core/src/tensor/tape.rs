use std::cell::{Ref, RefCell};
use std::collections::BTreeMap;

use super::kernels::{self, Broadcast, ConvGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Recorded operation. Input fields are node ids on the same tape.
pub(crate) enum Op<T> {
    Leaf,
    Add {
        a: usize,
        b: usize,
        plan: Option<Broadcast>,
    },
    Sub {
        a: usize,
        b: usize,
        plan: Option<Broadcast>,
    },
    Mul {
        a: usize,
        b: usize,
        plan: Option<Broadcast>,
    },
    Scale {
        x: usize,
        c: T,
    },
    AddScalar {
        x: usize,
    },
    MatMul {
        a: usize,
        b: usize,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Permute {
        x: usize,
        map: Vec<usize>,
    },
    Reshape {
        x: usize,
    },
    Narrow {
        x: usize,
        outer: usize,
        axis_len: usize,
        inner: usize,
        start: usize,
        len: usize,
    },
    IndexRows {
        x: usize,
        rows: Vec<usize>,
        row_len: usize,
    },
    Concat {
        parts: Vec<(usize, usize)>,
        outer: usize,
        inner: usize,
        total: usize,
    },
    Softmax {
        x: usize,
        outer: usize,
        axis: usize,
        inner: usize,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    BceWithLogits {
        z: usize,
        targets: Vec<T>,
        lo: T,
        hi: T,
    },
    Gelu {
        x: usize,
    },
    Relu {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        cols: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        bias: Option<usize>,
        geom: ConvGeom,
        images: usize,
        c_out: usize,
        cols: Vec<T>,
    },
    MaxPool2 {
        x: usize,
        argmax: Vec<usize>,
    },
    Upsample2 {
        x: usize,
        planes: usize,
        h: usize,
        w: usize,
    },
    Clamp {
        x: usize,
        lo: T,
        hi: T,
    },
    Grl {
        x: usize,
        lambda: T,
    },
}

pub(crate) struct Node<T> {
    pub value: Vec<T>,
    pub shape: Vec<usize>,
    pub requires_grad: bool,
    pub op: Op<T>,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Single-use record of one forward pass.
pub struct Tape<T: Real> {
    inner: RefCell<Inner<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{}, {:?})", self.id, self.shape())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                consumed: false,
            }),
        }
    }

    /// Registers a leaf. Gradients are only reported for leaves with `requires_grad`.
    pub fn leaf(&self, tensor: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let shape = tensor.shape().to_vec();
        self.push(tensor.into_data(), shape, requires_grad, Op::Leaf)
    }

    pub fn param(&self, tensor: Tensor<T>) -> Var<'_, T> {
        self.leaf(tensor, true)
    }

    pub fn constant(&self, tensor: Tensor<T>) -> Var<'_, T> {
        self.leaf(tensor, false)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(
        &self,
        value: Vec<T>,
        shape: Vec<usize>,
        requires_grad: bool,
        op: Op<T>,
    ) -> Var<'_, T> {
        let mut inner = self.inner.borrow_mut();
        assert!(!inner.consumed, "tape already consumed by backward");
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        inner.nodes.push(Node {
            value,
            shape,
            requires_grad,
            op,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node<T>>> {
        let inner = self.inner.borrow();
        assert!(!inner.consumed, "tape already consumed by backward");
        Ref::map(inner, |i| &i.nodes)
    }

    /// Reverse-mode sweep from a scalar loss. Consumes the tape.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss belongs to a different tape".into()));
        }
        let nodes = {
            let mut inner = self.inner.borrow_mut();
            if inner.consumed {
                return Err(Error::Contract("tape already consumed".into()));
            }
            let node = &inner.nodes[loss.id];
            if node.value.len() != 1 {
                return Err(Error::Contract(format!(
                    "backward needs a scalar loss, got shape {:?}",
                    node.shape
                )));
            }
            if !node.requires_grad {
                return Err(Error::Contract(
                    "loss is detached from every trainable leaf".into(),
                ));
            }
            inner.consumed = true;
            std::mem::take(&mut inner.nodes)
        };

        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.id + 1);
        grads.resize_with(loss.id + 1, || None);
        grads[loss.id] = Some(vec![T::one()]);
        let mut out = BTreeMap::new();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Op::Leaf = node.op {
                out.insert(
                    id,
                    Tensor::new(&node.shape, g).expect("gradient shape matches leaf"),
                );
                continue;
            }
            backward_op(node, &g, &nodes, &mut grads);
        }
        Ok(Gradients { by_id: out })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients<T> {
    by_id: BTreeMap<usize, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.by_id.get(&var.id)
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.by_id.remove(&var.id)
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes()[self.id].value.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes()[self.id].requires_grad
    }

    pub fn value(&self) -> Ref<'t, [T]> {
        let id = self.id;
        Ref::map(self.tape.nodes(), move |n| n[id].value.as_slice())
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        let nodes = self.tape.nodes();
        let n = &nodes[self.id];
        Tensor::new(&n.shape, n.value.clone()).expect("recorded shape is valid")
    }

    /// Copies the value onto the tape as a constant, cutting gradient flow.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant(self.to_tensor())
    }

    pub fn item(&self) -> T {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a non-scalar");
        v[0]
    }
}

fn slot<'g, T: Real>(
    grads: &'g mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    id: usize,
) -> Option<&'g mut [T]> {
    let node = &nodes[id];
    if !node.requires_grad {
        return None;
    }
    Some(
        grads[id]
            .get_or_insert_with(|| vec![T::zero(); node.value.len()])
            .as_mut_slice(),
    )
}

/// Accumulates `sign * g` into `dst`, following the broadcast plan if present.
fn reduce_into<T: Real>(dst: &mut [T], g: &[T], plan: &Option<Broadcast>, is_a: bool, sign: T) {
    match plan {
        None => {
            for (d, &gi) in dst.iter_mut().zip(g) {
                *d += sign * gi;
            }
        }
        Some(p) => p.for_each(|o, ia, ib| {
            let i = if is_a { ia } else { ib };
            dst[i] += sign * g[o];
        }),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::lit(3.0) * a * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn backward_op<T: Real>(node: &Node<T>, g: &[T], nodes: &[Node<T>], grads: &mut [Option<Vec<T>>]) {
    let val = |id: usize| nodes[id].value.as_slice();
    match &node.op {
        Op::Leaf => {}
        Op::Add { a, b, plan } => {
            if let Some(d) = slot(grads, nodes, *a) {
                reduce_into(d, g, plan, true, T::one());
            }
            if let Some(d) = slot(grads, nodes, *b) {
                reduce_into(d, g, plan, false, T::one());
            }
        }
        Op::Sub { a, b, plan } => {
            if let Some(d) = slot(grads, nodes, *a) {
                reduce_into(d, g, plan, true, T::one());
            }
            if let Some(d) = slot(grads, nodes, *b) {
                reduce_into(d, g, plan, false, -T::one());
            }
        }
        Op::Mul { a, b, plan } => {
            let (av, bv) = (val(*a), val(*b));
            if let Some(d) = slot(grads, nodes, *a) {
                match plan {
                    None => {
                        for i in 0..g.len() {
                            d[i] += g[i] * bv[i];
                        }
                    }
                    Some(p) => p.for_each(|o, ia, ib| d[ia] += g[o] * bv[ib]),
                }
            }
            if let Some(d) = slot(grads, nodes, *b) {
                match plan {
                    None => {
                        for i in 0..g.len() {
                            d[i] += g[i] * av[i];
                        }
                    }
                    Some(p) => p.for_each(|o, ia, ib| d[ib] += g[o] * av[ia]),
                }
            }
        }
        Op::Scale { x, c } => {
            if let Some(d) = slot(grads, nodes, *x) {
                for (di, &gi) in d.iter_mut().zip(g) {
                    *di += *c * gi;
                }
            }
        }
        Op::AddScalar { x } | Op::Reshape { x } => {
            if let Some(d) = slot(grads, nodes, *x) {
                for (di, &gi) in d.iter_mut().zip(g) {
                    *di += gi;
                }
            }
        }
        Op::Grl { x, lambda } => {
            if let Some(d) = slot(grads, nodes, *x) {
                for (di, &gi) in d.iter_mut().zip(g) {
                    *di += -(*lambda * gi);
                }
            }
        }
        Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            trans_b,
        } => {
            let (m, k, n) = (*m, *k, *n);
            let shared_b = nodes[*b].value.len() == k * n && *batch == 1;
            let (av, bv) = (val(*a), val(*b));
            if let Some(d) = slot(grads, nodes, *a) {
                for bi in 0..*batch {
                    let gs = &g[bi * m * n..(bi + 1) * m * n];
                    let bs = if shared_b { bv } else { &bv[bi * k * n..(bi + 1) * k * n] };
                    let ds = &mut d[bi * m * k..(bi + 1) * m * k];
                    if *trans_b {
                        kernels::gemm_nn(m, n, k, gs, bs, ds);
                    } else {
                        kernels::gemm_nt(m, n, k, gs, bs, ds);
                    }
                }
            }
            if let Some(d) = slot(grads, nodes, *b) {
                for bi in 0..*batch {
                    let gs = &g[bi * m * n..(bi + 1) * m * n];
                    let as_ = &av[bi * m * k..(bi + 1) * m * k];
                    let ds = &mut d[bi * k * n..(bi + 1) * k * n];
                    if *trans_b {
                        kernels::gemm_tn(n, m, k, gs, as_, ds);
                    } else {
                        kernels::gemm_tn(k, m, n, as_, gs, ds);
                    }
                }
            }
        }
        Op::Permute { x, map } => {
            if let Some(d) = slot(grads, nodes, *x) {
                for (o, &src) in map.iter().enumerate() {
                    d[src] += g[o];
                }
            }
        }
        Op::Narrow {
            x,
            outer,
            axis_len,
            inner,
            start,
            len,
        } => {
            if let Some(d) = slot(grads, nodes, *x) {
                let chunk = len * inner;
                for o in 0..*outer {
                    let src = &g[o * chunk..(o + 1) * chunk];
                    let off = (o * axis_len + start) * inner;
                    for (di, &gi) in d[off..off + chunk].iter_mut().zip(src) {
                        *di += gi;
                    }
                }
            }
        }
        Op::IndexRows { x, rows, row_len } => {
            if let Some(d) = slot(grads, nodes, *x) {
                for (o, &r) in rows.iter().enumerate() {
                    let src = &g[o * row_len..(o + 1) * row_len];
                    for (di, &gi) in d[r * row_len..(r + 1) * row_len].iter_mut().zip(src) {
                        *di += gi;
                    }
                }
            }
        }
        Op::Concat {
            parts,
            outer,
            inner,
            total,
        } => {
            let mut offset = 0;
            for &(id, len) in parts {
                if let Some(d) = slot(grads, nodes, id) {
                    let chunk = len * inner;
                    for o in 0..*outer {
                        let src = &g[(o * total + offset) * inner..][..chunk];
                        for (di, &gi) in d[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                            *di += gi;
                        }
                    }
                }
                offset += len;
            }
        }
        Op::Softmax {
            x,
            outer,
            axis,
            inner,
        } => {
            let y = &node.value;
            if let Some(d) = slot(grads, nodes, *x) {
                for o in 0..*outer {
                    for i in 0..*inner {
                        let base = o * axis * inner + i;
                        let mut s = T::zero();
                        for a in 0..*axis {
                            let j = base + a * inner;
                            s += g[j] * y[j];
                        }
                        for a in 0..*axis {
                            let j = base + a * inner;
                            d[j] += y[j] * (g[j] - s);
                        }
                    }
                }
            }
        }
        Op::CrossEntropy {
            logits,
            labels,
            probs,
        } => {
            if let Some(d) = slot(grads, nodes, *logits) {
                let rows = labels.len();
                let k = probs.len() / rows;
                let scale = g[0] / T::lit(rows as f64);
                for (r, &label) in labels.iter().enumerate() {
                    for c in 0..k {
                        let onehot = if c == label { T::one() } else { T::zero() };
                        d[r * k + c] += scale * (probs[r * k + c] - onehot);
                    }
                }
            }
        }
        Op::BceWithLogits { z, targets, lo, hi } => {
            let zv = val(*z);
            if let Some(d) = slot(grads, nodes, *z) {
                let scale = g[0] / T::lit(targets.len() as f64);
                for i in 0..targets.len() {
                    if zv[i] > *lo && zv[i] < *hi {
                        d[i] += scale * (sigmoid(zv[i]) - targets[i]);
                    }
                }
            }
        }
        Op::Gelu { x } => {
            let xv = val(*x);
            if let Some(d) = slot(grads, nodes, *x) {
                for i in 0..g.len() {
                    d[i] += g[i] * gelu_grad(xv[i]);
                }
            }
        }
        Op::Relu { x } => {
            let xv = val(*x);
            if let Some(d) = slot(grads, nodes, *x) {
                for i in 0..g.len() {
                    if xv[i] > T::zero() {
                        d[i] += g[i];
                    }
                }
            }
        }
        Op::Sigmoid { x } => {
            let y = &node.value;
            if let Some(d) = slot(grads, nodes, *x) {
                for i in 0..g.len() {
                    d[i] += g[i] * y[i] * (T::one() - y[i]);
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            cols,
            xhat,
            rstd,
        } => {
            let cols = *cols;
            let rows = xhat.len() / cols;
            let gam = val(*gamma);
            if let Some(d) = slot(grads, nodes, *gamma) {
                for r in 0..rows {
                    for c in 0..cols {
                        d[c] += g[r * cols + c] * xhat[r * cols + c];
                    }
                }
            }
            if let Some(d) = slot(grads, nodes, *beta) {
                for r in 0..rows {
                    for c in 0..cols {
                        d[c] += g[r * cols + c];
                    }
                }
            }
            if let Some(d) = slot(grads, nodes, *x) {
                let inv_n = T::lit(1.0 / cols as f64);
                let mut dxhat = vec![T::zero(); cols];
                for r in 0..rows {
                    let gr = &g[r * cols..(r + 1) * cols];
                    let xr = &xhat[r * cols..(r + 1) * cols];
                    let mut mean_d = T::zero();
                    let mut mean_dx = T::zero();
                    for c in 0..cols {
                        dxhat[c] = gr[c] * gam[c];
                        mean_d += dxhat[c];
                        mean_dx += dxhat[c] * xr[c];
                    }
                    mean_d *= inv_n;
                    mean_dx *= inv_n;
                    for c in 0..cols {
                        d[r * cols + c] += rstd[r] * (dxhat[c] - mean_d - xr[c] * mean_dx);
                    }
                }
            }
        }
        Op::Sum { x } => {
            if let Some(d) = slot(grads, nodes, *x) {
                for di in d.iter_mut() {
                    *di += g[0];
                }
            }
        }
        Op::Mean { x } => {
            if let Some(d) = slot(grads, nodes, *x) {
                let s = g[0] / T::lit(d.len() as f64);
                for di in d.iter_mut() {
                    *di += s;
                }
            }
        }
        Op::Conv2d {
            x,
            w,
            bias,
            geom,
            images,
            c_out,
            cols,
        } => {
            let (rows_k, ncols) = (geom.col_rows(), geom.col_cols());
            let img_len = geom.channels * geom.height * geom.width;
            if let Some(bid) = bias {
                if let Some(d) = slot(grads, nodes, *bid) {
                    for im in 0..*images {
                        for co in 0..*c_out {
                            let gs = &g[(im * c_out + co) * ncols..][..ncols];
                            d[co] += gs.iter().copied().sum::<T>();
                        }
                    }
                }
            }
            if let Some(d) = slot(grads, nodes, *w) {
                for im in 0..*images {
                    let gs = &g[im * c_out * ncols..(im + 1) * c_out * ncols];
                    let cs = &cols[im * rows_k * ncols..(im + 1) * rows_k * ncols];
                    kernels::gemm_nt(*c_out, ncols, rows_k, gs, cs, d);
                }
            }
            let wv = val(*w);
            if let Some(d) = slot(grads, nodes, *x) {
                let mut dcols = vec![T::zero(); rows_k * ncols];
                for im in 0..*images {
                    dcols.fill(T::zero());
                    let gs = &g[im * c_out * ncols..(im + 1) * c_out * ncols];
                    kernels::gemm_tn(rows_k, *c_out, ncols, wv, gs, &mut dcols);
                    kernels::col2im(geom, &dcols, &mut d[im * img_len..(im + 1) * img_len]);
                }
            }
        }
        Op::MaxPool2 { x, argmax } => {
            if let Some(d) = slot(grads, nodes, *x) {
                for (o, &src) in argmax.iter().enumerate() {
                    d[src] += g[o];
                }
            }
        }
        Op::Upsample2 { x, planes, h, w } => {
            if let Some(d) = slot(grads, nodes, *x) {
                let (oh, ow) = (2 * h, 2 * w);
                for p in 0..*planes {
                    for y in 0..oh {
                        for xx in 0..ow {
                            d[p * h * w + (y / 2) * w + xx / 2] += g[p * oh * ow + y * ow + xx];
                        }
                    }
                }
            }
        }
        Op::Clamp { x, lo, hi } => {
            let xv = val(*x);
            if let Some(d) = slot(grads, nodes, *x) {
                for i in 0..g.len() {
                    if xv[i] > *lo && xv[i] < *hi {
                        d[i] += g[i];
                    }
                }
            }
        }
    }
}
