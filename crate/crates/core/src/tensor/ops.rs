//! Forward constructors for every recorded operation.

use std::ops::{Add, Mul, Neg, Sub};

use super::kernels::{self, Broadcast, ConvGeom};
use super::tape::{gelu, sigmoid, Op};
use super::{Real, Var};
use crate::error::{Error, Result};

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t, T: Real> Var<'t, T> {
    fn check_tape(&self, other: &Var<'t, T>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
    }

    fn rg(&self) -> bool {
        self.requires_grad()
    }

    fn binary(
        self,
        other: Var<'t, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        make: impl FnOnce(usize, usize, Option<Broadcast>) -> Op<T>,
    ) -> Result<Var<'t, T>> {
        self.check_tape(&other);
        let (sa, sb) = (self.shape(), other.shape());
        let rg = self.rg() || other.rg();
        let (value, shape, plan) = {
            let (a, b) = (self.value(), other.value());
            if sa == sb {
                let v: Vec<T> = a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect();
                (v, sa, None)
            } else {
                let plan = Broadcast::new(&sa, &sb).ok_or_else(|| Error::shape(name, &sa, &sb))?;
                let mut v = vec![T::zero(); plan.out.iter().product()];
                plan.for_each(|o, ia, ib| v[o] = f(a[ia], b[ib]));
                (v, plan.out.clone(), Some(plan))
            }
        };
        Ok(self.tape.push(value, shape, rg, make(self.id, other.id, plan)))
    }

    /// Elementwise sum with broadcasting over size-1 axes.
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "add", |a, b| a + b, |a, b, plan| Op::Add { a, b, plan })
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "sub", |a, b| a - b, |a, b, plan| Op::Sub { a, b, plan })
    }

    /// Hadamard product with broadcasting over size-1 axes.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "mul", |a, b| a * b, |a, b, plan| Op::Mul { a, b, plan })
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        let value = self.value().iter().map(|&v| v * c).collect();
        self.tape
            .push(value, self.shape(), self.rg(), Op::Scale { x: self.id, c })
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        let value = self.value().iter().map(|&v| v + c).collect();
        self.tape
            .push(value, self.shape(), self.rg(), Op::AddScalar { x: self.id })
    }

    fn unary(self, f: impl Fn(T) -> T, op: Op<T>) -> Var<'t, T> {
        let value = self.value().iter().map(|&v| f(v)).collect();
        self.tape.push(value, self.shape(), self.rg(), op)
    }

    pub fn gelu(self) -> Var<'t, T> {
        self.unary(gelu, Op::Gelu { x: self.id })
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(|v| v.max(T::zero()), Op::Relu { x: self.id })
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(sigmoid, Op::Sigmoid { x: self.id })
    }

    /// Clamps into `[lo, hi]`; gradient passes only strictly inside the interval.
    pub fn clamp(self, lo: T, hi: T) -> Var<'t, T> {
        self.unary(|v| v.max(lo).min(hi), Op::Clamp { x: self.id, lo, hi })
    }

    /// Gradient reversal: identity forward, `-lambda * upstream` backward.
    pub fn grl(self, lambda: T) -> Var<'t, T> {
        let value = self.value().to_vec();
        self.tape
            .push(value, self.shape(), self.rg(), Op::Grl { x: self.id, lambda })
    }

    pub fn sum(self) -> Var<'t, T> {
        let s = kernels_sum(&self.value());
        self.tape.push(vec![s], vec![1], self.rg(), Op::Sum { x: self.id })
    }

    pub fn mean(self) -> Var<'t, T> {
        let v = self.value();
        let s = kernels_sum(&v) / T::lit(v.len() as f64);
        drop(v);
        self.tape.push(vec![s], vec![1], self.rg(), Op::Mean { x: self.id })
    }

    /// Matrix product. A rank-2 right operand is shared across all leading
    /// axes of `self`; rank-3 operands multiply batch-wise.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_impl(other, false)
    }

    /// `self · otherᵀ` over the last two axes.
    pub fn matmul_t(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(self, other: Var<'t, T>, trans_b: bool) -> Result<Var<'t, T>> {
        self.check_tape(&other);
        let (sa, sb) = (self.shape(), other.shape());
        let err = || Error::shape("matmul", &sa, &sb);
        if sa.len() < 2 {
            return Err(err());
        }
        let (bk, bn) = match sb.len() {
            2 | 3 => {
                let (r, c) = (sb[sb.len() - 2], sb[sb.len() - 1]);
                if trans_b {
                    (c, r)
                } else {
                    (r, c)
                }
            }
            _ => return Err(err()),
        };
        let k = sa[sa.len() - 1];
        if k != bk {
            return Err(err());
        }
        let (batch, m, out_shape) = if sb.len() == 2 {
            let m: usize = sa[..sa.len() - 1].iter().product();
            let mut s = sa[..sa.len() - 1].to_vec();
            s.push(bn);
            (1, m, s)
        } else {
            if sa.len() != 3 || sa[0] != sb[0] {
                return Err(err());
            }
            (sa[0], sa[1], vec![sa[0], sa[1], bn])
        };
        let n = bn;
        let mut value = vec![T::zero(); batch * m * n];
        {
            let (av, bv) = (self.value(), other.value());
            for bi in 0..batch {
                let a_s = &av[bi * m * k..(bi + 1) * m * k];
                let b_s = &bv[bi * k * n..(bi + 1) * k * n];
                let c_s = &mut value[bi * m * n..(bi + 1) * m * n];
                if trans_b {
                    kernels::gemm_nt(m, k, n, a_s, b_s, c_s);
                } else {
                    kernels::gemm_nn(m, k, n, a_s, b_s, c_s);
                }
            }
        }
        let rg = self.rg() || other.rg();
        Ok(self.tape.push(
            value,
            out_shape,
            rg,
            Op::MatMul {
                a: self.id,
                b: other.id,
                batch,
                m,
                k,
                n,
                trans_b,
            },
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let old = self.shape();
        if shape.iter().product::<usize>() != old.iter().product::<usize>() || shape.contains(&0) {
            return Err(Error::shape("reshape", &old, shape));
        }
        let value = self.value().to_vec();
        Ok(self
            .tape
            .push(value, shape.to_vec(), self.rg(), Op::Reshape { x: self.id }))
    }

    pub fn permute(self, perm: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", &shape, perm));
        }
        let map = kernels::permute_index(&shape, perm);
        let value = {
            let v = self.value();
            map.iter().map(|&i| v[i]).collect()
        };
        let out: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        Ok(self
            .tape
            .push(value, out, self.rg(), Op::Permute { x: self.id, map }))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let r = self.shape().len();
        if r < 2 {
            return Err(Error::shape("transpose", &self.shape(), &[]));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 1, r - 2);
        self.permute(&perm)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape("narrow", &shape, &[axis, start, len]));
        }
        let (outer, axis_len, inner) = split_axis(&shape, axis);
        let chunk = len * inner;
        let mut value = Vec::with_capacity(outer * chunk);
        {
            let v = self.value();
            for o in 0..outer {
                let off = (o * axis_len + start) * inner;
                value.extend_from_slice(&v[off..off + chunk]);
            }
        }
        let mut out = shape.clone();
        out[axis] = len;
        Ok(self.tape.push(
            value,
            out,
            self.rg(),
            Op::Narrow {
                x: self.id,
                outer,
                axis_len,
                inner,
                start,
                len,
            },
        ))
    }

    /// Gathers rows along the leading axis.
    pub fn index_rows(self, rows: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let n = shape[0];
        if rows.is_empty() {
            return Err(Error::Contract("index_rows with no rows".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Index { index: bad, bound: n });
        }
        let row_len = self.numel() / n;
        let mut value = Vec::with_capacity(rows.len() * row_len);
        {
            let v = self.value();
            for &r in rows {
                value.extend_from_slice(&v[r * row_len..(r + 1) * row_len]);
            }
        }
        let mut out = shape;
        out[0] = rows.len();
        Ok(self.tape.push(
            value,
            out,
            self.rg(),
            Op::IndexRows {
                x: self.id,
                rows: rows.to_vec(),
                row_len,
            },
        ))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(Error::shape("concat", &base, &[axis]));
        }
        let mut total = 0;
        for p in parts {
            first.check_tape(p);
            let s = p.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &base, &s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut value = Vec::with_capacity(outer * total * inner);
        let mut meta = Vec::with_capacity(parts.len());
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        for o in 0..outer {
            for (p, v) in parts.iter().zip(&values) {
                let len = v.len() / (outer * inner);
                value.extend_from_slice(&v[o * len * inner..(o + 1) * len * inner]);
                if o == 0 {
                    meta.push((p.id, len));
                }
            }
        }
        drop(values);
        let mut out = base;
        out[axis] = total;
        let rg = parts.iter().any(|p| p.rg());
        Ok(first.tape.push(
            value,
            out,
            rg,
            Op::Concat {
                parts: meta,
                outer,
                inner,
                total,
            },
        ))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", &shape, &[axis]));
        }
        let (outer, axis_len, inner) = split_axis(&shape, axis);
        let mut value = self.value().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                let mut mx = T::neg_infinity();
                for a in 0..axis_len {
                    mx = mx.max(value[base + a * inner]);
                }
                let mut s = T::zero();
                for a in 0..axis_len {
                    let e = (value[base + a * inner] - mx).exp();
                    value[base + a * inner] = e;
                    s += e;
                }
                for a in 0..axis_len {
                    value[base + a * inner] /= s;
                }
            }
        }
        Ok(self.tape.push(
            value,
            shape,
            self.rg(),
            Op::Softmax {
                x: self.id,
                outer,
                axis: axis_len,
                inner,
            },
        ))
    }

    /// Mean over rows of `-log softmax(logits)[label]` for `[rows × K]` logits.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::shape("cross_entropy", &shape, &[labels.len()]));
        }
        let k = shape[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index { index: bad, bound: k });
        }
        let mut probs = vec![T::zero(); labels.len() * k];
        let mut total = T::zero();
        {
            let v = self.value();
            for (r, &label) in labels.iter().enumerate() {
                let row = &v[r * k..(r + 1) * k];
                let mx = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
                let s: T = row.iter().map(|&x| (x - mx).exp()).sum();
                let lse = mx + s.ln();
                for c in 0..k {
                    probs[r * k + c] = (row[c] - mx).exp() / s;
                }
                total += lse - row[label];
            }
        }
        let loss = total / T::lit(labels.len() as f64);
        Ok(self.tape.push(
            vec![loss],
            vec![1],
            self.rg(),
            Op::CrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Mean binary cross-entropy of `sigmoid(z)` against `targets`, evaluated in
    /// the stable softplus form. Logits are clamped to `[lo, hi]` first.
    pub fn bce_with_logits(self, targets: &[T], lo: T, hi: T) -> Result<Var<'t, T>> {
        if self.numel() != targets.len() {
            return Err(Error::shape("bce_with_logits", &self.shape(), &[targets.len()]));
        }
        let total = {
            let v = self.value();
            v.iter()
                .zip(targets)
                .map(|(&z, &t)| {
                    let z = z.max(lo).min(hi);
                    softplus(z) - t * z
                })
                .fold(T::zero(), |a, b| a + b)
        };
        let loss = total / T::lit(targets.len() as f64);
        Ok(self.tape.push(
            vec![loss],
            vec![1],
            self.rg(),
            Op::BceWithLogits {
                z: self.id,
                targets: targets.to_vec(),
                lo,
                hi,
            },
        ))
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta` of that length.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let cols = *shape.last().expect("non-empty shape");
        if gamma.numel() != cols || beta.numel() != cols {
            return Err(Error::shape("layer_norm", &shape, &gamma.shape()));
        }
        let rows = self.numel() / cols;
        let mut xhat = vec![T::zero(); rows * cols];
        let mut rstd = vec![T::zero(); rows];
        let mut value = vec![T::zero(); rows * cols];
        {
            let (v, gv, bv) = (self.value(), gamma.value(), beta.value());
            let inv_n = T::lit(1.0 / cols as f64);
            for r in 0..rows {
                let row = &v[r * cols..(r + 1) * cols];
                let mean = row.iter().copied().sum::<T>() * inv_n;
                let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() * inv_n;
                let rs = T::one() / (var + eps).sqrt();
                rstd[r] = rs;
                for c in 0..cols {
                    let xh = (row[c] - mean) * rs;
                    xhat[r * cols + c] = xh;
                    value[r * cols + c] = xh * gv[c] + bv[c];
                }
            }
        }
        let rg = self.rg() || gamma.rg() || beta.rg();
        Ok(self.tape.push(
            value,
            shape,
            rg,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                cols,
                xhat,
                rstd,
            },
        ))
    }

    /// 2-D cross-correlation of `[n × c × h × w]` input with `[c_out × c × kh × kw]` kernel.
    pub fn conv2d(
        self,
        kernel: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t, T>> {
        let (sx, sk) = (self.shape(), kernel.shape());
        if sx.len() != 4 || sk.len() != 4 || sx[1] != sk[1] {
            return Err(Error::shape("conv2d", &sx, &sk));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (c_out, kh, kw) = (sk[0], sk[2], sk[3]);
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        if kh > ph || kw > pw {
            return Err(Error::Config(format!(
                "conv2d kernel {kh}x{kw} exceeds padded input {ph}x{pw}"
            )));
        }
        if (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return Err(Error::Config(format!(
                "conv2d output extent is not integral: ({ph}-{kh})/{stride}, ({pw}-{kw})/{stride}"
            )));
        }
        if let Some(b) = &bias {
            if b.numel() != c_out {
                return Err(Error::shape("conv2d bias", &b.shape(), &[c_out]));
            }
        }
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            pad,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        };
        let (rows_k, ncols) = (geom.col_rows(), geom.col_cols());
        let img_len = c * h * w;
        let mut cols = vec![T::zero(); n * rows_k * ncols];
        let mut value = vec![T::zero(); n * c_out * ncols];
        {
            let (xv, kv) = (self.value(), kernel.value());
            let bv = bias.map(|b| b.value());
            for im in 0..n {
                let cs = &mut cols[im * rows_k * ncols..(im + 1) * rows_k * ncols];
                kernels::im2col(&geom, &xv[im * img_len..(im + 1) * img_len], cs);
                let out = &mut value[im * c_out * ncols..(im + 1) * c_out * ncols];
                if let Some(bv) = &bv {
                    for co in 0..c_out {
                        out[co * ncols..(co + 1) * ncols].fill(bv[co]);
                    }
                }
                kernels::gemm_nn(c_out, rows_k, ncols, &kv, cs, out);
            }
        }
        let rg = self.rg() || kernel.rg() || bias.is_some_and(|b| b.rg());
        // Columns are only needed for the kernel gradient.
        if !kernel.rg() {
            cols = Vec::new();
        }
        Ok(self.tape.push(
            value,
            vec![n, c_out, geom.out_h, geom.out_w],
            rg,
            Op::Conv2d {
                x: self.id,
                w: kernel.id,
                bias: bias.map(|b| b.id),
                geom,
                images: n,
                c_out,
                cols,
            },
        ))
    }

    /// 2×2 max-pool with stride 2 over `[n × c × h × w]`, ties to the first element.
    pub fn max_pool2(self) -> Result<Var<'t, T>> {
        let s = self.shape();
        if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
            return Err(Error::shape("max_pool2", &s, &[2, 2]));
        }
        let planes = s[0] * s[1];
        let (h, w) = (s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let mut value = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        {
            let v = self.value();
            for p in 0..planes {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut best = p * h * w + 2 * y * w + 2 * x;
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let i = p * h * w + (2 * y + dy) * w + 2 * x + dx;
                            if v[i] > v[best] {
                                best = i;
                            }
                        }
                        value.push(v[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        Ok(self.tape.push(
            value,
            vec![s[0], s[1], oh, ow],
            self.rg(),
            Op::MaxPool2 { x: self.id, argmax },
        ))
    }

    /// Nearest-neighbour 2× upsampling over `[n × c × h × w]`.
    pub fn upsample2(self) -> Result<Var<'t, T>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::shape("upsample2", &s, &[4]));
        }
        let planes = s[0] * s[1];
        let (h, w) = (s[2], s[3]);
        let mut value = Vec::with_capacity(planes * 4 * h * w);
        {
            let v = self.value();
            for p in 0..planes {
                for y in 0..2 * h {
                    let row = &v[p * h * w + (y / 2) * w..][..w];
                    for &val in row {
                        value.push(val);
                        value.push(val);
                    }
                }
            }
        }
        Ok(self.tape.push(
            value,
            vec![s[0], s[1], 2 * h, 2 * w],
            self.rg(),
            Op::Upsample2 {
                x: self.id,
                planes,
                h,
                w,
            },
        ))
    }
}

fn kernels_sum<T: Real>(v: &[T]) -> T {
    v.iter().copied().fold(T::zero(), |a, b| a + b)
}

#[inline]
pub(crate) fn softplus<T: Real>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

impl<'t, T: Real> Add for Var<'t, T> {
    type Output = Var<'t, T>;
    fn add(self, rhs: Self) -> Self::Output {
        Var::add(self, rhs).expect("add: incompatible shapes")
    }
}

impl<'t, T: Real> Sub for Var<'t, T> {
    type Output = Var<'t, T>;
    fn sub(self, rhs: Self) -> Self::Output {
        Var::sub(self, rhs).expect("sub: incompatible shapes")
    }
}

impl<'t, T: Real> Mul for Var<'t, T> {
    type Output = Var<'t, T>;
    fn mul(self, rhs: Self) -> Self::Output {
        Var::mul(self, rhs).expect("mul: incompatible shapes")
    }
}

impl<'t, T: Real> Neg for Var<'t, T> {
    type Output = Var<'t, T>;
    fn neg(self) -> Self::Output {
        self.scale(-T::one())
    }
}
